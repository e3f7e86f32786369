#include "mvsde/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mvsde {

namespace {

// Median-split kd-tree over row-major points; enough for d <= 3 and the
// sample sizes used here.
class KdTree {
public:
    KdTree(std::span<const double> pts, std::size_t dim)
        : pts_(pts), d_(dim), n_(pts.size() / dim) {
        idx_.resize(n_);
        std::iota(idx_.begin(), idx_.end(), 0u);
        nodes_.reserve(2 * n_);
        root_ = build(0, n_, 0);
    }

    // squared distance of the k-th nearest neighbour of q, optionally
    // excluding one index (self) from the tree's point set. The heap is
    // caller-owned scratch so queries can run from parallel loops.
    double knn_sq(std::span<const double> q, int k, std::vector<double>& heap,
                  std::ptrdiff_t exclude = -1) const {
        heap.clear();
        search(root_, q, k, exclude, heap);
        return heap.front();  // max of the k kept
    }

private:
    struct Node {
        std::uint32_t begin, end;  // leaf range in idx_
        std::uint32_t left = 0, right = 0;
        double split = 0;
        std::uint8_t axis = 0;
        bool leaf = false;
    };

    std::uint32_t build(std::size_t b, std::size_t e, int depth) {
        Node nd;
        nd.begin = static_cast<std::uint32_t>(b);
        nd.end = static_cast<std::uint32_t>(e);
        const std::uint32_t id = static_cast<std::uint32_t>(nodes_.size());
        nodes_.push_back(nd);
        if (e - b <= 16) {
            nodes_[id].leaf = true;
            return id;
        }
        const std::uint8_t ax = static_cast<std::uint8_t>(depth % d_);
        const std::size_t mid = (b + e) / 2;
        std::nth_element(idx_.begin() + b, idx_.begin() + mid, idx_.begin() + e,
                         [&](std::uint32_t x, std::uint32_t y) {
                             return pts_[x * d_ + ax] < pts_[y * d_ + ax];
                         });
        nodes_[id].axis = ax;
        nodes_[id].split = pts_[idx_[mid] * d_ + ax];
        nodes_[id].left = build(b, mid, depth + 1);
        nodes_[id].right = build(mid, e, depth + 1);
        return id;
    }

    static void consider(double dsq, int k, std::vector<double>& heap) {
        if (heap.size() < static_cast<std::size_t>(k)) {
            heap.push_back(dsq);
            std::push_heap(heap.begin(), heap.end());
        } else if (dsq < heap.front()) {
            std::pop_heap(heap.begin(), heap.end());
            heap.back() = dsq;
            std::push_heap(heap.begin(), heap.end());
        }
    }

    void search(std::uint32_t id, std::span<const double> q, int k, std::ptrdiff_t exclude,
                std::vector<double>& heap) const {
        const Node& nd = nodes_[id];
        if (nd.leaf) {
            for (std::uint32_t t = nd.begin; t < nd.end; ++t) {
                const std::uint32_t i = idx_[t];
                if (static_cast<std::ptrdiff_t>(i) == exclude) continue;
                double s = 0;
                for (std::size_t c = 0; c < d_; ++c) {
                    const double diff = pts_[i * d_ + c] - q[c];
                    s += diff * diff;
                }
                consider(s, k, heap);
            }
            return;
        }
        const double delta = q[nd.axis] - nd.split;
        const std::uint32_t near = delta <= 0 ? nd.left : nd.right;
        const std::uint32_t far = delta <= 0 ? nd.right : nd.left;
        search(near, q, k, exclude, heap);
        if (heap.size() < static_cast<std::size_t>(k) || delta * delta < heap.front())
            search(far, q, k, exclude, heap);
    }

    std::span<const double> pts_;
    std::size_t d_, n_;
    std::vector<std::uint32_t> idx_;
    std::vector<Node> nodes_;
    std::uint32_t root_ = 0;
};

}  // namespace

EntropyEstimate knn_divergence(std::span<const double> samples_p,
                               std::span<const double> samples_q, std::size_t dim, int k_nn) {
    if (dim == 0) fail("InvalidArgument", "dim must be positive");
    const std::size_t n = samples_p.size() / dim;
    const std::size_t m = samples_q.size() / dim;
    if (n < 50 || m < 50) fail("TooFewSamples", "knn divergence needs >= 50 samples per side");
    if (k_nn < 1) fail("InvalidArgument", "k_nn >= 1");

    const KdTree tree_p(samples_p, dim);
    const KdTree tree_q(samples_q, dim);

    std::vector<double> terms(n);
    #pragma omp parallel
    {
        std::vector<double> heap;
        #pragma omp for schedule(static)
        for (std::size_t i = 0; i < n; ++i) {
            std::span<const double> x{samples_p.data() + i * dim, dim};
            const double rho_sq = tree_p.knn_sq(x, k_nn, heap, static_cast<std::ptrdiff_t>(i));
            const double nu_sq = tree_q.knn_sq(x, k_nn, heap);
            // duplicate points give zero distances; clamp to keep logs finite
            const double r = std::max(rho_sq, 1e-300);
            const double v = std::max(nu_sq, 1e-300);
            terms[i] = 0.5 * static_cast<double>(dim) * std::log(v / r);
        }
    }
    const auto ms = mean_stderr(terms);
    EntropyEstimate out;
    out.value = ms.mean + std::log(static_cast<double>(m) / static_cast<double>(n - 1));
    out.stderr_ = ms.stderr_;
    out.n = n;
    return out;
}

GaussianMoments fit_gaussian(std::span<const double> samples, std::size_t dim) {
    const std::size_t n = samples.size() / dim;
    if (n < 2) fail("TooFewSamples", "need >= 2 samples for moments");
    GaussianMoments g;
    g.mean.assign(dim, 0.0);
    g.cov.assign(dim * dim, 0.0);
    for (std::size_t c = 0; c < dim; ++c) {
        std::vector<double> col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = samples[i * dim + c];
        g.mean[c] = pairwise_mean(col);
    }
    for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = a; b < dim; ++b) {
            std::vector<double> prod(n);
            for (std::size_t i = 0; i < n; ++i)
                prod[i] = (samples[i * dim + a] - g.mean[a]) * (samples[i * dim + b] - g.mean[b]);
            const double cab = pairwise_sum(prod) / static_cast<double>(n - 1);
            g.cov[a * dim + b] = cab;
            g.cov[b * dim + a] = cab;
        }
    return g;
}

double gaussian_kl(const GaussianMoments& p, const GaussianMoments& q) {
    const std::size_t d = p.mean.size();
    if (q.mean.size() != d) fail("DimensionMismatch", "gaussian_kl dims differ");

    // KL = 0.5 [ tr(S2^-1 S1) + (m2-m1)' S2^-1 (m2-m1) - d + ln det S2/det S1 ]
    auto log_det_and_solve = [d](std::vector<double> a, const std::vector<double>& rhs_cols,
                                 std::vector<double>& sols) -> double {
        // LU once per column via repeated solves; d <= 3 so cost is irrelevant
        double logdet = 0.0;
        {
            std::vector<double> lu = a;
            // crude determinant via elimination with partial pivoting
            std::vector<std::size_t> piv(d);
            std::iota(piv.begin(), piv.end(), 0u);
            double sign = 1.0;
            for (std::size_t k = 0; k < d; ++k) {
                std::size_t pr = k;
                double best = std::fabs(lu[piv[k] * d + k]);
                for (std::size_t i = k + 1; i < d; ++i)
                    if (std::fabs(lu[piv[i] * d + k]) > best) {
                        best = std::fabs(lu[piv[i] * d + k]);
                        pr = i;
                    }
                if (best < 1e-14) fail("SingularCovariance", "covariance not invertible");
                if (pr != k) { std::swap(piv[k], piv[pr]); sign = -sign; }
                const double pv = lu[piv[k] * d + k];
                logdet += std::log(std::fabs(pv));
                for (std::size_t i = k + 1; i < d; ++i) {
                    const double f = lu[piv[i] * d + k] / pv;
                    for (std::size_t j = k; j < d; ++j) lu[piv[i] * d + j] -= f * lu[piv[k] * d + j];
                }
            }
            if (sign < 0) fail("SingularCovariance", "covariance not positive definite");
        }
        const std::size_t ncols = rhs_cols.size() / d;
        sols = rhs_cols;
        for (std::size_t c = 0; c < ncols; ++c) {
            std::vector<double> acpy = a, col(d);
            for (std::size_t i = 0; i < d; ++i) col[i] = rhs_cols[c * d + i];
            if (!lu_solve(acpy, d, col)) fail("SingularCovariance", "covariance not invertible");
            for (std::size_t i = 0; i < d; ++i) sols[c * d + i] = col[i];
        }
        return logdet;
    };

    // columns: S1 columns then (m2 - m1)
    std::vector<double> rhs((d + 1) * d);
    for (std::size_t c = 0; c < d; ++c)
        for (std::size_t i = 0; i < d; ++i) rhs[c * d + i] = p.cov[i * d + c];
    for (std::size_t i = 0; i < d; ++i) rhs[d * d + i] = q.mean[i] - p.mean[i];
    std::vector<double> sols;
    const double logdet2 = log_det_and_solve(q.cov, rhs, sols);

    double trace = 0.0;
    for (std::size_t c = 0; c < d; ++c) trace += sols[c * d + c];
    double quad = 0.0;
    for (std::size_t i = 0; i < d; ++i) quad += (q.mean[i] - p.mean[i]) * sols[d * d + i];

    double logdet1 = 0.0;
    {
        std::vector<double> dummy;
        std::vector<double> id(d * d, 0.0);
        for (std::size_t i = 0; i < d; ++i) id[i * d + i] = 1.0;
        logdet1 = log_det_and_solve(p.cov, id, dummy);
    }
    return 0.5 * (trace + quad - static_cast<double>(d) + logdet2 - logdet1);
}

}  // namespace mvsde
