#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvsde {

// Error carrying a machine-readable code ("NonFinite", "DimensionMismatch", ...).
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& msg)
        : std::runtime_error(code + ": " + msg), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

[[noreturn]] inline void fail(const std::string& code, const std::string& msg) {
    throw Error(code, msg);
}

// Deterministic reduction: fixed pairwise tree keyed by index, independent of
// thread count. All Monte Carlo averages in this project go through here.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double pairwise_mean(std::span<const double> v) {
    if (v.empty()) fail("DegenerateSample", "mean of empty sample");
    return pairwise_sum(v) / static_cast<double>(v.size());
}

struct MeanStderr {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t n = 0;
};

// Sample mean with standard error of the mean (deterministic reduction).
inline MeanStderr mean_stderr(std::span<const double> v) {
    MeanStderr r;
    r.n = v.size();
    if (r.n == 0) fail("DegenerateSample", "empty sample");
    r.mean = pairwise_mean(v);
    if (r.n == 1) return r;
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double d = v[i] - r.mean;
        sq[i] = d * d;
    }
    const double var = pairwise_sum(sq) / static_cast<double>(r.n - 1);
    r.stderr_ = std::sqrt(var / static_cast<double>(r.n));
    return r;
}

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
};

// Least-squares line y = a + b x with the usual standard error of b.
inline SlopeFit fit_slope(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n != y.size() || n < 3) fail("LengthMismatch", "fit_slope needs matched n >= 3");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) { mx += x[i]; my += y[i]; }
    mx /= n; my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    SlopeFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double rss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - f.intercept - f.slope * x[i];
        rss += r * r;
    }
    f.slope_se = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
    return f;
}

struct TrendResult {
    double slope = 0.0;
    double slope_se = 0.0;
    bool increasing = false;  // slope significantly > 0 (one-sided, ~95%)
};

// Monotone-regression style check: regress y on x and flag a significant
// positive slope. Callers pass x = log(1/t) to test "no increase as t drops".
inline TrendResult trend_test(std::span<const double> x, std::span<const double> y) {
    const SlopeFit f = fit_slope(x, y);
    TrendResult t;
    t.slope = f.slope;
    t.slope_se = f.slope_se;
    t.increasing = f.slope > 2.0 * f.slope_se && f.slope > 1e-12;
    return t;
}

inline bool no_increasing_trend_as_t_drops(std::span<const double> t_grid,
                                           std::span<const double> values) {
    std::vector<double> x(t_grid.size());
    for (std::size_t i = 0; i < t_grid.size(); ++i) x[i] = std::log(1.0 / t_grid[i]);
    return !trend_test(x, values).increasing;
}

// ---------------------------------------------------------------------------
// Small dense linear algebra. Coefficient matrices here are d x m with d, m
// of order <= 4; no external dependency is warranted.

using Vec = std::vector<double>;

// Row-major matrix-vector product: (rows x cols) * (cols) -> rows.
inline void matvec(std::span<const double> a, std::size_t rows, std::size_t cols,
                   std::span<const double> x, std::span<double> out) {
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < cols; ++j) s += a[i * cols + j] * x[j];
        out[i] = s;
    }
}

// out = A^T x, A row-major rows x cols, x of length rows.
inline void mat_t_vec(std::span<const double> a, std::size_t rows, std::size_t cols,
                      std::span<const double> x, std::span<double> out) {
    for (std::size_t j = 0; j < cols; ++j) out[j] = 0;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j] += a[i * cols + j] * x[i];
}

// In-place LU solve A x = b for small square A (row-major, overwritten).
// Returns false when a pivot falls below tol (singular).
inline bool lu_solve(std::vector<double>& a, std::size_t n, std::vector<double>& b,
                     double tol = 1e-13) {
    std::vector<std::size_t> piv(n);
    for (std::size_t i = 0; i < n; ++i) piv[i] = i;
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t p = k;
        double best = std::fabs(a[piv[k] * n + k]);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double v = std::fabs(a[piv[i] * n + k]);
            if (v > best) { best = v; p = i; }
        }
        if (best < tol) return false;
        std::swap(piv[k], piv[p]);
        const double pivval = a[piv[k] * n + k];
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = a[piv[i] * n + k] / pivval;
            a[piv[i] * n + k] = 0;
            for (std::size_t j = k + 1; j < n; ++j) a[piv[i] * n + j] -= f * a[piv[k] * n + j];
            b[piv[i]] -= f * b[piv[k]];
        }
    }
    std::vector<double> x(n);
    for (std::size_t ik = n; ik-- > 0;) {
        double s = b[piv[ik]];
        for (std::size_t j = ik + 1; j < n; ++j) s -= a[piv[ik] * n + j] * x[j];
        x[ik] = s / a[piv[ik] * n + ik];
    }
    b = std::move(x);
    return true;
}

inline double norm2(std::span<const double> v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace mvsde
