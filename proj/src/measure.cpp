#include "mvsde/measure.hpp"

#include <cmath>

namespace mvsde {

EmpiricalMeasure::EmpiricalMeasure(std::vector<double> points, std::size_t dim,
                                   std::vector<double> weights) {
    if (dim == 0) fail("InvalidArgument", "dimension must be positive");
    if (points.empty() || points.size() % dim != 0)
        fail("InvalidArgument", "points array size not a multiple of dim");
    n_ = points.size() / dim;
    d_ = dim;
    points_ = std::move(points);
    for (double x : points_)
        if (!std::isfinite(x)) fail("NonFinite", "non-finite particle coordinate");
    if (weights.empty()) {
        weights_.assign(n_, 1.0 / static_cast<double>(n_));
    } else {
        if (weights.size() != n_) fail("LengthMismatch", "weights size != particle count");
        double s = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) fail("InvalidArgument", "negative weight");
            s += w;
        }
        if (std::fabs(s - 1.0) > 1e-12) fail("InvalidArgument", "weights must sum to 1");
        weights_ = std::move(weights);
    }
}

EmpiricalMeasure EmpiricalMeasure::dirac(const std::vector<double>& x) {
    return EmpiricalMeasure(x, x.size());
}

EmpiricalMeasure EmpiricalMeasure::uniform(std::vector<double> points, std::size_t dim) {
    return EmpiricalMeasure(std::move(points), dim);
}

double EmpiricalMeasure::moment_norm(double k) const {
    if (!(k >= 1.0)) fail("InvalidArgument", "moment_norm needs k >= 1");
    std::vector<double> terms(n_);
    for (std::size_t i = 0; i < n_; ++i)
        terms[i] = weights_[i] * std::pow(norm2(point(i)), k);
    return std::pow(pairwise_sum(terms), 1.0 / k);
}

double moment_norm(const EmpiricalMeasure& mu, double k) { return mu.moment_norm(k); }

}  // namespace mvsde
