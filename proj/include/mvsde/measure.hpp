#pragma once

#include <cstddef>
#include <vector>

#include "mvsde/common.hpp"

namespace mvsde {

// Weighted particle cloud in R^d. Weights are nonnegative and sum to one
// within 1e-12; coordinates must be finite.
class EmpiricalMeasure {
public:
    EmpiricalMeasure(std::vector<double> points, std::size_t dim,
                     std::vector<double> weights = {});

    static EmpiricalMeasure dirac(const std::vector<double>& x);
    // n copies of equal weight at the given points (row-major n x d).
    static EmpiricalMeasure uniform(std::vector<double> points, std::size_t dim);

    std::size_t size() const { return n_; }
    std::size_t dim() const { return d_; }
    std::span<const double> point(std::size_t i) const {
        return {points_.data() + i * d_, d_};
    }
    const std::vector<double>& points() const { return points_; }
    const std::vector<double>& weights() const { return weights_; }
    double weight(std::size_t i) const { return weights_[i]; }

    // ||mu||_k = (sum_i w_i |x_i|^k)^{1/k}
    double moment_norm(double k) const;

    // mean of a coordinate-wise payoff, deterministic reduction
    template <class F>
    double integrate(F&& f) const {
        std::vector<double> terms(n_);
        for (std::size_t i = 0; i < n_; ++i) terms[i] = weights_[i] * f(point(i));
        return pairwise_sum(terms);
    }

private:
    std::size_t n_ = 0, d_ = 0;
    std::vector<double> points_;   // n x d row-major
    std::vector<double> weights_;  // n, sums to 1
};

double moment_norm(const EmpiricalMeasure& mu, double k);

}  // namespace mvsde
