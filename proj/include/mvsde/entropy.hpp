#pragma once

#include <cstddef>
#include <vector>

#include "mvsde/common.hpp"

namespace mvsde {

struct EntropyEstimate {
    double value = 0.0;
    double stderr_ = 0.0;  // leave-one-out (jackknife) error of the mean
    std::size_t n = 0;
};

// k-NN divergence estimate of KL(P || Q) from samples (Wang-Kulkarni-Verdu
// style): (d/n) sum_i log(nu_k(i) / rho_k(i)) + log(m/(n-1)), where rho_k is
// the k-th neighbour distance within the P sample (self excluded) and nu_k
// the k-th neighbour distance into the Q sample. Biased at finite n; callers
// set tolerances accordingly.
EntropyEstimate knn_divergence(std::span<const double> samples_p,
                               std::span<const double> samples_q, std::size_t dim,
                               int k_nn = 4);

struct GaussianMoments {
    std::vector<double> mean;
    std::vector<double> cov;  // d x d row-major
};

// Exact KL(N(m1, S1) || N(m2, S2)).
double gaussian_kl(const GaussianMoments& p, const GaussianMoments& q);

GaussianMoments fit_gaussian(std::span<const double> samples, std::size_t dim);

}  // namespace mvsde
