#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "backlab/data.hpp"
#include "backlab/rng.hpp"
#include "backlab/tensor.hpp"

namespace backlab::toy {

// Nearest-prototype classifier over complementary subspaces: class 0 when
// x^T (A A^T - B B^T) x > 0, class 1 otherwise (boundary points go to
// class 1).
struct ToyClassifier {
    std::size_t n = 2;
    std::size_t d = 1;
    std::vector<double> A;  // n x d, row-major, orthonormal columns
    std::vector<double> B;  // n x (n-d)
};

ToyClassifier make_toy_classifier(std::size_t n, std::size_t d, std::uint64_t seed);
ToyClassifier from_subspace_spec(const data::SubspaceDomainSpec& spec);
void validate(const ToyClassifier& tc);

int prototype_classify(const ToyClassifier& tc, std::span<const double> x);

// Minimal perturbation moving the class-0 sample with latent coordinates c
// onto the decision boundary: v = A(-c/2) + B v_b with |v_b| = |c|/2. The
// default v_b direction is the first column of B; the rng overload draws a
// random direction (the transfer outcome is direction-independent).
Tensor optimal_perturbation(const ToyClassifier& tc, std::span<const double> c);
Tensor optimal_perturbation(const ToyClassifier& tc, std::span<const double> c, Rng& dir_rng);

// c' is in the transferable set of c iff |c' - c/2| <= |c/2|.
bool transfer_condition(std::span<const double> c, std::span<const double> c_prime);

// Closed-form ET for latent dimension 1: 1/2 - G(0) + G(0)^2.
double et_closed_form_d1(double g0);

struct McResult {
    double et_hat = 0.0;
    double std_err = 0.0;
    std::size_t n_pairs = 0;
};

// Monte Carlo ET over i.i.d. latent pairs from dist, evaluating the
// analytic transfer condition.
McResult et_monte_carlo(const ToyClassifier& tc, const data::LatentDist& dist,
                        std::size_t n_pairs, std::uint64_t seed);

}  // namespace backlab::toy
