#include "backlab/toy.hpp"

#include <cmath>
#include <stdexcept>

namespace backlab::toy {

ToyClassifier make_toy_classifier(std::size_t n, std::size_t d, std::uint64_t seed) {
    ToyClassifier tc;
    tc.n = n;
    tc.d = d;
    auto [a, b] = data::orthonormal_pair(n, d, seed);
    tc.A = std::move(a);
    tc.B = std::move(b);
    return tc;
}

ToyClassifier from_subspace_spec(const data::SubspaceDomainSpec& spec) {
    ToyClassifier tc;
    tc.n = spec.n;
    tc.d = spec.d;
    tc.A = spec.A;
    tc.B = spec.B;
    validate(tc);
    return tc;
}

void validate(const ToyClassifier& tc) {
    data::SubspaceDomainSpec spec;
    spec.n = tc.n;
    spec.d = tc.d;
    spec.A = tc.A;
    spec.B = tc.B;
    data::validate(spec);
}

int prototype_classify(const ToyClassifier& tc, std::span<const double> x) {
    if (x.size() != tc.n) throw std::invalid_argument("prototype_classify: dimension mismatch");
    // x^T (A A^T - B B^T) x = |A^T x|^2 - |B^T x|^2.
    double qa = 0.0, qb = 0.0;
    for (std::size_t j = 0; j < tc.d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < tc.n; ++i) s += tc.A[i * tc.d + j] * x[i];
        qa += s * s;
    }
    for (std::size_t j = 0; j < tc.n - tc.d; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < tc.n; ++i) s += tc.B[i * (tc.n - tc.d) + j] * x[i];
        qb += s * s;
    }
    return qa - qb > 0.0 ? 0 : 1;
}

namespace {

Tensor build_perturbation(const ToyClassifier& tc, std::span<const double> c,
                          const std::vector<double>& vb_dir) {
    const double norm_c = l2_norm(c);
    if (norm_c == 0.0)
        throw std::invalid_argument("optimal_perturbation: c must be nonzero (boundary point)");
    Tensor v = Tensor::zeros({tc.n});
    for (std::size_t j = 0; j < tc.d; ++j)
        for (std::size_t i = 0; i < tc.n; ++i)
            v.values[i] += tc.A[i * tc.d + j] * (-0.5 * c[j]);
    const double vb_mag = 0.5 * norm_c;
    for (std::size_t j = 0; j < tc.n - tc.d; ++j)
        for (std::size_t i = 0; i < tc.n; ++i)
            v.values[i] += tc.B[i * (tc.n - tc.d) + j] * (vb_mag * vb_dir[j]);
    return v;
}

}  // namespace

Tensor optimal_perturbation(const ToyClassifier& tc, std::span<const double> c) {
    if (c.size() != tc.d) throw std::invalid_argument("optimal_perturbation: latent dim mismatch");
    std::vector<double> dir(tc.n - tc.d, 0.0);
    dir[0] = 1.0;
    return build_perturbation(tc, c, dir);
}

Tensor optimal_perturbation(const ToyClassifier& tc, std::span<const double> c, Rng& dir_rng) {
    if (c.size() != tc.d) throw std::invalid_argument("optimal_perturbation: latent dim mismatch");
    std::vector<double> dir(tc.n - tc.d);
    double nrm = 0.0;
    while (nrm < 1e-12) {
        for (double& x : dir) x = dir_rng.normal();
        nrm = l2_norm(dir);
    }
    for (double& x : dir) x /= nrm;
    return build_perturbation(tc, c, dir);
}

bool transfer_condition(std::span<const double> c, std::span<const double> c_prime) {
    if (c.size() != c_prime.size())
        throw std::invalid_argument("transfer_condition: dimension mismatch");
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        const double diff = c_prime[i] - 0.5 * c[i];
        lhs += diff * diff;
        rhs += 0.25 * c[i] * c[i];
    }
    return lhs <= rhs;
}

double et_closed_form_d1(double g0) {
    if (g0 < 0.0 || g0 > 1.0) throw std::invalid_argument("et_closed_form_d1: G(0) must be in [0,1]");
    return 0.5 - g0 + g0 * g0;
}

McResult et_monte_carlo(const ToyClassifier& tc, const data::LatentDist& dist,
                        std::size_t n_pairs, std::uint64_t seed) {
    if (n_pairs < 1000) throw std::invalid_argument("et_monte_carlo: need at least 1000 pairs");
    Rng rng(derive_seed(seed, 0x70));
    std::vector<double> c(tc.d), cp(tc.d);
    std::size_t hits = 0;
    for (std::size_t k = 0; k < n_pairs; ++k) {
        for (std::size_t i = 0; i < tc.d; ++i) c[i] = dist.sample(rng);
        for (std::size_t i = 0; i < tc.d; ++i) cp[i] = dist.sample(rng);
        if (transfer_condition(c, cp)) ++hits;
    }
    McResult res;
    res.n_pairs = n_pairs;
    res.et_hat = static_cast<double>(hits) / static_cast<double>(n_pairs);
    res.std_err = std::sqrt(res.et_hat * (1.0 - res.et_hat) / static_cast<double>(n_pairs));
    return res;
}

}  // namespace backlab::toy
