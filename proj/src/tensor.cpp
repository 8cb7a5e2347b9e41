#include "backlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace backlab {

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> v)
    : shape(std::move(s)), values(std::move(v)) {
    if (numel(shape) != values.size())
        throw std::invalid_argument("tensor: shape does not match value count");
}

Tensor Tensor::zeros(std::vector<std::size_t> s) {
    const std::size_t n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> s, double fill) {
    const std::size_t n = numel(s);
    return Tensor(std::move(s), std::vector<double>(n, fill));
}

Tensor Tensor::vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
}

std::size_t numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void validate(const Tensor& t, const std::string& what) {
    if (t.shape.empty() || numel(t.shape) != t.values.size())
        throw std::invalid_argument(what + ": inconsistent shape");
    for (std::size_t d : t.shape)
        if (d == 0) throw std::invalid_argument(what + ": zero dimension");
    if (!all_finite(t.values))
        throw std::invalid_argument(what + ": non-finite value");
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double l1_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    const double na = l2_norm(a), nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0)
        throw std::invalid_argument("cosine_similarity: zero vector");
    return dot(a, b) / (na * nb);
}

Tensor clamp01(Tensor t) {
    for (double& x : t.values) x = std::clamp(x, 0.0, 1.0);
    return t;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("add: shape mismatch");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += b.values[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("sub: shape mismatch");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= b.values[i];
    return out;
}

}  // namespace backlab
