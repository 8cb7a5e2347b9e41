#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace backlab {

// Flat row-major tensor of doubles with shape metadata. Images are {H, W}
// (gray-scale) or {C, H, W}; patterns and perturbations share the shape of
// the domain they apply to.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> v);

    static Tensor zeros(std::vector<std::size_t> s);
    static Tensor full(std::vector<std::size_t> s, double fill);
    static Tensor vector(std::vector<double> v);

    std::size_t size() const { return values.size(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    std::span<const double> view() const { return values; }
};

std::size_t numel(const std::vector<std::size_t>& shape);
bool all_finite(std::span<const double> v);

// Throws std::invalid_argument when values/shape disagree or a value is
// non-finite.
void validate(const Tensor& t, const std::string& what = "tensor");

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
double l1_norm(std::span<const double> v);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

Tensor clamp01(Tensor t);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);

}  // namespace backlab
