#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "backlab/rng.hpp"
#include "backlab/tensor.hpp"

namespace backlab::data {

struct LabeledDataset {
    std::vector<Tensor> samples;
    std::vector<int> labels;
    bool bounded = false;  // true for image domains with values in [0, 1]

    std::size_t size() const { return samples.size(); }
    int num_classes() const;
    std::vector<std::size_t> indices_of_class(int c) const;
};

// Checks the dataset invariants: equal lengths, a common sample shape,
// labels forming {0..K-1} with every class present, values in [0,1] when
// bounded. Throws std::invalid_argument on violation.
void validate(const LabeledDataset& ds);

// IDX ingestion (big-endian dims, unsigned-byte pixels). Pixel values are
// scaled to [0,1] by /255 so pattern magnitudes quoted in /255 units apply
// directly.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes a dataset as an IDX pair. Values are quantized to bytes by
// round(v*255); datasets that came from load_idx round-trip exactly.
void save_idx(const LabeledDataset& ds, const std::string& images_path,
              const std::string& labels_path);

struct TwoClassDomainSpec {
    enum class Mode { pair, super_class };
    Mode mode = Mode::pair;
    int class_a = 0;
    int class_b = 1;
    std::vector<int> group0;  // super_class mode
    std::vector<int> group1;
    std::uint64_t seed = 0;
};

// Random even split of {0..num_classes-1} into two super-classes.
TwoClassDomainSpec random_super_class_spec(int num_classes, std::uint64_t seed);

// Relabels the referenced classes to {0, 1}; sample order of the source is
// preserved. Empty or overlapping groups are rejected.
LabeledDataset make_two_class_domain(const LabeledDataset& ds, const TwoClassDomainSpec& spec);

// Keeps only the listed classes, relabeled 0..K-1 in list order.
LabeledDataset subset_classes(const LabeledDataset& ds, const std::vector<int>& classes);

// Continuous latent distribution, i.i.d. per coordinate.
struct LatentDist {
    enum class Kind { gaussian, uniform };
    Kind kind = Kind::gaussian;
    double mean = 0.0;
    double stddev = 1.0;
    double lo = 0.0;
    double hi = 1.0;

    static LatentDist gaussian(double mean, double stddev);
    static LatentDist uniform(double lo, double hi);

    double sample(Rng& rng) const;
    // G(0): probability mass at or below zero for one coordinate.
    double cdf_at_zero() const;
};

struct SubspaceDomainSpec {
    std::size_t n = 2;  // ambient dimension
    std::size_t d = 1;  // class-0 latent dimension, 1 <= d < n
    std::vector<double> A;  // n x d, row-major, orthonormal columns
    std::vector<double> B;  // n x (n-d), row-major, orthonormal columns
    LatentDist g0;
    LatentDist g1;
};

// Orthonormal columns A (n x d) and B (n x (n-d)) spanning complementary
// subspaces, from QR of a seeded Gaussian matrix.
std::pair<std::vector<double>, std::vector<double>> orthonormal_pair(std::size_t n,
                                                                     std::size_t d,
                                                                     std::uint64_t seed);

SubspaceDomainSpec make_subspace_spec(std::size_t n, std::size_t d, std::uint64_t seed,
                                      const LatentDist& g0, const LatentDist& g1);

// Orthonormality of A and B and their mutual orthogonality, each within 1e-10.
void validate(const SubspaceDomainSpec& spec);

// Class-0 samples are A*c with c ~ G0, class-1 samples are B*e with e ~ G1.
LabeledDataset sample_subspace_domain(const SubspaceDomainSpec& spec, std::size_t n_per_class,
                                      std::uint64_t seed);

}  // namespace backlab::data
