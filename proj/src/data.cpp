#include "backlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace backlab::data {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be_u32(std::istream& in, const std::string& what) {
    unsigned char buf[4];
    in.read(reinterpret_cast<char*>(buf), 4);
    if (!in) throw std::runtime_error("idx: truncated file while reading " + what);
    return (std::uint32_t(buf[0]) << 24) | (std::uint32_t(buf[1]) << 16) |
           (std::uint32_t(buf[2]) << 8) | std::uint32_t(buf[3]);
}

void write_be_u32(std::ostream& out, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v >> 24),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 8),
                            static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

}  // namespace

int LabeledDataset::num_classes() const {
    int k = 0;
    for (int l : labels) k = std::max(k, l + 1);
    return k;
}

std::vector<std::size_t> LabeledDataset::indices_of_class(int c) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == c) idx.push_back(i);
    return idx;
}

void validate(const LabeledDataset& ds) {
    if (ds.samples.size() != ds.labels.size())
        throw std::invalid_argument("dataset: samples/labels length mismatch");
    if (ds.samples.empty()) throw std::invalid_argument("dataset: empty");
    const auto& shape = ds.samples.front().shape;
    std::set<int> seen;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.samples[i].shape != shape)
            throw std::invalid_argument("dataset: inconsistent sample shape");
        if (ds.labels[i] < 0) throw std::invalid_argument("dataset: negative label");
        seen.insert(ds.labels[i]);
        if (ds.bounded) {
            for (double v : ds.samples[i].values)
                if (v < 0.0 || v > 1.0)
                    throw std::invalid_argument("dataset: value outside [0,1] in bounded domain");
        }
    }
    const int k = ds.num_classes();
    for (int c = 0; c < k; ++c)
        if (!seen.count(c)) throw std::invalid_argument("dataset: class missing: " + std::to_string(c));
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("idx: cannot open " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("idx: cannot open " + labels_path);

    const std::uint32_t img_magic = read_be_u32(img, "image magic");
    if (img_magic != kImageMagic)
        throw std::runtime_error("idx: bad image magic number in " + images_path);
    const std::uint32_t n_images = read_be_u32(img, "image count");
    const std::uint32_t rows = read_be_u32(img, "rows");
    const std::uint32_t cols = read_be_u32(img, "cols");
    if (rows == 0 || cols == 0) throw std::runtime_error("idx: zero image dimension");

    const std::uint32_t lab_magic = read_be_u32(lab, "label magic");
    if (lab_magic != kLabelMagic)
        throw std::runtime_error("idx: bad label magic number in " + labels_path);
    const std::uint32_t n_labels = read_be_u32(lab, "label count");
    if (n_labels != n_images)
        throw std::runtime_error("idx: image/label count mismatch");

    LabeledDataset ds;
    ds.bounded = true;
    ds.samples.reserve(n_images);
    ds.labels.reserve(n_images);
    const std::size_t pixels = std::size_t(rows) * cols;
    std::vector<unsigned char> buf(pixels);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
        if (!img) throw std::runtime_error("idx: truncated image data");
        Tensor t = Tensor::zeros({rows, cols});
        for (std::size_t p = 0; p < pixels; ++p) t.values[p] = buf[p] / 255.0;
        ds.samples.push_back(std::move(t));
        char l = 0;
        lab.read(&l, 1);
        if (!lab) throw std::runtime_error("idx: truncated label data");
        ds.labels.push_back(static_cast<int>(static_cast<unsigned char>(l)));
    }
    return ds;
}

void save_idx(const LabeledDataset& ds, const std::string& images_path,
              const std::string& labels_path) {
    if (ds.samples.empty()) throw std::invalid_argument("save_idx: empty dataset");
    const auto& shape = ds.samples.front().shape;
    if (shape.size() != 2) throw std::invalid_argument("save_idx: expected {rows, cols} samples");

    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw std::runtime_error("idx: cannot write " + images_path);
    std::ofstream lab(labels_path, std::ios::binary);
    if (!lab) throw std::runtime_error("idx: cannot write " + labels_path);

    write_be_u32(img, kImageMagic);
    write_be_u32(img, static_cast<std::uint32_t>(ds.size()));
    write_be_u32(img, static_cast<std::uint32_t>(shape[0]));
    write_be_u32(img, static_cast<std::uint32_t>(shape[1]));
    write_be_u32(lab, kLabelMagic);
    write_be_u32(lab, static_cast<std::uint32_t>(ds.size()));

    for (std::size_t i = 0; i < ds.size(); ++i) {
        for (double v : ds.samples[i].values) {
            const double q = std::clamp(std::round(v * 255.0), 0.0, 255.0);
            const unsigned char byte = static_cast<unsigned char>(q);
            img.write(reinterpret_cast<const char*>(&byte), 1);
        }
        const unsigned char l = static_cast<unsigned char>(ds.labels[i]);
        lab.write(reinterpret_cast<const char*>(&l), 1);
    }
}

TwoClassDomainSpec random_super_class_spec(int num_classes, std::uint64_t seed) {
    if (num_classes < 2) throw std::invalid_argument("super_class: need >= 2 classes");
    std::vector<int> classes(num_classes);
    for (int i = 0; i < num_classes; ++i) classes[i] = i;
    Rng rng(derive_seed(seed, 0x5c));
    rng.shuffle(classes);
    TwoClassDomainSpec spec;
    spec.mode = TwoClassDomainSpec::Mode::super_class;
    spec.seed = seed;
    const int half = num_classes / 2;
    spec.group0.assign(classes.begin(), classes.begin() + half);
    spec.group1.assign(classes.begin() + half, classes.end());
    std::sort(spec.group0.begin(), spec.group0.end());
    std::sort(spec.group1.begin(), spec.group1.end());
    return spec;
}

namespace {

std::pair<std::vector<int>, std::vector<int>> resolve_groups(const TwoClassDomainSpec& spec) {
    if (spec.mode == TwoClassDomainSpec::Mode::pair) {
        if (spec.class_a == spec.class_b)
            throw std::invalid_argument("two_class: pair classes must differ");
        return {{spec.class_a}, {spec.class_b}};
    }
    if (spec.group0.empty() || spec.group1.empty())
        throw std::invalid_argument("two_class: empty super-class group");
    for (int c : spec.group0)
        if (std::find(spec.group1.begin(), spec.group1.end(), c) != spec.group1.end())
            throw std::invalid_argument("two_class: groups not disjoint");
    return {spec.group0, spec.group1};
}

}  // namespace

LabeledDataset make_two_class_domain(const LabeledDataset& ds, const TwoClassDomainSpec& spec) {
    const auto [g0, g1] = resolve_groups(spec);
    for (int c : g0)
        if (ds.indices_of_class(c).empty())
            throw std::invalid_argument("two_class: class absent from dataset: " + std::to_string(c));
    for (int c : g1)
        if (ds.indices_of_class(c).empty())
            throw std::invalid_argument("two_class: class absent from dataset: " + std::to_string(c));

    LabeledDataset out;
    out.bounded = ds.bounded;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const int l = ds.labels[i];
        if (std::find(g0.begin(), g0.end(), l) != g0.end()) {
            out.samples.push_back(ds.samples[i]);
            out.labels.push_back(0);
        } else if (std::find(g1.begin(), g1.end(), l) != g1.end()) {
            out.samples.push_back(ds.samples[i]);
            out.labels.push_back(1);
        }
    }
    return out;
}

LabeledDataset subset_classes(const LabeledDataset& ds, const std::vector<int>& classes) {
    if (classes.size() < 2) throw std::invalid_argument("subset_classes: need >= 2 classes");
    std::set<int> uniq(classes.begin(), classes.end());
    if (uniq.size() != classes.size())
        throw std::invalid_argument("subset_classes: duplicate class");
    LabeledDataset out;
    out.bounded = ds.bounded;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto it = std::find(classes.begin(), classes.end(), ds.labels[i]);
        if (it == classes.end()) continue;
        out.samples.push_back(ds.samples[i]);
        out.labels.push_back(static_cast<int>(it - classes.begin()));
    }
    return out;
}

LatentDist LatentDist::gaussian(double mean, double stddev) {
    if (stddev <= 0.0) throw std::invalid_argument("gaussian: stddev must be positive");
    LatentDist d;
    d.kind = Kind::gaussian;
    d.mean = mean;
    d.stddev = stddev;
    return d;
}

LatentDist LatentDist::uniform(double lo, double hi) {
    if (hi <= lo) throw std::invalid_argument("uniform: hi must exceed lo");
    LatentDist d;
    d.kind = Kind::uniform;
    d.lo = lo;
    d.hi = hi;
    return d;
}

double LatentDist::sample(Rng& rng) const {
    return kind == Kind::gaussian ? rng.normal(mean, stddev) : rng.uniform(lo, hi);
}

double LatentDist::cdf_at_zero() const {
    if (kind == Kind::gaussian) return 0.5 * std::erfc(mean / (stddev * std::sqrt(2.0)));
    if (0.0 <= lo) return 0.0;
    if (0.0 >= hi) return 1.0;
    return -lo / (hi - lo);
}

std::pair<std::vector<double>, std::vector<double>> orthonormal_pair(std::size_t n,
                                                                     std::size_t d,
                                                                     std::uint64_t seed) {
    if (d < 1 || d >= n) throw std::invalid_argument("orthonormal_pair: need 1 <= d < n");
    Rng rng(derive_seed(seed, 0x0b));
    // Modified Gram-Schmidt with one re-orthogonalization pass on a random
    // Gaussian n x n matrix; columns are stored contiguously.
    std::vector<std::vector<double>> q(n, std::vector<double>(n));
    for (std::size_t j = 0; j < n; ++j) {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i) v[i] = rng.normal();
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t k = 0; k < j; ++k) {
                const double proj = dot(v, q[k]);
                for (std::size_t i = 0; i < n; ++i) v[i] -= proj * q[k][i];
            }
        }
        const double nrm = l2_norm(v);
        if (nrm < 1e-12) throw std::runtime_error("orthonormal_pair: degenerate column");
        for (std::size_t i = 0; i < n; ++i) v[i] /= nrm;
        q[j] = std::move(v);
    }
    std::vector<double> A(n * d), B(n * (n - d));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) A[i * d + j] = q[j][i];
        for (std::size_t j = 0; j < n - d; ++j) B[i * (n - d) + j] = q[d + j][i];
    }
    return {std::move(A), std::move(B)};
}

SubspaceDomainSpec make_subspace_spec(std::size_t n, std::size_t d, std::uint64_t seed,
                                      const LatentDist& g0, const LatentDist& g1) {
    SubspaceDomainSpec spec;
    spec.n = n;
    spec.d = d;
    auto [a, b] = orthonormal_pair(n, d, seed);
    spec.A = std::move(a);
    spec.B = std::move(b);
    spec.g0 = g0;
    spec.g1 = g1;
    validate(spec);
    return spec;
}

namespace {

// max |M^T M - I| over an n x k column block stored row-major.
double orthonormality_defect(const std::vector<double>& m, std::size_t n, std::size_t k) {
    double worst = 0.0;
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a; b < k; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += m[i * k + a] * m[i * k + b];
            const double target = (a == b) ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(s - target));
        }
    }
    return worst;
}

}  // namespace

void validate(const SubspaceDomainSpec& spec) {
    const std::size_t n = spec.n, d = spec.d;
    if (d < 1 || d >= n) throw std::invalid_argument("subspace: need 1 <= d < n");
    if (spec.A.size() != n * d || spec.B.size() != n * (n - d))
        throw std::invalid_argument("subspace: basis size mismatch");
    if (orthonormality_defect(spec.A, n, d) > 1e-10)
        throw std::invalid_argument("subspace: A not orthonormal");
    if (orthonormality_defect(spec.B, n, n - d) > 1e-10)
        throw std::invalid_argument("subspace: B not orthonormal");
    double worst = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
        for (std::size_t b = 0; b < n - d; ++b) {
            double s = 0.0;
            for (std::size_t i = 0; i < n; ++i) s += spec.A[i * d + a] * spec.B[i * (n - d) + b];
            worst = std::max(worst, std::abs(s));
        }
    }
    if (worst > 1e-10) throw std::invalid_argument("subspace: A and B not mutually orthogonal");
}

LabeledDataset sample_subspace_domain(const SubspaceDomainSpec& spec, std::size_t n_per_class,
                                      std::uint64_t seed) {
    validate(spec);
    if (n_per_class == 0) throw std::invalid_argument("subspace: n_per_class must be positive");
    const std::size_t n = spec.n, d = spec.d;
    Rng rng(derive_seed(seed, 0x5d));
    LabeledDataset ds;
    ds.bounded = false;
    for (std::size_t s = 0; s < n_per_class; ++s) {
        Tensor x = Tensor::zeros({n});
        for (std::size_t j = 0; j < d; ++j) {
            const double c = spec.g0.sample(rng);
            for (std::size_t i = 0; i < n; ++i) x.values[i] += spec.A[i * d + j] * c;
        }
        ds.samples.push_back(std::move(x));
        ds.labels.push_back(0);
    }
    for (std::size_t s = 0; s < n_per_class; ++s) {
        Tensor x = Tensor::zeros({n});
        for (std::size_t j = 0; j < n - d; ++j) {
            const double e = spec.g1.sample(rng);
            for (std::size_t i = 0; i < n; ++i) x.values[i] += spec.B[i * (n - d) + j] * e;
        }
        ds.samples.push_back(std::move(x));
        ds.labels.push_back(1);
    }
    return ds;
}

}  // namespace backlab::data
