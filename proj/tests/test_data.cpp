#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "backlab/data.hpp"
#include "backlab/rng.hpp"
#include "backlab/toy.hpp"

using namespace backlab;

namespace {

const std::string kDataDir = BACKLAB_DATA_DIR;

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

data::LabeledDataset tiny_image_dataset() {
    data::LabeledDataset ds;
    ds.bounded = true;
    for (int i = 0; i < 6; ++i) {
        Tensor t = Tensor::zeros({4, 3});
        for (std::size_t p = 0; p < t.size(); ++p) t.values[p] = ((p + i) % 5) / 255.0 * 40.0;
        ds.samples.push_back(std::move(t));
        ds.labels.push_back(i % 3);
    }
    return ds;
}

}  // namespace

TEST_CASE("idx round trip reproduces values exactly") {
    const auto ds = tiny_image_dataset();
    const auto img = temp_path("bl_idx_img");
    const auto lab = temp_path("bl_idx_lab");
    data::save_idx(ds, img, lab);
    const auto back = data::load_idx(img, lab);
    REQUIRE(back.size() == ds.size());
    CHECK(back.bounded);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(back.labels[i] == ds.labels[i]);
        CHECK(back.samples[i].shape == ds.samples[i].shape);
        for (std::size_t p = 0; p < ds.samples[i].size(); ++p)
            CHECK(back.samples[i].values[p] == ds.samples[i].values[p]);
    }
}

TEST_CASE("all-zero synthetic idx loads as zero tensors") {
    data::LabeledDataset ds;
    ds.bounded = true;
    ds.samples = {Tensor::zeros({2, 2}), Tensor::zeros({2, 2})};
    ds.labels = {0, 1};
    const auto img = temp_path("bl_zero_img");
    const auto lab = temp_path("bl_zero_lab");
    data::save_idx(ds, img, lab);
    const auto back = data::load_idx(img, lab);
    REQUIRE(back.size() == 2);
    for (const auto& s : back.samples)
        for (double v : s.values) CHECK(v == 0.0);
}

TEST_CASE("idx rejects bad magic and truncation") {
    const auto img = temp_path("bl_bad_img");
    const auto lab = temp_path("bl_bad_lab");
    {
        std::ofstream f(img, std::ios::binary);
        const unsigned char magic[4] = {0, 0, 8, 4};  // wrong image magic
        f.write(reinterpret_cast<const char*>(magic), 4);
    }
    {
        std::ofstream f(lab, std::ios::binary);
        const unsigned char magic[4] = {0, 0, 8, 1};
        f.write(reinterpret_cast<const char*>(magic), 4);
    }
    CHECK_THROWS_AS((void)data::load_idx(img, lab), std::runtime_error);

    // Valid header claiming more images than stored.
    const auto ds = tiny_image_dataset();
    const auto img2 = temp_path("bl_trunc_img");
    const auto lab2 = temp_path("bl_trunc_lab");
    data::save_idx(ds, img2, lab2);
    std::filesystem::resize_file(img2, 20);
    CHECK_THROWS_AS((void)data::load_idx(img2, lab2), std::runtime_error);
}

TEST_CASE("idx rejects image/label count mismatch") {
    const auto ds = tiny_image_dataset();
    const auto img = temp_path("bl_mismatch_img");
    const auto lab = temp_path("bl_mismatch_lab");
    data::save_idx(ds, img, lab);
    data::LabeledDataset fewer = ds;
    fewer.samples.pop_back();
    fewer.labels.pop_back();
    const auto lab_short = temp_path("bl_mismatch_lab_short");
    data::save_idx(fewer, temp_path("bl_mismatch_img2"), lab_short);
    CHECK_THROWS_AS((void)data::load_idx(img, lab_short), std::runtime_error);
}

TEST_CASE("bundled digits corpus loads with the expected layout") {
    const auto train = data::load_idx(kDataDir + "/digits-train-images-idx3-ubyte",
                                      kDataDir + "/digits-train-labels-idx1-ubyte");
    const auto test = data::load_idx(kDataDir + "/digits-test-images-idx3-ubyte",
                                     kDataDir + "/digits-test-labels-idx1-ubyte");
    data::validate(train);
    data::validate(test);
    CHECK(train.size() == 1347);
    CHECK(test.size() == 450);
    CHECK(train.num_classes() == 10);
    CHECK(train.samples.front().shape == std::vector<std::size_t>{8, 8});
    for (double v : train.samples.front().values) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("two-class pair domain relabels and filters") {
    const auto ds = tiny_image_dataset();  // labels 0,1,2
    data::TwoClassDomainSpec spec;
    spec.mode = data::TwoClassDomainSpec::Mode::pair;
    spec.class_a = 0;
    spec.class_b = 2;
    const auto two = data::make_two_class_domain(ds, spec);
    CHECK(two.size() == 4);
    for (int l : two.labels) CHECK((l == 0 || l == 1));
    data::validate(two);

    spec.class_b = 0;
    CHECK_THROWS_AS((void)data::make_two_class_domain(ds, spec), std::invalid_argument);
    spec.class_b = 7;  // absent class
    CHECK_THROWS_AS((void)data::make_two_class_domain(ds, spec), std::invalid_argument);
}

TEST_CASE("super-class domain covers every original class exactly once") {
    const auto spec = data::random_super_class_spec(10, 99);
    CHECK(spec.group0.size() == 5);
    CHECK(spec.group1.size() == 5);
    std::set<int> all(spec.group0.begin(), spec.group0.end());
    all.insert(spec.group1.begin(), spec.group1.end());
    CHECK(all.size() == 10);

    // Deterministic given the seed.
    const auto again = data::random_super_class_spec(10, 99);
    CHECK(again.group0 == spec.group0);

    const auto train = data::load_idx(kDataDir + "/digits-train-images-idx3-ubyte",
                                      kDataDir + "/digits-train-labels-idx1-ubyte");
    const auto two = data::make_two_class_domain(train, spec);
    CHECK(two.size() == train.size());
    data::validate(two);
}

TEST_CASE("subset_classes keeps list order for relabeling") {
    const auto ds = tiny_image_dataset();
    const auto sub = data::subset_classes(ds, {2, 0});
    CHECK(sub.size() == 4);
    // Original class 2 becomes 0, original 0 becomes 1.
    for (std::size_t i = 0; i < sub.size(); ++i) CHECK((sub.labels[i] == 0 || sub.labels[i] == 1));
    CHECK_THROWS_AS((void)data::subset_classes(ds, {1, 1}), std::invalid_argument);
}

TEST_CASE("latent distribution cdf at zero") {
    CHECK(data::LatentDist::gaussian(0.0, 1.0).cdf_at_zero() == doctest::Approx(0.5));
    CHECK(data::LatentDist::uniform(1.0, 2.0).cdf_at_zero() == 0.0);
    CHECK(data::LatentDist::uniform(-2.0, -1.0).cdf_at_zero() == 1.0);
    CHECK(data::LatentDist::uniform(-1.0, 3.0).cdf_at_zero() == doctest::Approx(0.25));
    CHECK_THROWS_AS((void)data::LatentDist::uniform(2.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS((void)data::LatentDist::gaussian(0.0, 0.0), std::invalid_argument);
}

TEST_CASE("subspace domain satisfies the projection identities") {
    const auto spec = data::make_subspace_spec(6, 2, 12, data::LatentDist::gaussian(0, 1),
                                               data::LatentDist::uniform(-1, 1));
    const auto ds = data::sample_subspace_domain(spec, 40, 13);
    REQUIRE(ds.size() == 80);
    CHECK_FALSE(ds.bounded);

    const std::size_t n = spec.n, d = spec.d;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& x = ds.samples[i].values;
        // Project onto the opposite subspace; must vanish.
        const auto& m = ds.labels[i] == 0 ? spec.B : spec.A;
        const std::size_t cols = ds.labels[i] == 0 ? n - d : d;
        double cross = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < n; ++r) s += m[r * cols + j] * x[r];
            cross += s * s;
        }
        CHECK(std::sqrt(cross) < 1e-10);
    }
}

TEST_CASE("subspace sampling rejects non-orthonormal bases") {
    auto spec = data::make_subspace_spec(4, 2, 5, data::LatentDist::gaussian(0, 1),
                                         data::LatentDist::gaussian(0, 1));
    spec.A[0] += 0.01;
    CHECK_THROWS_AS((void)data::sample_subspace_domain(spec, 10, 1), std::invalid_argument);
}

TEST_CASE("prototype classifier separates the subspace domain perfectly") {
    const auto spec = data::make_subspace_spec(7, 3, 21, data::LatentDist::gaussian(0.5, 1.0),
                                               data::LatentDist::uniform(-2, 2));
    const auto ds = data::sample_subspace_domain(spec, 200, 22);
    const auto tc = toy::from_subspace_spec(spec);
    for (std::size_t i = 0; i < ds.size(); ++i)
        CHECK(toy::prototype_classify(tc, ds.samples[i].view()) == ds.labels[i]);
}
