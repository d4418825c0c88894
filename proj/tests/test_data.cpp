#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "ubdiff/data.hpp"

using namespace ubdiff;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("ubdiff_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

DatasetManifest small_manifest(int m, int n, std::uint64_t seed = 1) {
    std::vector<int> ids(m);
    for (int i = 0; i < m; ++i) ids[i] = i;
    DatasetManifest mf = split_unbalanced(ids, n, seed);
    mf.velocity_shape = {4, 4};
    mf.seismic_shape = {2, 8, 4};
    mf.vel_norm = NormalizationSpec::from_range(1500.0f, 4500.0f);
    mf.seis_norm = NormalizationSpec::from_range(-2.0f, 2.0f);
    return mf;
}

std::vector<PairedSample> make_samples(const DatasetManifest& mf, std::uint64_t seed = 3) {
    Rng rng(seed);
    std::set<int> paired(mf.paired_ids.begin(), mf.paired_ids.end());
    std::vector<PairedSample> out;
    for (int id : mf.majority_ids) {
        PairedSample s;
        s.id = id;
        s.ma = Tensor(mf.majority_shape());
        rng.fill_normal(s.ma);
        if (paired.count(id)) {
            Tensor mi(mf.minority_shape());
            rng.fill_normal(mi);
            s.mi = mi;
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_CASE("normalization maps range endpoints and midpoint") {
    auto spec = NormalizationSpec::from_range(1500.0f, 4500.0f);
    CHECK(spec.normalize(3000.0f) == Catch::Approx(0.0).margin(1e-7));
    CHECK(spec.normalize(1500.0f) == Catch::Approx(-1.0));
    CHECK(spec.normalize(4500.0f) == Catch::Approx(1.0));
}

TEST_CASE("normalize/denormalize round trip within 1e-6 relative") {
    auto spec = NormalizationSpec::from_range(1500.0f, 4500.0f);
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        const float x = rng.uniform(1500.0f, 4500.0f);
        const float y = spec.denormalize(spec.normalize(x));
        CHECK(std::abs(y - x) <= 1e-6f * std::abs(x));
    }
}

TEST_CASE("non-positive scale is rejected") {
    NormalizationSpec s{0.0f, 0.0f};
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    CHECK_THROWS(NormalizationSpec::from_range(5.0f, 5.0f));
}

TEST_CASE("split_unbalanced is deterministic and uniform subset") {
    std::vector<int> ids(2000);
    for (int i = 0; i < 2000; ++i) ids[i] = i;
    auto a = split_unbalanced(ids, 100, 7);
    auto b = split_unbalanced(ids, 100, 7);
    REQUIRE(a.paired_ids.size() == 100);
    CHECK(a.paired_ids == b.paired_ids);
    auto c = split_unbalanced(ids, 100, 8);
    CHECK(a.paired_ids != c.paired_ids);

    SECTION("fully paired edge case") {
        auto full = split_unbalanced(ids, ids.size(), 7);
        CHECK(full.n() == full.m());
    }
    SECTION("no pairs edge case") {
        auto none = split_unbalanced(ids, 0, 7);
        CHECK(none.n() == 0);
    }
    SECTION("oversized request rejected") {
        CHECK_THROWS_AS(split_unbalanced(ids, ids.size() + 1, 7), std::invalid_argument);
    }
}

TEST_CASE("container round trip is bit-exact") {
    auto dir = temp_dir("roundtrip");
    auto mf = small_manifest(10, 4);
    auto samples = make_samples(mf);
    save_dataset(samples, mf, dir);
    auto [loaded, lmf] = load_dataset(dir);
    REQUIRE(loaded.size() == samples.size());
    CHECK(lmf.paired_ids == mf.paired_ids);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        CHECK(loaded[i].ma.v == samples[i].ma.v);  // bitwise
        REQUIRE(loaded[i].mi.has_value() == samples[i].mi.has_value());
        if (samples[i].mi) CHECK(loaded[i].mi->v == samples[i].mi->v);
    }
}

TEST_CASE("velocity-only dataset saves with n=0 pairs") {
    auto dir = temp_dir("velonly");
    auto mf = small_manifest(10, 0);
    auto samples = make_samples(mf);
    save_dataset(samples, mf, dir);
    auto [loaded, lmf] = load_dataset(dir);
    CHECK(lmf.n() == 0);
    int nfiles = 0;
    for (auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".f32") ++nfiles;
    CHECK(nfiles == 10);
}

TEST_CASE("manifest invariant violations are rejected") {
    DatasetManifest mf;
    mf.majority_ids = {0, 1, 2};
    mf.paired_ids = {5};
    CHECK_THROWS_AS(mf.validate(), std::invalid_argument);
}

TEST_CASE("shape mismatch rejected with sample id") {
    auto dir = temp_dir("shapemm");
    auto mf = small_manifest(2, 0);
    auto samples = make_samples(mf);
    samples[1].ma = Tensor({3, 3});
    try {
        save_dataset(samples, mf, dir);
        FAIL("expected rejection");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
}

TEST_CASE("corrupted manifest JSON reports the file") {
    auto dir = temp_dir("badjson");
    std::ofstream(dir / "manifest.json") << "{ not json";
    try {
        load_dataset(dir);
        FAIL("expected parse error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("manifest.json") != std::string::npos);
    }
}

TEST_CASE("truncated binary reports the tensor file") {
    auto dir = temp_dir("trunc");
    auto mf = small_manifest(2, 0);
    auto samples = make_samples(mf);
    save_dataset(samples, mf, dir);
    // truncate one tensor
    const fs::path victim = dir / "vel_1.f32";
    fs::resize_file(victim, 8);
    try {
        load_dataset(dir);
        FAIL("expected size mismatch");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("vel_1.f32") != std::string::npos);
        CHECK(msg.find("size mismatch") != std::string::npos);
    }
}

TEST_CASE("missing tensor file reported by name") {
    auto dir = temp_dir("missing");
    auto mf = small_manifest(2, 0);
    auto samples = make_samples(mf);
    save_dataset(samples, mf, dir);
    fs::remove(dir / "vel_0.f32");
    CHECK_THROWS_WITH(load_dataset(dir), Catch::Matchers::ContainsSubstring("vel_0.f32"));
}
