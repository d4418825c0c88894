#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ubdiff/rng.hpp"
#include "ubdiff/tensor.hpp"

namespace ubdiff {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct VelocityMap {
    Tensor grid;     // H x W, m/s
    float spacing;   // grid spacing, meters
};

struct SeismicGather {
    Tensor traces;   // S x Tt x R
    float dt;        // seconds
};

// Affine map raw -> [-1, 1]: normalized = (x - shift) / scale.
struct NormalizationSpec {
    float shift = 0.0f;
    float scale = 1.0f;

    static NormalizationSpec from_range(float lo, float hi) {
        if (!(hi > lo)) throw std::invalid_argument("normalization range must have hi > lo");
        return {0.5f * (lo + hi), 0.5f * (hi - lo)};
    }

    void validate() const {
        if (!(scale > 0.0f)) throw std::invalid_argument("normalization scale must be positive");
    }

    float normalize(float x) const { return (x - shift) / scale; }
    float denormalize(float y) const { return y * scale + shift; }

    Tensor normalize(const Tensor& t) const {
        validate();
        Tensor out = t;
        for (auto& x : out.v) x = normalize(x);
        return out;
    }
    Tensor denormalize(const Tensor& t) const {
        validate();
        Tensor out = t;
        for (auto& x : out.v) x = denormalize(x);
        return out;
    }
};

enum class Modality { velocity, seismic };

inline std::string to_string(Modality m) {
    return m == Modality::velocity ? "velocity" : "seismic";
}
inline Modality modality_from_string(const std::string& s) {
    if (s == "velocity") return Modality::velocity;
    if (s == "seismic") return Modality::seismic;
    throw std::invalid_argument("unknown modality: " + s);
}

struct DatasetManifest {
    int version = 1;
    Modality majority_modality = Modality::velocity;
    std::vector<int> velocity_shape{32, 32};
    std::vector<int> seismic_shape{3, 256, 32};
    std::vector<int> majority_ids;
    std::vector<int> paired_ids;
    NormalizationSpec vel_norm;
    NormalizationSpec seis_norm;
    std::uint64_t seed = 0;
    float spacing = 10.0f;  // meters
    float dt = 1e-3f;       // seconds
    bool generated = false;

    std::size_t m() const { return majority_ids.size(); }
    std::size_t n() const { return paired_ids.size(); }

    const std::vector<int>& majority_shape() const {
        return majority_modality == Modality::velocity ? velocity_shape : seismic_shape;
    }
    const std::vector<int>& minority_shape() const {
        return majority_modality == Modality::velocity ? seismic_shape : velocity_shape;
    }

    void validate() const {
        std::set<int> maj(majority_ids.begin(), majority_ids.end());
        if (maj.size() != majority_ids.size())
            throw std::invalid_argument("manifest: duplicate majority ids");
        for (int id : paired_ids)
            if (!maj.count(id))
                throw std::invalid_argument("manifest: paired id " + std::to_string(id) +
                                            " not in majority_ids");
        vel_norm.validate();
        seis_norm.validate();
    }

    json to_json() const {
        return json{{"version", version},
                    {"majority_modality", to_string(majority_modality)},
                    {"shapes", {{"velocity", velocity_shape}, {"seismic", seismic_shape}}},
                    {"dtype", "f32le"},
                    {"majority_ids", majority_ids},
                    {"paired_ids", paired_ids},
                    {"normalization",
                     {{"velocity", {{"shift", vel_norm.shift}, {"scale", vel_norm.scale}}},
                      {"seismic", {{"shift", seis_norm.shift}, {"scale", seis_norm.scale}}}}},
                    {"seed", seed},
                    {"spacing", spacing},
                    {"dt", dt},
                    {"generated", generated}};
    }

    static DatasetManifest from_json(const json& j) {
        DatasetManifest m;
        m.version = j.at("version").get<int>();
        m.majority_modality = modality_from_string(j.at("majority_modality").get<std::string>());
        m.velocity_shape = j.at("shapes").at("velocity").get<std::vector<int>>();
        m.seismic_shape = j.at("shapes").at("seismic").get<std::vector<int>>();
        if (j.at("dtype").get<std::string>() != "f32le")
            throw std::invalid_argument("manifest: unsupported dtype " +
                                        j.at("dtype").get<std::string>());
        m.majority_ids = j.at("majority_ids").get<std::vector<int>>();
        m.paired_ids = j.at("paired_ids").get<std::vector<int>>();
        m.vel_norm.shift = j.at("normalization").at("velocity").at("shift").get<float>();
        m.vel_norm.scale = j.at("normalization").at("velocity").at("scale").get<float>();
        m.seis_norm.shift = j.at("normalization").at("seismic").at("shift").get<float>();
        m.seis_norm.scale = j.at("normalization").at("seismic").at("scale").get<float>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.spacing = j.value("spacing", 10.0f);
        m.dt = j.value("dt", 1e-3f);
        m.generated = j.value("generated", false);
        m.validate();
        return m;
    }
};

// ma is the majority-modality array (velocity grid by default); mi, when
// present, is the paired minority array from the same underlying model.
struct PairedSample {
    int id = 0;
    Tensor ma;
    std::optional<Tensor> mi;
};

// ---------------------------------------------------------------------------
// Raw float32 little-endian binary I/O
// ---------------------------------------------------------------------------

inline void write_f32(const fs::path& path, const Tensor& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
    f.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!f) throw std::runtime_error("write failed: " + path.string());
}

inline Tensor read_f32(const fs::path& path, const std::vector<int>& shape) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("missing tensor file: " + path.string());
    auto bytes = static_cast<std::size_t>(f.tellg());
    Tensor t(shape);
    if (bytes != t.size() * sizeof(float))
        throw std::runtime_error("size mismatch for tensor " + path.string() + ": expected " +
                                 std::to_string(t.size() * sizeof(float)) + " bytes, found " +
                                 std::to_string(bytes));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes));
    if (!f) throw std::runtime_error("read failed: " + path.string());
    return t;
}

// ---------------------------------------------------------------------------
// Dataset container: manifest.json + vel_<id>.f32 / seis_<id>.f32
// ---------------------------------------------------------------------------

inline std::string majority_file_stem(const DatasetManifest& m) {
    return m.majority_modality == Modality::velocity ? "vel" : "seis";
}
inline std::string minority_file_stem(const DatasetManifest& m) {
    return m.majority_modality == Modality::velocity ? "seis" : "vel";
}

inline void save_dataset(const std::vector<PairedSample>& samples, const DatasetManifest& manifest,
                         const fs::path& dir) {
    manifest.validate();
    std::set<int> paired(manifest.paired_ids.begin(), manifest.paired_ids.end());
    for (const auto& s : samples) {
        if (Tensor::numel(s.ma.shape) != Tensor::numel(manifest.majority_shape()) ||
            s.ma.shape != manifest.majority_shape())
            throw std::invalid_argument("sample " + std::to_string(s.id) +
                                        ": majority shape mismatch " + shape_str(s.ma.shape));
        if (paired.count(s.id) && !s.mi)
            throw std::invalid_argument("sample " + std::to_string(s.id) +
                                        ": listed as paired but has no minority array");
        if (s.mi && s.mi->shape != manifest.minority_shape())
            throw std::invalid_argument("sample " + std::to_string(s.id) +
                                        ": minority shape mismatch " + shape_str(s.mi->shape));
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("path not writable: " + dir.string());
    mf << manifest.to_json().dump(2) << "\n";
    const std::string ma_stem = majority_file_stem(manifest);
    const std::string mi_stem = minority_file_stem(manifest);
    for (const auto& s : samples) {
        write_f32(dir / (ma_stem + "_" + std::to_string(s.id) + ".f32"), s.ma);
        if (s.mi && paired.count(s.id))
            write_f32(dir / (mi_stem + "_" + std::to_string(s.id) + ".f32"), *s.mi);
    }
}

inline std::pair<std::vector<PairedSample>, DatasetManifest> load_dataset(const fs::path& dir) {
    const fs::path mp = dir / "manifest.json";
    std::ifstream mf(mp);
    if (!mf) throw std::runtime_error("missing manifest: " + mp.string());
    json j;
    try {
        mf >> j;
    } catch (const json::parse_error& e) {
        throw std::runtime_error("manifest parse error in " + mp.string() + ": " + e.what());
    }
    DatasetManifest manifest = DatasetManifest::from_json(j);
    std::set<int> paired(manifest.paired_ids.begin(), manifest.paired_ids.end());
    const std::string ma_stem = majority_file_stem(manifest);
    const std::string mi_stem = minority_file_stem(manifest);
    std::vector<PairedSample> samples;
    samples.reserve(manifest.majority_ids.size());
    for (int id : manifest.majority_ids) {
        PairedSample s;
        s.id = id;
        s.ma = read_f32(dir / (ma_stem + "_" + std::to_string(id) + ".f32"),
                        manifest.majority_shape());
        if (paired.count(id))
            s.mi = read_f32(dir / (mi_stem + "_" + std::to_string(id) + ".f32"),
                            manifest.minority_shape());
        samples.push_back(std::move(s));
    }
    return {std::move(samples), std::move(manifest)};
}

// Uniform random subset of size n_paired; pure function of (ids, n_paired, seed).
inline DatasetManifest split_unbalanced(const std::vector<int>& ids, std::size_t n_paired,
                                        std::uint64_t seed) {
    if (n_paired > ids.size())
        throw std::invalid_argument("n_paired (" + std::to_string(n_paired) +
                                    ") exceeds corpus size (" + std::to_string(ids.size()) + ")");
    DatasetManifest m;
    m.majority_ids = ids;
    m.seed = seed;
    std::vector<int> pool = ids;
    Rng rng(derive_seed("split", seed));
    rng.shuffle(pool.begin(), pool.end());
    pool.resize(n_paired);
    std::sort(pool.begin(), pool.end());
    m.paired_ids = std::move(pool);
    m.validate();
    return m;
}

}  // namespace ubdiff
