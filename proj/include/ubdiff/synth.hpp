#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "ubdiff/data.hpp"
#include "ubdiff/rng.hpp"

namespace ubdiff {

enum class VelocityFamily { flatvel, curvevel, flatfault, curvefault };

inline std::string to_string(VelocityFamily f) {
    switch (f) {
        case VelocityFamily::flatvel: return "flatvel";
        case VelocityFamily::curvevel: return "curvevel";
        case VelocityFamily::flatfault: return "flatfault";
        case VelocityFamily::curvefault: return "curvefault";
    }
    return "?";
}
inline VelocityFamily family_from_string(const std::string& s) {
    if (s == "flatvel") return VelocityFamily::flatvel;
    if (s == "curvevel") return VelocityFamily::curvevel;
    if (s == "flatfault") return VelocityFamily::flatfault;
    if (s == "curvefault") return VelocityFamily::curvefault;
    throw std::invalid_argument("unknown velocity family: " + s);
}

struct LayerModelParams {
    int size = 32;                               // H == W
    int n_layers_min = 2, n_layers_max = 5;
    float v_top = 1500.0f;                       // m/s, first layer
    float v_increment_min = 200.0f;              // m/s per interface
    float v_increment_max = 800.0f;
    float v_max = 4500.0f;                       // hard cap
    float curvature_amplitude = 0.0f;            // grid cells, 0 => flat
    int curvature_max_freq = 1;                  // cycles across the map width
    int fault_throw_min = 0, fault_throw_max = 0;  // grid cells, 0 => no fault
    float fault_dip_min_deg = -15.0f, fault_dip_max_deg = 15.0f;  // from vertical
    float spacing = 10.0f;                       // meters

    void validate() const {
        if (size < 4) throw std::invalid_argument("map size too small");
        if (!(v_top > 0)) throw std::invalid_argument("v_top must be positive");
        if (v_increment_min < 0 || v_increment_max < v_increment_min)
            throw std::invalid_argument("bad velocity increment range");
        if (n_layers_min < 1 || n_layers_max < n_layers_min)
            throw std::invalid_argument("bad layer count range");
        if (curvature_amplitude < 0 || curvature_amplitude >= size)
            throw std::invalid_argument("curvature amplitude out of range");
        if (curvature_max_freq < 1)
            throw std::invalid_argument("curvature max frequency must be >= 1");
        if (fault_throw_min < 0 || fault_throw_max < fault_throw_min ||
            fault_throw_max >= size)
            throw std::invalid_argument("bad fault throw range");
    }
};

namespace detail {

struct LayeredModel {
    int n_layers = 1;
    std::vector<float> velocities;                 // per layer, non-decreasing
    std::vector<std::vector<float>> interfaces;    // (n_layers-1) x W, fractional row
};

// Single internal generator. Curve parameters are always drawn so that the
// flat case (amplitude 0) consumes the identical RNG stream as the curved one.
inline LayeredModel sample_layered(const LayerModelParams& p, Rng& rng) {
    const int H = p.size, W = p.size;
    const float amp = p.curvature_amplitude;
    LayeredModel m;
    m.n_layers = rng.integer(p.n_layers_min, p.n_layers_max);

    // Curved interfaces need vertical room; cap the layer count at what fits.
    const int gap = int(std::ceil(2 * amp)) + 2;
    const float lo = amp + 1.0f, hi = float(H) - amp - 1.0f;
    int max_ifaces = 0;
    while (hi - lo - gap * float(max_ifaces) > 0) ++max_ifaces;
    if (max_ifaces + 1 < p.n_layers_min)
        throw std::invalid_argument("layers/curvature do not fit the grid");
    m.n_layers = std::min(m.n_layers, max_ifaces + 1);

    m.velocities.resize(m.n_layers);
    m.velocities[0] = p.v_top;
    std::vector<float> inc(std::max(0, m.n_layers - 1));
    float total = 0.0f;
    for (auto& x : inc) {
        x = rng.uniform(std::max(1.0f, p.v_increment_min), std::max(1.0f, p.v_increment_max));
        total += x;
    }
    // Rescale instead of clamping so layer velocities stay strictly increasing.
    const float headroom = p.v_max - p.v_top;
    const float s = (total > headroom && total > 0) ? headroom / total : 1.0f;
    for (int k = 1; k < m.n_layers; ++k) m.velocities[k] = m.velocities[k - 1] + s * inc[k - 1];

    // Base interface depths: spaced so a curved interface can never cross its
    // neighbor or leave the grid; every layer keeps >= 1 row in every column.
    std::vector<float> depths(m.n_layers - 1);
    if (m.n_layers > 1) {
        const float span = hi - lo - gap * float(m.n_layers - 2);
        std::vector<float> u(m.n_layers - 1);
        for (auto& x : u) x = rng.uniform();
        std::sort(u.begin(), u.end());
        for (int k = 0; k < m.n_layers - 1; ++k)
            depths[k] = lo + u[k] * span + gap * float(k);
    }

    m.interfaces.assign(std::max(0, m.n_layers - 1), std::vector<float>(W, 0.0f));
    for (int k = 0; k < m.n_layers - 1; ++k) {
        // One sinusoid per interface. Amplitude stays in [amp/2, amp] so the
        // curvature is always visible after rasterization but never exceeds
        // the spacing budget reserved above.
        const float a = rng.uniform(0.5f, 1.0f) * amp;
        const float f = float(rng.integer(1, p.curvature_max_freq));
        const float ph = rng.uniform(0.0f, 2.0f * float(M_PI));
        for (int c = 0; c < W; ++c)
            m.interfaces[k][c] =
                depths[k] + a * std::sin(2.0f * float(M_PI) * f * float(c) / float(W) + ph);
    }
    return m;
}

inline Tensor rasterize(const LayeredModel& m, int H, int W) {
    Tensor g({H, W});
    for (int c = 0; c < W; ++c) {
        int k = 0;
        for (int r = 0; r < H; ++r) {
            while (k < m.n_layers - 1 && float(r) >= m.interfaces[k][c]) ++k;
            g.at(r, c) = m.velocities[k];
        }
    }
    return g;
}

// Vertical down-shift of columns on one side of a dipping line; exposed cells
// take the top layer value of that column.
inline Tensor apply_fault(const Tensor& base, int throw_cells, float dip_deg, float pivot_col) {
    const int H = base.shape[0], W = base.shape[1];
    Tensor out = base;
    const float t = std::tan(dip_deg * float(M_PI) / 180.0f);
    for (int r = 0; r < H; ++r) {
        const float xline = pivot_col + float(r) * t;
        for (int c = 0; c < W; ++c) {
            if (float(c) > xline) {
                const int src = std::max(r - throw_cells, 0);
                out.at(r, c) = base.at(src, c);
            }
        }
    }
    return out;
}

}  // namespace detail

inline VelocityMap gen_curved(const LayerModelParams& params, std::uint64_t seed) {
    params.validate();
    Rng rng(seed);
    auto model = detail::sample_layered(params, rng);
    return {detail::rasterize(model, params.size, params.size), params.spacing};
}

inline VelocityMap gen_flat(const LayerModelParams& params, std::uint64_t seed) {
    LayerModelParams p = params;
    p.curvature_amplitude = 0.0f;
    return gen_curved(p, seed);
}

inline VelocityMap gen_faulted(const LayerModelParams& params, std::uint64_t seed) {
    params.validate();
    if (params.fault_throw_max < 1)
        throw std::invalid_argument("gen_faulted requires fault_throw_max >= 1");
    Rng rng(seed);
    auto model = detail::sample_layered(params, rng);
    Tensor base = detail::rasterize(model, params.size, params.size);
    const int throw_cells = rng.integer(params.fault_throw_min, params.fault_throw_max);
    const float dip = rng.uniform(params.fault_dip_min_deg, params.fault_dip_max_deg);
    const float pivot = rng.uniform(float(params.size) * 0.3f, float(params.size) * 0.6f);
    return {detail::apply_fault(base, throw_cells, dip, pivot), params.spacing};
}

inline LayerModelParams default_params(VelocityFamily fam, int size = 32) {
    LayerModelParams p;
    p.size = size;
    switch (fam) {
        case VelocityFamily::flatvel:
            break;
        case VelocityFamily::curvevel:
            p.curvature_amplitude = 3.0f;
            break;
        case VelocityFamily::flatfault:
            p.fault_throw_min = 3;
            p.fault_throw_max = 6;
            break;
        case VelocityFamily::curvefault:
            p.curvature_amplitude = 3.0f;
            p.fault_throw_min = 3;
            p.fault_throw_max = 6;
            break;
    }
    return p;
}

inline VelocityMap gen_family(VelocityFamily fam, const LayerModelParams& params,
                              std::uint64_t seed) {
    switch (fam) {
        case VelocityFamily::flatvel: return gen_flat(params, seed);
        case VelocityFamily::curvevel: return gen_curved(params, seed);
        case VelocityFamily::flatfault:
        case VelocityFamily::curvefault: return gen_faulted(params, seed);
    }
    throw std::invalid_argument("bad family");
}

// Sample i depends only on seed + i, so any sample can be regenerated alone.
inline std::vector<VelocityMap> gen_corpus(VelocityFamily fam, int count,
                                           const LayerModelParams& params, std::uint64_t seed) {
    if (count < 1) throw std::invalid_argument("corpus count must be >= 1");
    std::vector<VelocityMap> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i)
        out.push_back(gen_family(fam, params, seed + std::uint64_t(i)));
    return out;
}

}  // namespace ubdiff
