#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "ubdiff/data.hpp"

namespace ubdiff {

struct AcquisitionGeometry {
    int surface_row = 1;                 // just below the free-surface row 0
    std::vector<int> source_cols{4, 16, 27};
    std::vector<int> receiver_cols;      // empty => every column

    std::vector<int> receivers(int W) const {
        if (!receiver_cols.empty()) return receiver_cols;
        std::vector<int> r(W);
        for (int i = 0; i < W; ++i) r[i] = i;
        return r;
    }

    void validate(int H, int W) const {
        if (surface_row < 1 || surface_row >= H)
            throw std::invalid_argument("surface row outside grid interior");
        for (int c : source_cols)
            if (c < 0 || c >= W) throw std::invalid_argument("source column outside grid");
        for (int c : receiver_cols)
            if (c < 0 || c >= W) throw std::invalid_argument("receiver column outside grid");
        if (source_cols.empty()) throw std::invalid_argument("no sources");
    }
};

struct Wavelet {
    std::vector<float> samples;
    float dt = 1e-3f;
    float f0 = 15.0f;   // peak frequency, Hz
    float t0 = 0.1f;    // onset delay, seconds
};

struct SolverConfig {
    float dt = 1e-3f;
    int nt = 256;
    int sponge_width = 6;
    float sponge_strength = 0.015f;  // per-cell damping coefficient
    float cfl_safety = 0.9f;
};

// samples[k] = (1 - 2 a^2) exp(-a^2), a = pi f0 (k dt - t0), t0 = 1.5/f0.
inline Wavelet ricker(float f0, float dt, int nt) {
    if (!(f0 > 0) || !(dt > 0)) throw std::invalid_argument("ricker: f0 and dt must be positive");
    const float t0 = 1.5f / f0;
    if (float(nt) * dt < 2.0f * t0)
        throw std::invalid_argument("ricker: nt too small to contain the main lobe (nt*dt < 2*t0)");
    Wavelet w;
    w.dt = dt;
    w.f0 = f0;
    w.t0 = t0;
    w.samples.resize(nt);
    for (int k = 0; k < nt; ++k) {
        const double a = M_PI * f0 * (k * double(dt) - t0);
        w.samples[k] = float((1.0 - 2.0 * a * a) * std::exp(-a * a));
    }
    return w;
}

inline float cfl_max_dt(float v_max, float spacing, float cfl_safety) {
    return cfl_safety * spacing / (v_max * float(std::sqrt(2.0)));
}

// 2-D 2nd-order explicit scheme stability bound.
inline void check_cfl(const VelocityMap& vel, const SolverConfig& cfg) {
    const float vmax = vel.grid.max();
    const float dmax = cfl_max_dt(vmax, vel.spacing, cfg.cfl_safety);
    if (cfg.dt > dmax)
        throw std::invalid_argument("CFL violated: dt=" + std::to_string(cfg.dt) +
                                    " exceeds admissible dt=" + std::to_string(dmax) +
                                    " (v_max=" + std::to_string(vmax) + ")");
}

// Constant-density acoustic pressure propagation. Free surface (p = 0) on the
// top row; exponential damping sponge on the left/right/bottom edges. Sources
// run independently; the gather records pressure at the receiver row.
inline SeismicGather simulate(const VelocityMap& vel, const AcquisitionGeometry& geom,
                              const Wavelet& wav, const SolverConfig& cfg) {
    const int H = vel.grid.shape[0], W = vel.grid.shape[1];
    geom.validate(H, W);
    check_cfl(vel, cfg);
    if (cfg.sponge_width >= H / 2)
        throw std::invalid_argument("sponge width must be < H/2");
    for (float v : vel.grid.v)
        if (!(v > 0)) throw std::invalid_argument("velocity map has non-positive values");

    const auto receivers = geom.receivers(W);
    const int S = int(geom.source_cols.size());
    const int R = int(receivers.size());
    const int nt = cfg.nt;

    // Precompute (v dt / dx)^2 and the sponge taper.
    std::vector<double> c2(std::size_t(H) * W);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double a = double(vel.grid.at(i, j)) * cfg.dt / vel.spacing;
            c2[std::size_t(i) * W + j] = a * a;
        }
    std::vector<double> taper(std::size_t(H) * W, 1.0);
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            int d = cfg.sponge_width;  // distance into the sponge
            d = std::min(d, j);                  // left
            d = std::min(d, W - 1 - j);          // right
            d = std::min(d, H - 1 - i);          // bottom
            if (d < cfg.sponge_width) {
                const double x = double(cfg.sponge_width - d);
                taper[std::size_t(i) * W + j] = std::exp(-cfg.sponge_strength * x * x);
            }
        }

    SeismicGather gather;
    gather.dt = cfg.dt;
    gather.traces = Tensor({S, nt, R});

    std::vector<double> prev(std::size_t(H) * W), cur(std::size_t(H) * W),
        next(std::size_t(H) * W);
    const auto idx = [W](int i, int j) { return std::size_t(i) * W + j; };

    for (int s = 0; s < S; ++s) {
        std::fill(prev.begin(), prev.end(), 0.0);
        std::fill(cur.begin(), cur.end(), 0.0);
        const int sc = geom.source_cols[s];
        const int sr = geom.surface_row;
        for (int it = 0; it < nt; ++it) {
            for (int i = 1; i < H - 1; ++i)
                for (int j = 1; j < W - 1; ++j) {
                    const double lap = cur[idx(i + 1, j)] + cur[idx(i - 1, j)] +
                                       cur[idx(i, j + 1)] + cur[idx(i, j - 1)] -
                                       4.0 * cur[idx(i, j)];
                    next[idx(i, j)] =
                        2.0 * cur[idx(i, j)] - prev[idx(i, j)] + c2[idx(i, j)] * lap;
                }
            // one-sided columns (sponge damps them anyway)
            for (int i = 0; i < H; ++i) next[idx(i, 0)] = next[idx(i, W - 1)] = 0.0;
            for (int j = 0; j < W; ++j) next[idx(H - 1, j)] = 0.0;
            if (it < int(wav.samples.size()))
                next[idx(sr, sc)] += double(wav.samples[it]) * c2[idx(sr, sc)];
            for (int j = 0; j < W; ++j) next[idx(0, j)] = 0.0;  // free surface
            for (std::size_t k = 0; k < next.size(); ++k) {
                next[k] *= taper[k];
                cur[k] *= taper[k];
            }
            for (int r = 0; r < R; ++r) {
                const double p = next[idx(geom.surface_row, receivers[r])];
                if (!std::isfinite(p))
                    throw std::runtime_error("NaN in wavefield at step " + std::to_string(it) +
                                             " (source " + std::to_string(s) + ")");
                gather.traces.at(s, it, r) = float(p);
            }
            std::swap(prev, cur);
            std::swap(cur, next);
        }
    }
    return gather;
}

inline std::vector<SeismicGather> forward_corpus(const std::vector<VelocityMap>& vels,
                                                 const AcquisitionGeometry& geom,
                                                 const Wavelet& wav, const SolverConfig& cfg) {
    std::vector<SeismicGather> out;
    out.reserve(vels.size());
    for (std::size_t i = 0; i < vels.size(); ++i) {
        try {
            out.push_back(simulate(vels[i], geom, wav, cfg));
        } catch (const std::exception& e) {
            throw std::runtime_error("forward modeling failed at sample " + std::to_string(i) +
                                     ": " + e.what());
        }
    }
    return out;
}

}  // namespace ubdiff
