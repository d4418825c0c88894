#pragma once

#include <cmath>

#include "ubdiff/encdec.hpp"
#include "ubdiff/nn.hpp"
#include "ubdiff/rng.hpp"

namespace ubdiff {

// ---------------------------------------------------------------------------
// Variance-preserving noise schedule: alpha[t]^2 + sigma[t]^2 == 1
// ---------------------------------------------------------------------------

enum class ScheduleKind { cosine, linear };

inline std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::cosine ? "cosine" : "linear";
}
inline ScheduleKind schedule_from_string(const std::string& s) {
    if (s == "cosine") return ScheduleKind::cosine;
    if (s == "linear") return ScheduleKind::linear;
    throw std::invalid_argument("unknown schedule kind: " + s);
}

struct NoiseSchedule {
    int T = 256;
    ScheduleKind kind = ScheduleKind::cosine;
    std::vector<float> alpha;  // length T+1
    std::vector<float> sigma;  // length T+1
};

constexpr float kAlphaFloor = 1e-4f;  // keeps recover_z0 well-conditioned at t=T

inline NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::cosine) {
    if (T < 1) throw std::invalid_argument("schedule needs T >= 1");
    NoiseSchedule s;
    s.T = T;
    s.kind = kind;
    s.alpha.resize(T + 1);
    s.sigma.resize(T + 1);
    for (int t = 0; t <= T; ++t) {
        float a;
        if (kind == ScheduleKind::cosine) {
            a = std::cos(float(t) / float(T) * float(M_PI) / 2.0f);
        } else {
            // linear in signal power, same endpoints
            a = std::sqrt(1.0f - float(t) / float(T));
        }
        a = std::max(a, kAlphaFloor);
        s.alpha[t] = a;
        s.sigma[t] = std::sqrt(std::max(0.0f, 1.0f - a * a));
    }
    return s;
}

inline void check_t(const NoiseSchedule& s, int t) {
    if (t < 0 || t > s.T)
        throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0," +
                                    std::to_string(s.T) + "]");
}

// z_t = alpha[t] z0 + sigma[t] eps
inline Tensor q_sample(const Tensor& z0, int t, const Tensor& eps, const NoiseSchedule& s) {
    check_t(s, t);
    check_same_shape(z0, eps, "q_sample");
    Tensor out(z0.shape);
    for (std::size_t i = 0; i < z0.size(); ++i) out[i] = s.alpha[t] * z0[i] + s.sigma[t] * eps[i];
    return out;
}

// u = alpha[t] eps - sigma[t] z0
inline Tensor v_target(const Tensor& z0, const Tensor& eps, int t, const NoiseSchedule& s) {
    check_t(s, t);
    check_same_shape(z0, eps, "v_target");
    Tensor out(z0.shape);
    for (std::size_t i = 0; i < z0.size(); ++i) out[i] = s.alpha[t] * eps[i] - s.sigma[t] * z0[i];
    return out;
}

// exact inverses under alpha^2 + sigma^2 = 1
inline Tensor recover_z0(const Tensor& z_t, const Tensor& u, int t, const NoiseSchedule& s) {
    check_t(s, t);
    check_same_shape(z_t, u, "recover_z0");
    Tensor out(z_t.shape);
    for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = s.alpha[t] * z_t[i] - s.sigma[t] * u[i];
    return out;
}

inline Tensor recover_eps(const Tensor& z_t, const Tensor& u, int t, const NoiseSchedule& s) {
    check_t(s, t);
    check_same_shape(z_t, u, "recover_eps");
    Tensor out(z_t.shape);
    for (std::size_t i = 0; i < z_t.size(); ++i) out[i] = s.sigma[t] * z_t[i] + s.alpha[t] * u[i];
    return out;
}

// ---------------------------------------------------------------------------
// Denoiser: residual MLP with sinusoidal timestep embedding added per block.
// The co-latent is a length-c vector, so the usual U-Net degenerates.
// ---------------------------------------------------------------------------

inline Tensor timestep_embedding(const std::vector<int>& ts, int dim, int T) {
    Tensor e({int(ts.size()), dim});
    for (std::size_t b = 0; b < ts.size(); ++b)
        for (int i = 0; i < dim / 2; ++i) {
            const double freq = std::exp(-std::log(10000.0) * double(i) / double(dim / 2));
            const double x = double(ts[b]) / double(T) * 1000.0 * freq;
            e.at(int(b), 2 * i) = float(std::sin(x));
            e.at(int(b), 2 * i + 1) = float(std::cos(x));
        }
    return e;
}

class DenoiserMlp {
  public:
    DenoiserMlp(int latent_dim = 128, int hidden = 512, int blocks = 4, int T = 256)
        : c_(latent_dim), h_(hidden), nb_(blocks), T_(T),
          in_("denoiser.in", latent_dim, hidden), out_("denoiser.out", hidden, latent_dim) {
        for (int i = 0; i < nb_; ++i) {
            const std::string n = "denoiser.blk" + std::to_string(i);
            lin1_.push_back(std::make_unique<nn::Linear>(n + ".l1", hidden, hidden));
            temb_.push_back(std::make_unique<nn::Linear>(n + ".temb", latent_dim, hidden));
            lin2_.push_back(std::make_unique<nn::Linear>(n + ".l2", hidden, hidden));
            act_.push_back(std::make_unique<nn::SiLU>());
        }
    }

    int latent_dim() const { return c_; }
    int horizon() const { return T_; }

    void init(Rng& rng) {
        in_.init(rng);
        out_.init(rng);
        for (int i = 0; i < nb_; ++i) {
            lin1_[i]->init(rng);
            temb_[i]->init(rng);
            lin2_[i]->init(rng);
            // zero-init the block output so training starts near identity
            lin2_[i]->W_.w.zero();
            lin2_[i]->b_.w.zero();
        }
    }

    // z_t: [B, c], ts: per-sample timesteps
    Tensor forward(const Tensor& z_t, const std::vector<int>& ts) {
        if (z_t.shape.size() != 2 || z_t.shape[1] != c_)
            throw std::invalid_argument("denoiser expects [B,c] latents, got " +
                                        shape_str(z_t.shape));
        if (int(ts.size()) != z_t.shape[0])
            throw std::invalid_argument("denoiser: timestep count mismatch");
        temb_in_ = timestep_embedding(ts, c_, T_);
        Tensor h = in_.forward(z_t);
        for (int i = 0; i < nb_; ++i) {
            Tensor a = lin1_[i]->forward(h);
            Tensor e = temb_[i]->forward(temb_in_);
            for (std::size_t k = 0; k < a.size(); ++k) a[k] += e[k];
            Tensor f = lin2_[i]->forward(act_[i]->forward(a));
            for (std::size_t k = 0; k < h.size(); ++k) h[k] += f[k];
        }
        return out_.forward(h);
    }

    Tensor backward(const Tensor& gy) {
        Tensor gh = out_.backward(gy);
        for (int i = nb_ - 1; i >= 0; --i) {
            Tensor ga = act_[i]->backward(lin2_[i]->backward(gh));
            temb_[i]->backward(ga);
            Tensor g1 = lin1_[i]->backward(ga);
            for (std::size_t k = 0; k < gh.size(); ++k) gh[k] += g1[k];
        }
        return in_.backward(gh);
    }

    std::vector<nn::Param*> params() {
        std::vector<nn::Param*> p;
        in_.collect(p);
        for (int i = 0; i < nb_; ++i) {
            lin1_[i]->collect(p);
            temb_[i]->collect(p);
            lin2_[i]->collect(p);
        }
        out_.collect(p);
        return p;
    }

  private:
    int c_, h_, nb_, T_;
    nn::Linear in_, out_;
    std::vector<std::unique_ptr<nn::Linear>> lin1_, temb_, lin2_;
    std::vector<std::unique_ptr<nn::SiLU>> act_;
    Tensor temb_in_;
};

// Per-dimension affine whitening of encoder latents, fit on the training
// corpus and inverted at generation time. Stored with the checkpoint.
struct LatentWhitener {
    std::vector<float> mean, inv_std;

    static LatentWhitener fit(const Tensor& latents) {  // [N, c]
        const int N = latents.shape[0], c = latents.shape[1];
        LatentWhitener w;
        w.mean.assign(c, 0.0f);
        w.inv_std.assign(c, 1.0f);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < c; ++j) w.mean[j] += latents.at(i, j);
        for (auto& m : w.mean) m /= float(N);
        std::vector<double> var(c, 0.0);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < c; ++j) {
                const double d = latents.at(i, j) - w.mean[j];
                var[j] += d * d;
            }
        for (int j = 0; j < c; ++j)
            w.inv_std[j] = float(1.0 / std::sqrt(var[j] / std::max(1, N - 1) + 1e-8));
        return w;
    }

    Tensor whiten(const Tensor& z) const {
        Tensor out = z;
        const int c = int(mean.size());
        for (std::size_t i = 0; i < z.size(); ++i)
            out[i] = (z[i] - mean[i % c]) * inv_std[i % c];
        return out;
    }
    Tensor unwhiten(const Tensor& z) const {
        Tensor out = z;
        const int c = int(mean.size());
        for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] / inv_std[i % c] + mean[i % c];
        return out;
    }

    json to_json() const { return json{{"mean", mean}, {"inv_std", inv_std}}; }
    static LatentWhitener from_json(const json& j) {
        LatentWhitener w;
        w.mean = j.at("mean").get<std::vector<float>>();
        w.inv_std = j.at("inv_std").get<std::vector<float>>();
        return w;
    }
};

struct DiffusionTrainConfig {
    long steps = 20000;        // paper scale: 150000
    float lr = 8e-5f;
    int grad_accum = 2;
    float ema_decay = 0.995f;
    int batch_size = 64;
    std::uint64_t seed = 0;

    void validate() const {
        if (steps < 1 || batch_size < 1 || grad_accum < 1)
            throw std::invalid_argument("diffusion config: positive counts required");
        if (!(ema_decay > 0.0f) || !(ema_decay < 1.0f))
            throw std::invalid_argument("ema_decay must be in (0, 1)");
    }
};

struct DenoiserState {
    DenoiserMlp net;
    std::vector<Tensor> ema;  // shadow parameters, shape-congruent with net
    NoiseSchedule schedule;
    LatentWhitener whitener;
    long step = 0;
    std::vector<double> loss_history;

    explicit DenoiserState(int latent_dim = 128, int hidden = 512, int blocks = 4, int T = 256)
        : net(latent_dim, hidden, blocks, T), schedule(make_schedule(T)) {}

    bool trained() const { return step > 0; }

    void init_ema() {
        ema.clear();
        for (auto* p : net.params()) ema.push_back(p->w);
    }

    void update_ema(float decay) {
        auto ps = net.params();
        for (std::size_t k = 0; k < ps.size(); ++k)
            for (std::size_t i = 0; i < ema[k].size(); ++i)
                ema[k][i] = decay * ema[k][i] + (1.0f - decay) * ps[k]->w[i];
    }

    // temporarily load EMA weights for sampling
    std::vector<Tensor> swap_in_ema() {
        auto ps = net.params();
        std::vector<Tensor> live;
        for (std::size_t k = 0; k < ps.size(); ++k) {
            live.push_back(ps[k]->w);
            ps[k]->w = ema[k];
        }
        return live;
    }
    void swap_back(std::vector<Tensor>&& live) {
        auto ps = net.params();
        for (std::size_t k = 0; k < ps.size(); ++k) ps[k]->w = std::move(live[k]);
    }
};

// One training step's loss on an explicit batch; exposed for tests.
inline double diffusion_batch_loss(DenoiserMlp& net, const Tensor& z0_batch,
                                   const std::vector<int>& ts, const Tensor& eps_batch,
                                   const NoiseSchedule& sched, Tensor* grad_out = nullptr) {
    const int B = z0_batch.shape[0], c = z0_batch.shape[1];
    Tensor z_t({B, c}), u_t({B, c});
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < c; ++j) {
            const float a = sched.alpha[ts[b]], s = sched.sigma[ts[b]];
            z_t.at(b, j) = a * z0_batch.at(b, j) + s * eps_batch.at(b, j);
            u_t.at(b, j) = a * eps_batch.at(b, j) - s * z0_batch.at(b, j);
        }
    Tensor pred = net.forward(z_t, ts);
    double loss = 0.0;
    Tensor g(pred.shape);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = double(pred[i]) - double(u_t[i]);
        loss += d * d;
        g[i] = float(2.0 * d / double(pred.size()));
    }
    loss /= double(pred.size());
    if (grad_out) *grad_out = g;
    return loss;
}

// Train the v-prediction denoiser on encoded majority latents. The encoder is
// used read-only; latents are pre-encoded by the caller ([N, c], whitened).
inline void train_diffusion(DenoiserState& state, const Tensor& latents,
                            const DiffusionTrainConfig& cfg) {
    cfg.validate();
    const int N = latents.shape[0];
    if (N < 1) throw std::invalid_argument("train_diffusion: empty latent corpus");
    const int c = latents.shape[1];
    if (c != state.net.latent_dim())
        throw std::invalid_argument("train_diffusion: latent dim mismatch");

    Rng rng(derive_seed("train_diffusion", cfg.seed));
    nn::Adam opt(state.net.params(), cfg.lr);
    if (state.ema.empty()) state.init_ema();

    const int T = state.schedule.T;
    opt.zero_grad();
    int accum = 0;
    for (long step = 0; step < cfg.steps; ++step) {
        Tensor z0({cfg.batch_size, c}), eps({cfg.batch_size, c});
        std::vector<int> ts(cfg.batch_size);
        for (int b = 0; b < cfg.batch_size; ++b) {
            const int i = rng.index(N);
            for (int j = 0; j < c; ++j) z0.at(b, j) = latents.at(i, j);
            ts[b] = rng.integer(1, T);
            for (int j = 0; j < c; ++j) eps.at(b, j) = rng.normal();
        }
        Tensor g;
        const double loss = diffusion_batch_loss(state.net, z0, ts, eps, state.schedule, &g);
        if (!std::isfinite(loss))
            throw std::runtime_error("NaN diffusion loss at step " + std::to_string(step));
        state.net.backward(g);
        state.loss_history.push_back(loss);
        if (++accum == cfg.grad_accum) {
            opt.step();
            opt.zero_grad();
            accum = 0;
            state.update_ema(cfg.ema_decay);
        }
        ++state.step;
    }
}

enum class SamplerKind { deterministic, ancestral };

// Reverse-time sampling from z_T ~ N(0, I) over an evenly spaced timestep
// subsequence. Uses the EMA parameters.
inline Tensor sample_latent(DenoiserState& state, int steps, std::uint64_t seed,
                            SamplerKind sampler = SamplerKind::deterministic, int count = 1) {
    if (!state.trained()) throw std::invalid_argument("sample_latent: untrained denoiser");
    const int T = state.schedule.T;
    if (steps < 1 || steps > T) throw std::invalid_argument("sample steps must be in [1, T]");
    const int c = state.net.latent_dim();
    const auto& al = state.schedule.alpha;
    const auto& sg = state.schedule.sigma;

    std::vector<int> seq(steps + 1);  // T = t_0 > t_1 > ... > t_steps = 0
    for (int k = 0; k <= steps; ++k)
        seq[k] = int(std::lround(double(T) * (1.0 - double(k) / double(steps))));

    auto live = state.swap_in_ema();
    Tensor out({count, c});
    for (int i = 0; i < count; ++i) {
        Rng rng(derive_seed("sample", seed, std::uint64_t(i)));
        Tensor z({1, c});
        rng.fill_normal(z);
        for (int k = 0; k < steps; ++k) {
            const int t = seq[k], tp = seq[k + 1];
            Tensor u = state.net.forward(z, {t});
            Tensor zh = recover_z0(z, u, t, state.schedule);
            Tensor eh = recover_eps(z, u, t, state.schedule);
            if (sampler == SamplerKind::deterministic || tp == 0) {
                for (int j = 0; j < c; ++j) z[j] = al[tp] * zh[j] + sg[tp] * eh[j];
            } else {
                // DDIM eta=1 ancestral variant
                const float r = (sg[tp] / std::max(sg[t], 1e-12f)) *
                                std::sqrt(std::max(0.0f, 1.0f - (al[t] * al[t]) /
                                                               (al[tp] * al[tp])));
                const float dir = std::sqrt(std::max(0.0f, sg[tp] * sg[tp] - r * r));
                for (int j = 0; j < c; ++j)
                    z[j] = al[tp] * zh[j] + dir * eh[j] + r * rng.normal();
            }
        }
        for (int j = 0; j < c; ++j) out.at(i, j) = z[j];
    }
    state.swap_back(std::move(live));
    return out;
}

// Decode each sampled co-latent through both heads; paired by construction.
inline std::vector<std::pair<Tensor, Tensor>> generate_pairs(DenoiserState& state,
                                                             TwoHeadNet& net, int count,
                                                             std::uint64_t seed,
                                                             int sample_steps = 64) {
    Tensor z = sample_latent(state, sample_steps, seed, SamplerKind::deterministic, count);
    Tensor z0 = state.whitener.mean.empty() ? z : state.whitener.unwhiten(z);
    std::vector<std::pair<Tensor, Tensor>> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        Tensor zi({1, z0.shape[1]});
        for (int j = 0; j < z0.shape[1]; ++j) zi.at(0, j) = z0.at(i, j);
        Tensor vel = net.decode_velocity(zi);
        Tensor seis = net.decode_seismic(zi);
        vel.shape = {vel.shape[1], vel.shape[2]};
        seis.shape = {seis.shape[1], seis.shape[2], seis.shape[3]};
        out.emplace_back(std::move(vel), std::move(seis));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Denoiser checkpointing (live + EMA + schedule + whitener)
// ---------------------------------------------------------------------------

inline void save_denoiser(DenoiserState& state, const fs::path& dir) {
    auto params = state.net.params();
    json meta{{"step", state.step},
              {"schedule", {{"T", state.schedule.T}, {"kind", to_string(state.schedule.kind)}}},
              {"whitener", state.whitener.to_json()},
              {"latent_dim", state.net.latent_dim()}};
    save_params(params, dir, meta);
    for (std::size_t k = 0; k < state.ema.size(); ++k)
        write_f32(dir / (params[k]->name + ".ema.f32"), state.ema[k]);
}

inline void load_denoiser(DenoiserState& state, const fs::path& dir) {
    auto params = state.net.params();
    json meta = load_params(params, dir);
    state.step = meta.at("step").get<long>();
    state.schedule = make_schedule(meta.at("schedule").at("T").get<int>(),
                                   schedule_from_string(meta.at("schedule").at("kind")));
    state.whitener = LatentWhitener::from_json(meta.at("whitener"));
    state.ema.clear();
    for (auto* p : params) state.ema.push_back(read_f32(dir / (p->name + ".ema.f32"), p->w.shape));
}

}  // namespace ubdiff
