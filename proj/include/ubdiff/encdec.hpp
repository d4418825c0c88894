#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ubdiff/data.hpp"
#include "ubdiff/nn.hpp"

namespace ubdiff {

// ---------------------------------------------------------------------------
// Losses (Eq. 4 structure). Scalar-templated so double-precision gradient
// checks run through the same code path.
// ---------------------------------------------------------------------------

struct LossWeights {
    float g1 = 1.0f, g2 = 1.0f, g3 = 1.0f, g4 = 1.0f;
    int F = 0;  // freeze flag

    void validate() const {
        if (F != 0 && F != 1) throw std::invalid_argument("freeze flag must be 0 or 1");
        if (g1 < 0 || g2 < 0 || g3 < 0 || g4 < 0)
            throw std::invalid_argument("loss weights must be non-negative");
    }
};

namespace detail {

template <typename S>
S l1l2(const S* pred, const S* target, std::size_t n, S gamma_l1, S gamma_l2) {
    S s1 = 0, s2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const S d = pred[i] - target[i];
        s1 += d < 0 ? -d : d;
        s2 += d * d;
    }
    return gamma_l1 * s1 / S(n) + gamma_l2 * s2 / S(n);
}

template <typename S>
void l1l2_grad(const S* pred, const S* target, std::size_t n, S gamma_l1, S gamma_l2, S* gout) {
    for (std::size_t i = 0; i < n; ++i) {
        const S d = pred[i] - target[i];
        const S sgn = d > 0 ? S(1) : (d < 0 ? S(-1) : S(0));
        gout[i] = (gamma_l1 * sgn + S(2) * gamma_l2 * d) / S(n);
    }
}

}  // namespace detail

// l_ma = g1 * mean-L1 + g2 * mean-L2^2
inline double loss_majority(const Tensor& pred, const Tensor& target, const LossWeights& w) {
    w.validate();
    check_same_shape(pred, target, "loss_majority");
    std::vector<double> p(pred.v.begin(), pred.v.end()), t(target.v.begin(), target.v.end());
    return detail::l1l2<double>(p.data(), t.data(), p.size(), w.g1, w.g2);
}

inline Tensor loss_majority_grad(const Tensor& pred, const Tensor& target, const LossWeights& w) {
    w.validate();
    check_same_shape(pred, target, "loss_majority_grad");
    Tensor g(pred.shape);
    detail::l1l2_grad<float>(pred.data(), target.data(), pred.size(), w.g1, w.g2, g.data());
    return g;
}

// l_mi = (1 - F) * l_ma + g3 * mean-L1(mi) + g4 * mean-L2^2(mi)
inline double loss_minority(const Tensor& pred_ma, const Tensor& target_ma, const Tensor& pred_mi,
                            const Tensor& target_mi, const LossWeights& w) {
    w.validate();
    check_same_shape(pred_mi, target_mi, "loss_minority");
    std::vector<double> p(pred_mi.v.begin(), pred_mi.v.end()),
        t(target_mi.v.begin(), target_mi.v.end());
    double l = detail::l1l2<double>(p.data(), t.data(), p.size(), double(w.g3), double(w.g4));
    if (w.F == 0) l += loss_majority(pred_ma, target_ma, w);
    return l;
}

inline Tensor loss_minority_grad_mi(const Tensor& pred_mi, const Tensor& target_mi,
                                    const LossWeights& w) {
    w.validate();
    check_same_shape(pred_mi, target_mi, "loss_minority_grad_mi");
    Tensor g(pred_mi.shape);
    detail::l1l2_grad<float>(pred_mi.data(), target_mi.data(), pred_mi.size(), w.g3, w.g4,
                             g.data());
    return g;
}

// gradient of the (1-F) * l_ma term w.r.t. pred_ma; zero tensor when F == 1
inline Tensor loss_minority_grad_ma(const Tensor& pred_ma, const Tensor& target_ma,
                                    const LossWeights& w) {
    if (w.F == 1) return Tensor(pred_ma.shape);
    return loss_majority_grad(pred_ma, target_ma, w);
}

// ---------------------------------------------------------------------------
// Seismic token fold: 64 tokens of 384 values <-> S x Tt x R
// Token grid is 4 time chunks x 16 receiver chunks; each token carries all
// S source channels of its (64-time x 2-receiver) patch.
// ---------------------------------------------------------------------------
struct SeismicTokenLayout {
    int S = 3, Tt = 256, R = 32;
    int time_chunks = 4, recv_chunks = 16;

    int tokens() const { return time_chunks * recv_chunks; }
    int patch() const { return S * (Tt / time_chunks) * (R / recv_chunks); }

    Tensor fold(const Tensor& tok) const {  // [B, tokens, patch] -> [B, S, Tt, R]
        const int B = tok.shape[0];
        const int dt_len = Tt / time_chunks, dr_len = R / recv_chunks;
        Tensor out({B, S, Tt, R});
        for (int b = 0; b < B; ++b)
            for (int tt = 0; tt < time_chunks; ++tt)
                for (int rr = 0; rr < recv_chunks; ++rr) {
                    const int tk = tt * recv_chunks + rr;
                    for (int s = 0; s < S; ++s)
                        for (int dt = 0; dt < dt_len; ++dt)
                            for (int dr = 0; dr < dr_len; ++dr)
                                out.at(b, s, tt * dt_len + dt, rr * dr_len + dr) =
                                    tok.at(b, tk, (s * dt_len + dt) * dr_len + dr);
                }
        return out;
    }

    Tensor unfold(const Tensor& g) const {  // [B, S, Tt, R] -> [B, tokens, patch]
        const int B = g.shape[0];
        const int dt_len = Tt / time_chunks, dr_len = R / recv_chunks;
        Tensor out({B, tokens(), patch()});
        for (int b = 0; b < B; ++b)
            for (int tt = 0; tt < time_chunks; ++tt)
                for (int rr = 0; rr < recv_chunks; ++rr) {
                    const int tk = tt * recv_chunks + rr;
                    for (int s = 0; s < S; ++s)
                        for (int dt = 0; dt < dt_len; ++dt)
                            for (int dr = 0; dr < dr_len; ++dr)
                                out.at(b, tk, (s * dt_len + dt) * dr_len + dr) =
                                    g.at(b, s, tt * dt_len + dt, rr * dr_len + dr);
                }
        return out;
    }
};

// Learned positional embedding added to a [B, T, D] token stream.
class PosEmbed : public nn::Layer {
  public:
    PosEmbed(std::string name, int tokens, int dim)
        : T_(tokens), D_(dim), pe_(name + ".pe", {tokens, dim}) {}

    void init(Rng& rng) override {
        for (auto& x : pe_.w.v) x = rng.normal() * 0.02f;
    }

    Tensor forward(const Tensor& x) override {
        Tensor y = x;
        const int B = x.shape[0];
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T_; ++t)
                for (int d = 0; d < D_; ++d) y.at(b, t, d) += pe_.w.at(t, d);
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        const int B = gy.shape[0];
        for (int b = 0; b < B; ++b)
            for (int t = 0; t < T_; ++t)
                for (int d = 0; d < D_; ++d) pe_.g.at(t, d) += gy.at(b, t, d);
        return gy;
    }
    void collect(std::vector<nn::Param*>& out) override { out.push_back(&pe_); }

  private:
    int T_, D_;
    nn::Param pe_;
};

// ---------------------------------------------------------------------------
// Network configuration
// ---------------------------------------------------------------------------
struct NetConfig {
    Modality majority = Modality::velocity;
    int latent_dim = 128;
    int vel_size = 32;
    int seis_sources = 3, seis_time = 256, seis_receivers = 32;
    int attn_blocks = 4, attn_heads = 4, attn_ff = 256;
    int token_dim = 128;
};

// The 1-in-2-out network: one encoder to the co-latent, a linear projection
// per modality, a CNN velocity decoder and a transformer seismic decoder.
class TwoHeadNet {
  public:
    explicit TwoHeadNet(const NetConfig& cfg = {}) : cfg_(cfg), layout_() {
        layout_.S = cfg.seis_sources;
        layout_.Tt = cfg.seis_time;
        layout_.R = cfg.seis_receivers;
        build();
    }

    const NetConfig& config() const { return cfg_; }

    void init(Rng& rng) {
        encoder_.init(rng);
        proj_v_->init(rng);
        proj_s_->init(rng);
        dec_v_.init(rng);
        dec_s_.init(rng);
    }

    // --- inference -----------------------------------------------------

    // ma batch: [B, 32, 32] (velocity majority) or [B, S, Tt, R] (seismic)
    Tensor encode(const Tensor& ma) {
        ++encode_calls_;
        return encoder_.forward(as_encoder_input(ma));
    }

    Tensor decode_velocity(const Tensor& z) {
        check_latent(z);
        Tensor y = dec_v_.forward(proj_v_->forward(z));  // [B, 1, H, W]
        y.shape = {y.shape[0], cfg_.vel_size, cfg_.vel_size};
        return y;
    }

    Tensor decode_seismic(const Tensor& z) {
        check_latent(z);
        Tensor tok = dec_s_.forward(proj_s_->forward(z));  // [B, tokens, patch]
        return layout_.fold(tok);
    }

    std::pair<Tensor, Tensor> forward_pair(const Tensor& ma) {
        Tensor z = encode(ma);
        return {decode_velocity(z), decode_seismic(z)};
    }

    // --- backward plumbing (matched to the latest forward) --------------

    Tensor backward_velocity(const Tensor& gy) {  // returns grad w.r.t. z
        Tensor g = gy;
        g.shape = {gy.shape[0], 1, cfg_.vel_size, cfg_.vel_size};
        return proj_v_->backward(dec_v_.backward(g));
    }

    Tensor backward_seismic(const Tensor& gy) {
        return proj_s_->backward(dec_s_.backward(layout_.unfold(gy)));
    }

    Tensor backward_encoder(const Tensor& gz) { return encoder_.backward(gz); }

    // --- parameter partition --------------------------------------------

    std::vector<nn::Param*> params_encoder() {
        std::vector<nn::Param*> p;
        encoder_.collect(p);
        return p;
    }
    std::vector<nn::Param*> params_proj_v() {
        std::vector<nn::Param*> p;
        proj_v_->collect(p);
        return p;
    }
    std::vector<nn::Param*> params_dec_v() {
        std::vector<nn::Param*> p;
        dec_v_.collect(p);
        return p;
    }
    std::vector<nn::Param*> params_proj_s() {
        std::vector<nn::Param*> p;
        proj_s_->collect(p);
        return p;
    }
    std::vector<nn::Param*> params_dec_s() {
        std::vector<nn::Param*> p;
        dec_s_.collect(p);
        return p;
    }
    std::vector<nn::Param*> params_all() {
        std::vector<nn::Param*> p;
        encoder_.collect(p);
        proj_v_->collect(p);
        dec_v_.collect(p);
        proj_s_->collect(p);
        dec_s_.collect(p);
        return p;
    }

    // majority path = encoder + majority projection + majority decoder
    std::vector<nn::Param*> params_majority_path() {
        std::vector<nn::Param*> p = params_encoder();
        if (cfg_.majority == Modality::velocity) {
            for (auto* q : params_proj_v()) p.push_back(q);
            for (auto* q : params_dec_v()) p.push_back(q);
        } else {
            for (auto* q : params_proj_s()) p.push_back(q);
            for (auto* q : params_dec_s()) p.push_back(q);
        }
        return p;
    }
    std::vector<nn::Param*> params_minority_path() {
        std::vector<nn::Param*> p;
        if (cfg_.majority == Modality::velocity) {
            for (auto* q : params_proj_s()) p.push_back(q);
            for (auto* q : params_dec_s()) p.push_back(q);
        } else {
            for (auto* q : params_proj_v()) p.push_back(q);
            for (auto* q : params_dec_v()) p.push_back(q);
        }
        return p;
    }

    long encode_calls() const { return encode_calls_; }

    // decode for the configured majority/minority roles
    Tensor decode_majority(const Tensor& z) {
        return cfg_.majority == Modality::velocity ? decode_velocity(z) : decode_seismic(z);
    }
    Tensor decode_minority(const Tensor& z) {
        return cfg_.majority == Modality::velocity ? decode_seismic(z) : decode_velocity(z);
    }
    Tensor backward_majority(const Tensor& gy) {
        return cfg_.majority == Modality::velocity ? backward_velocity(gy) : backward_seismic(gy);
    }
    Tensor backward_minority(const Tensor& gy) {
        return cfg_.majority == Modality::velocity ? backward_seismic(gy) : backward_velocity(gy);
    }

  private:
    NetConfig cfg_;
    SeismicTokenLayout layout_;
    nn::Sequential encoder_;
    nn::Linear* proj_v_ = nullptr;
    nn::Linear* proj_s_ = nullptr;
    nn::Sequential proj_v_holder_, proj_s_holder_;
    nn::Sequential dec_v_, dec_s_;
    long encode_calls_ = 0;

    void check_latent(const Tensor& z) const {
        if (z.shape.size() != 2 || z.shape[1] != cfg_.latent_dim)
            throw std::invalid_argument("latent must be [B," + std::to_string(cfg_.latent_dim) +
                                        "], got " + shape_str(z.shape));
        if (!z.all_finite()) throw std::invalid_argument("latent contains non-finite values");
    }

    Tensor as_encoder_input(const Tensor& ma) const {
        if (cfg_.majority == Modality::velocity) {
            if (ma.shape.size() == 3 && ma.shape[1] == cfg_.vel_size &&
                ma.shape[2] == cfg_.vel_size) {
                Tensor x = ma;
                x.shape = {ma.shape[0], 1, cfg_.vel_size, cfg_.vel_size};
                return x;
            }
            throw std::invalid_argument("encoder expects [B,32,32] velocity batch, got " +
                                        shape_str(ma.shape));
        }
        if (ma.shape.size() == 4 && ma.shape[1] == cfg_.seis_sources &&
            ma.shape[2] == cfg_.seis_time && ma.shape[3] == cfg_.seis_receivers)
            return ma;
        throw std::invalid_argument("encoder expects [B,S,Tt,R] seismic batch, got " +
                                    shape_str(ma.shape));
    }

    void build() {
        const int c = cfg_.latent_dim;
        if (cfg_.majority == Modality::velocity) {
            // 32 -> 16 -> 8 -> 4 -> 2 -> 1
            encoder_.add<nn::Conv2d>("encoder.c1", 1, 16, 2, 2);
            encoder_.add<nn::GroupNorm>("encoder.n1", 16, 4);
            encoder_.add<nn::SiLU>();
            encoder_.add<nn::Conv2d>("encoder.c2", 16, 32, 2, 2);
            encoder_.add<nn::GroupNorm>("encoder.n2", 32, 8);
            encoder_.add<nn::SiLU>();
            encoder_.add<nn::Conv2d>("encoder.c3", 32, 64, 2, 2);
            encoder_.add<nn::GroupNorm>("encoder.n3", 64, 8);
            encoder_.add<nn::SiLU>();
            encoder_.add<nn::Conv2d>("encoder.c4", 64, c, 2, 2);
            encoder_.add<nn::GroupNorm>("encoder.n4", c, 8);
            encoder_.add<nn::SiLU>();
            encoder_.add<nn::Conv2d>("encoder.c5", c, c, 2, 2);
            encoder_.add<nn::Reshape>(std::vector<int>{c});
        } else {
            // temporal compression first: 256x32 -> ... -> 1x1
            encoder_.add<nn::Conv2d>("encoder.c1", cfg_.seis_sources, 16, 2, 1);
            encoder_.add<nn::GroupNorm>("encoder.n1", 16, 4);
            encoder_.add<nn::SiLU>();
            encoder_.add<nn::Conv2d>("encoder.c2", 16, 32, 2, 2);
            encoder_.add<nn::GroupNorm>("encoder.n2", 32, 8);
            encoder_.add<nn::SiLU>();
            encoder_.add<nn::Conv2d>("encoder.c3", 32, 32, 2, 2);
            encoder_.add<nn::GroupNorm>("encoder.n3", 32, 8);
            encoder_.add<nn::SiLU>();
            encoder_.add<nn::Conv2d>("encoder.c4", 32, 64, 2, 2);
            encoder_.add<nn::GroupNorm>("encoder.n4", 64, 8);
            encoder_.add<nn::SiLU>();
            encoder_.add<nn::Conv2d>("encoder.c5", 64, 64, 2, 2);
            encoder_.add<nn::GroupNorm>("encoder.n5", 64, 8);
            encoder_.add<nn::SiLU>();
            encoder_.add<nn::Conv2d>("encoder.c6", 64, c, 2, 2);
            encoder_.add<nn::GroupNorm>("encoder.n6", c, 8);
            encoder_.add<nn::SiLU>();
            encoder_.add<nn::Conv2d>("encoder.c7", c, c, 2, 1);
            encoder_.add<nn::GroupNorm>("encoder.n7", c, 8);
            encoder_.add<nn::SiLU>();
            encoder_.add<nn::Conv2d>("encoder.c8", c, c, 2, 1);
            encoder_.add<nn::Reshape>(std::vector<int>{c});
        }

        proj_v_ = proj_v_holder_.add<nn::Linear>("proj_v.lin", c, c);
        proj_s_ = proj_s_holder_.add<nn::Linear>("proj_s.lin", c,
                                                 layout_.tokens() * cfg_.token_dim);

        // D_v: nearest-neighbor upsampling + conv mirror of the encoder
        dec_v_.add<nn::Reshape>(std::vector<int>{c, 1, 1});
        dec_v_.add<nn::UpsampleNearest2x>();
        dec_v_.add<nn::Conv2d>("dec_v.c1", c, c, 1, 1);
        dec_v_.add<nn::GroupNorm>("dec_v.n1", c, 8);
        dec_v_.add<nn::SiLU>();
        dec_v_.add<nn::UpsampleNearest2x>();
        dec_v_.add<nn::Conv2d>("dec_v.c2", c, 64, 1, 1);
        dec_v_.add<nn::GroupNorm>("dec_v.n2", 64, 8);
        dec_v_.add<nn::SiLU>();
        dec_v_.add<nn::UpsampleNearest2x>();
        dec_v_.add<nn::Conv2d>("dec_v.c3", 64, 32, 1, 1);
        dec_v_.add<nn::GroupNorm>("dec_v.n3", 32, 8);
        dec_v_.add<nn::SiLU>();
        dec_v_.add<nn::UpsampleNearest2x>();
        dec_v_.add<nn::Conv2d>("dec_v.c4", 32, 16, 1, 1);
        dec_v_.add<nn::GroupNorm>("dec_v.n4", 16, 4);
        dec_v_.add<nn::SiLU>();
        dec_v_.add<nn::UpsampleNearest2x>();
        dec_v_.add<nn::Conv2d>("dec_v.c5", 16, 16, 1, 1);
        dec_v_.add<nn::GroupNorm>("dec_v.n5", 16, 4);
        dec_v_.add<nn::SiLU>();
        dec_v_.add<nn::Conv2d>("dec_v.c6", 16, 1, 1, 1);
        dec_v_.add<nn::Tanh>();

        // D_s: tokens + positional embedding + attention blocks + patch head
        dec_s_.add<nn::Reshape>(std::vector<int>{layout_.tokens(), cfg_.token_dim});
        dec_s_.add<PosEmbed>("dec_s.pos", layout_.tokens(), cfg_.token_dim);
        for (int i = 0; i < cfg_.attn_blocks; ++i)
            dec_s_.add<nn::TransformerBlock>("dec_s.blk" + std::to_string(i), cfg_.token_dim,
                                             cfg_.attn_heads, cfg_.attn_ff);
        dec_s_.add<nn::LayerNorm>("dec_s.ln", cfg_.token_dim);
        dec_s_.add<nn::Linear>("dec_s.head", cfg_.token_dim, layout_.patch());
        dec_s_.add<nn::Tanh>();
    }
};

// ---------------------------------------------------------------------------
// Checkpoints: meta.json + one .f32 file per parameter tensor
// ---------------------------------------------------------------------------

inline void save_params(const std::vector<nn::Param*>& params, const fs::path& dir,
                        const json& extra_meta = json::object()) {
    fs::create_directories(dir);
    json meta = extra_meta;
    json plist = json::array();
    for (const auto* p : params)
        plist.push_back({{"name", p->name}, {"shape", p->w.shape}});
    meta["params"] = plist;
    std::ofstream f(dir / "meta.json");
    if (!f) throw std::runtime_error("cannot write checkpoint meta: " + dir.string());
    f << meta.dump(2) << "\n";
    for (const auto* p : params) write_f32(dir / (p->name + ".f32"), p->w);
}

inline json load_params(const std::vector<nn::Param*>& params, const fs::path& dir) {
    std::ifstream f(dir / "meta.json");
    if (!f) throw std::runtime_error("missing checkpoint: " + (dir / "meta.json").string());
    json meta;
    f >> meta;
    for (auto* p : params) {
        Tensor t = read_f32(dir / (p->name + ".f32"), p->w.shape);
        p->w = std::move(t);
    }
    return meta;
}

inline std::vector<Tensor> snapshot_params(const std::vector<nn::Param*>& params) {
    std::vector<Tensor> s;
    s.reserve(params.size());
    for (auto* p : params) s.push_back(p->w);
    return s;
}

inline double max_param_delta(const std::vector<nn::Param*>& params,
                              const std::vector<Tensor>& snapshot) {
    double m = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i)
        m = std::max(m, max_abs_diff(params[i]->w, snapshot[i]));
    return m;
}

}  // namespace ubdiff
