#pragma once

#include "ubdiff/diffusion.hpp"
#include "ubdiff/eval.hpp"
#include "ubdiff/synth.hpp"
#include "ubdiff/trainer.hpp"
#include "ubdiff/wave.hpp"

namespace ubdiff {

// One declarative document drives every command; CLI flags override single
// keys. The global seed is the root of all per-stage seeds via derive_seed.
struct RunConfig {
    std::uint64_t seed = 0;
    fs::path out_dir = "out";

    // synth
    VelocityFamily family = VelocityFamily::flatvel;
    int count = 2000;
    int n_paired = 100;
    int size = 32;

    // acoustic forward
    float spacing = 10.0f;
    float dt = 1e-3f;
    int nt = 256;
    float f0 = 15.0f;
    AcquisitionGeometry geometry;
    SolverConfig solver;

    // encoder/decoder network
    NetConfig net;

    // two-step trainer
    TrainConfig trainer;

    // latent diffusion
    DiffusionTrainConfig diffusion;
    int denoiser_hidden = 512;
    int denoiser_blocks = 4;
    int horizon = 256;
    int sample_steps = 64;

    // evaluation
    FeatureExtractorSpec fid_spec;
    InversionTrainConfig inversion;
    int physics_max_samples = 100;

    json snapshot = json::object();  // the document as loaded, for reports

    void validate() const {
        if (count < 1) throw std::invalid_argument("config: count must be >= 1");
        if (n_paired < 0 || n_paired > count)
            throw std::invalid_argument("config: n_paired must be in [0, count]");
        if (sample_steps < 1 || sample_steps > horizon)
            throw std::invalid_argument("config: sample_steps must be in [1, horizon]");
        trainer.validate();
        diffusion.validate();
        fid_spec.validate();
    }
};

inline RunConfig config_from_json(const json& j) {
    RunConfig c;
    c.snapshot = j;
    c.seed = j.value("seed", std::uint64_t(0));
    c.out_dir = fs::path(j.value("out_dir", std::string("out")));

    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        c.family = family_from_string(s.value("family", std::string("flatvel")));
        c.count = s.value("count", c.count);
        c.n_paired = s.value("n_paired", c.n_paired);
        c.size = s.value("size", c.size);
    }
    if (j.contains("forward")) {
        const auto& f = j.at("forward");
        c.spacing = f.value("spacing", c.spacing);
        c.dt = f.value("dt", c.dt);
        c.nt = f.value("nt", c.nt);
        c.f0 = f.value("f0", c.f0);
        if (f.contains("source_cols"))
            c.geometry.source_cols = f.at("source_cols").get<std::vector<int>>();
        c.geometry.surface_row = f.value("surface_row", c.geometry.surface_row);
    }
    c.solver.dt = c.dt;
    c.solver.nt = c.nt;

    if (j.contains("encdec")) {
        const auto& e = j.at("encdec");
        c.net.latent_dim = e.value("latent_dim", c.net.latent_dim);
        c.net.token_dim = e.value("token_dim", c.net.token_dim);
        c.net.attn_blocks = e.value("attn_blocks", c.net.attn_blocks);
        c.net.attn_heads = e.value("attn_heads", c.net.attn_heads);
        c.net.attn_ff = e.value("attn_ff", c.net.attn_ff);
        c.net.majority = modality_from_string(e.value("majority", std::string("velocity")));
    }
    c.net.vel_size = c.size;
    c.net.seis_time = c.nt;
    c.net.seis_receivers = c.size;
    c.net.seis_sources = int(c.geometry.source_cols.size());

    if (j.contains("trainer")) {
        const auto& t = j.at("trainer");
        c.trainer.epochs_step1 = t.value("epochs_step1", c.trainer.epochs_step1);
        c.trainer.epochs_step2 = t.value("epochs_step2", c.trainer.epochs_step2);
        c.trainer.batch_size = t.value("batch_size", c.trainer.batch_size);
        c.trainer.learning_rate = t.value("learning_rate", c.trainer.learning_rate);
        c.trainer.lr_decay = t.value("lr_decay", c.trainer.lr_decay);
        c.trainer.weights.g1 = t.value("gamma1", c.trainer.weights.g1);
        c.trainer.weights.g2 = t.value("gamma2", c.trainer.weights.g2);
        c.trainer.weights.g3 = t.value("gamma3", c.trainer.weights.g3);
        c.trainer.weights.g4 = t.value("gamma4", c.trainer.weights.g4);
    }
    if (j.contains("diffusion")) {
        const auto& d = j.at("diffusion");
        c.diffusion.steps = d.value("steps", c.diffusion.steps);
        c.diffusion.lr = d.value("lr", c.diffusion.lr);
        c.diffusion.grad_accum = d.value("grad_accum", c.diffusion.grad_accum);
        c.diffusion.ema_decay = d.value("ema_decay", c.diffusion.ema_decay);
        c.diffusion.batch_size = d.value("batch_size", c.diffusion.batch_size);
        c.denoiser_hidden = d.value("hidden", c.denoiser_hidden);
        c.denoiser_blocks = d.value("blocks", c.denoiser_blocks);
        c.horizon = d.value("horizon", c.horizon);
        c.sample_steps = d.value("sample_steps", c.sample_steps);
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        c.fid_spec.feature_dim = e.value("feature_dim", c.fid_spec.feature_dim);
        c.fid_spec.seed = e.value("extractor_seed", c.fid_spec.seed);
        c.inversion.epochs = e.value("inversion_epochs", c.inversion.epochs);
        c.inversion.batch_size = e.value("inversion_batch_size", c.inversion.batch_size);
        c.inversion.lr = e.value("inversion_lr", c.inversion.lr);
        c.physics_max_samples = e.value("physics_max_samples", c.physics_max_samples);
    }
    c.validate();
    return c;
}

inline RunConfig load_config(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot open config: " + path.string());
    json j;
    try {
        f >> j;
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config parse error in " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

inline LayerModelParams synth_params(const RunConfig& c) {
    LayerModelParams p = default_params(c.family, c.size);
    p.spacing = c.spacing;
    return p;
}

inline Wavelet config_wavelet(const RunConfig& c) { return ricker(c.f0, c.dt, c.nt); }

}  // namespace ubdiff
