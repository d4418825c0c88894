#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "ubdiff/config.hpp"
#include "ubdiff/png.hpp"

namespace ubdiff {

// exit code 3
struct MissingArtifact : std::runtime_error {
    explicit MissingArtifact(const std::string& what) : std::runtime_error(what) {}
};

namespace {

void require_dir(const fs::path& dir, const std::string& what) {
    if (!fs::exists(dir / "manifest.json") && !fs::exists(dir / "meta.json"))
        throw MissingArtifact("missing " + what + ": " + dir.string());
}

int env_workers() {
    const char* w = std::getenv("UBDIFF_WORKERS");
    if (!w) return 1;
    const int n = std::atoi(w);
    return n < 1 ? 1 : n;
}

TwoHeadNet load_net(const RunConfig& cfg, const fs::path& ckpt) {
    if (!fs::exists(ckpt / "meta.json"))
        throw MissingArtifact("missing encoder/decoder checkpoint: " + ckpt.string());
    TwoHeadNet net(cfg.net);
    load_params(net.params_all(), ckpt);
    return net;
}

std::vector<PairedSample> paired_only(const std::vector<PairedSample>& samples) {
    std::vector<PairedSample> out;
    for (const auto& s : samples)
        if (s.mi) out.push_back(s);
    return out;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& cfg) {
    const fs::path dir = cfg.out_dir / "dataset";
    const std::uint64_t synth_seed = derive_seed("synth", cfg.seed);

    if (fs::exists(dir / "manifest.json")) {
        auto [old_samples, old_m] = load_dataset(dir);
        (void)old_samples;
        if (old_m.seed == cfg.seed && int(old_m.m()) == cfg.count &&
            int(old_m.n()) == cfg.n_paired && !old_m.generated) {
            std::cout << "already synthesized: " << dir.string() << "\n";
            return 0;
        }
        throw std::invalid_argument("dataset directory holds a different corpus: " +
                                    dir.string());
    }

    LayerModelParams params = synth_params(cfg);
    auto vels = gen_corpus(cfg.family, cfg.count, params, synth_seed);
    std::vector<int> ids(cfg.count);
    for (int i = 0; i < cfg.count; ++i) ids[i] = i;

    DatasetManifest manifest = split_unbalanced(ids, std::size_t(cfg.n_paired), cfg.seed);
    manifest.velocity_shape = {cfg.size, cfg.size};
    manifest.spacing = cfg.spacing;
    manifest.dt = cfg.dt;
    manifest.vel_norm = NormalizationSpec::from_range(params.v_top, params.v_max);

    cfg.geometry.validate(cfg.size, cfg.size);
    const Wavelet wav = config_wavelet(cfg);
    manifest.seismic_shape = {int(cfg.geometry.source_cols.size()), cfg.nt, cfg.size};

    // forward-model the paired subset, optionally fanning out across workers
    std::map<int, Tensor> gathers;
    const auto& pids = manifest.paired_ids;
    const int workers = std::min(env_workers(), std::max<int>(1, int(pids.size())));
    if (workers <= 1) {
        for (int id : pids) {
            try {
                gathers[id] = simulate(vels[id], cfg.geometry, wav, cfg.solver).traces;
            } catch (const std::exception& e) {
                throw std::runtime_error("forward modeling failed at sample " +
                                         std::to_string(id) + ": " + e.what());
            }
        }
    } else {
        fs::create_directories(dir);
        std::vector<pid_t> kids;
        for (int w = 0; w < workers; ++w) {
            const pid_t pid = fork();
            if (pid < 0) throw std::runtime_error("fork failed");
            if (pid == 0) {
                for (std::size_t k = w; k < pids.size(); k += workers) {
                    const int id = pids[k];
                    Tensor tr = simulate(vels[id], cfg.geometry, wav, cfg.solver).traces;
                    write_f32(dir / ("tmp_seis_" + std::to_string(id) + ".f32"), tr);
                }
                _exit(0);
            }
            kids.push_back(pid);
        }
        for (pid_t pid : kids) {
            int st = 0;
            waitpid(pid, &st, 0);
            if (!WIFEXITED(st) || WEXITSTATUS(st) != 0)
                throw std::runtime_error("forward-modeling worker failed");
        }
        for (int id : pids) {
            const fs::path tmp = dir / ("tmp_seis_" + std::to_string(id) + ".f32");
            gathers[id] = read_f32(tmp, manifest.seismic_shape);
            fs::remove(tmp);
        }
    }

    float seis_max = 1e-12f;
    for (const auto& [id, g] : gathers) seis_max = std::max(seis_max, g.max_abs());
    manifest.seis_norm = NormalizationSpec{0.0f, seis_max};

    std::vector<PairedSample> samples;
    samples.reserve(vels.size());
    for (int id : ids) {
        PairedSample s;
        s.id = id;
        s.ma = manifest.vel_norm.normalize(vels[id].grid);
        if (auto it = gathers.find(id); it != gathers.end())
            s.mi = manifest.seis_norm.normalize(it->second);
        samples.push_back(std::move(s));
    }
    save_dataset(samples, manifest, dir);
    std::cout << "synthesized " << manifest.m() << " maps, " << manifest.n()
              << " paired gathers -> " << dir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train-encdec
// ---------------------------------------------------------------------------

void split_train_val(const std::vector<PairedSample>& pairs, std::vector<PairedSample>& train,
                     std::vector<PairedSample>& val) {
    const std::size_t n_val = std::max<std::size_t>(1, pairs.size() / 5);
    for (std::size_t i = 0; i < pairs.size(); ++i)
        (i + n_val >= pairs.size() ? val : train).push_back(pairs[i]);
    if (train.empty()) train = val;
}

int cmd_train_encdec(const RunConfig& cfg, const std::string& step, const std::string& freeze) {
    require_dir(cfg.out_dir / "dataset", "dataset");
    auto [samples, manifest] = load_dataset(cfg.out_dir / "dataset");

    TrainConfig tc = cfg.trainer;
    tc.seed = cfg.seed;

    if (step == "1") {
        TwoHeadNet net(cfg.net);
        Rng rng(derive_seed("encdec_init", cfg.seed));
        net.init(rng);
        tc.metrics_log = cfg.out_dir / "metrics_step1.jsonl";
        fs::remove(tc.metrics_log);
        TrainReport rep = train_step1(net, samples, tc);
        save_params(net.params_all(), cfg.out_dir / "encdec_step1",
                    json{{"stage", "step1"},
                         {"final_loss", rep.epoch_loss.back()},
                         {"config", cfg.snapshot}});
        std::cout << "step-1 final loss " << rep.epoch_loss.back() << "\n";
        return 0;
    }

    auto pairs = paired_only(samples);
    if (pairs.empty()) throw std::invalid_argument("no paired samples in the dataset");
    std::vector<PairedSample> train, val;
    split_train_val(pairs, train, val);

    if (step == "ablation") {
        TwoHeadNet net(cfg.net);
        Rng rng(derive_seed("encdec_init", cfg.seed));
        net.init(rng);
        tc.metrics_log = cfg.out_dir / "metrics_ablation.jsonl";
        fs::remove(tc.metrics_log);
        TrainReport rep = train_onestep_ablation(net, train, tc);
        const double val_mae = validate_minority_mae(net, val);
        save_params(net.params_all(), cfg.out_dir / "encdec_ablation",
                    json{{"stage", "ablation"},
                         {"final_loss", rep.epoch_loss.back()},
                         {"val_mae", val_mae},
                         {"config", cfg.snapshot}});
        std::cout << "ablation val MAE " << val_mae << "\n";
        return 0;
    }

    if (step != "2") throw std::invalid_argument("--step must be 1, 2 or ablation");
    const fs::path step1 = cfg.out_dir / "encdec_step1";
    if (!fs::exists(step1 / "meta.json"))
        throw MissingArtifact("missing step-1 checkpoint: " + step1.string());

    auto run_f = [&](int F) {
        TwoHeadNet net = load_net(cfg, step1);
        TrainConfig c2 = tc;
        c2.weights.F = F;
        c2.metrics_log = cfg.out_dir / ("metrics_step2_f" + std::to_string(F) + ".jsonl");
        fs::remove(c2.metrics_log);
        TrainReport rep = train_step2(net, train, c2);
        rep.val_mae = validate_minority_mae(net, val);
        return std::pair<TwoHeadNet, TrainReport>(std::move(net), std::move(rep));
    };

    json selection = json::object();
    int F = 0;
    std::optional<std::pair<TwoHeadNet, TrainReport>> winner;
    if (freeze == "auto") {
        auto r0 = run_f(0);
        auto r1 = run_f(1);
        F = select_freeze(r0.second, r1.second);
        selection = {{"mode", "auto"},
                     {"val_mae_f0", r0.second.val_mae},
                     {"val_mae_f1", r1.second.val_mae},
                     {"selected", F}};
        winner = F == 0 ? std::move(r0) : std::move(r1);
    } else if (freeze == "0" || freeze == "1") {
        F = freeze == "1" ? 1 : 0;
        winner = run_f(F);
        selection = {{"mode", "fixed"}, {"selected", F},
                     {"val_mae", winner->second.val_mae}};
    } else {
        throw std::invalid_argument("--freeze must be 0, 1 or auto");
    }

    save_params(winner->first.params_all(), cfg.out_dir / "encdec_step2",
                json{{"stage", "step2"},
                     {"freeze", F},
                     {"val_mae", winner->second.val_mae},
                     {"selection", selection},
                     {"config", cfg.snapshot}});
    std::cout << "step-2 (F=" << F << ") val MAE " << winner->second.val_mae << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train-diff
// ---------------------------------------------------------------------------

Tensor encode_corpus(TwoHeadNet& net, const std::vector<PairedSample>& samples) {
    const int N = int(samples.size()), c = net.config().latent_dim;
    Tensor latents({N, c});
    constexpr int kBatch = 64;
    for (int off = 0; off < N; off += kBatch) {
        const int end = std::min(off + kBatch, N);
        std::vector<const Tensor*> items;
        for (int i = off; i < end; ++i) items.push_back(&samples[i].ma);
        Tensor z = net.encode(detail::stack_batch(items));
        for (int i = off; i < end; ++i)
            for (int j = 0; j < c; ++j) latents.at(i, j) = z.at(i - off, j);
    }
    return latents;
}

int cmd_train_diff(const RunConfig& cfg, const fs::path& encdec_dir, const fs::path& out) {
    require_dir(cfg.out_dir / "dataset", "dataset");
    TwoHeadNet net = load_net(cfg, encdec_dir);
    auto [samples, manifest] = load_dataset(cfg.out_dir / "dataset");

    DenoiserState state(cfg.net.latent_dim, cfg.denoiser_hidden, cfg.denoiser_blocks,
                        cfg.horizon);
    if (fs::exists(out / "meta.json")) {
        DenoiserState prev(cfg.net.latent_dim, cfg.denoiser_hidden, cfg.denoiser_blocks,
                           cfg.horizon);
        load_denoiser(prev, out);
        if (prev.step >= cfg.diffusion.steps) {
            std::cout << "already trained (" << prev.step << " steps): " << out.string() << "\n";
            return 0;
        }
        // deterministic replay from scratch reproduces the uninterrupted run
        std::cout << "replaying interrupted run (" << prev.step << "/" << cfg.diffusion.steps
                  << " steps)\n";
    }

    Rng rng(derive_seed("denoiser_init", cfg.seed));
    state.net.init(rng);
    Tensor latents = encode_corpus(net, samples);
    state.whitener = LatentWhitener::fit(latents);

    DiffusionTrainConfig dc = cfg.diffusion;
    dc.seed = cfg.seed;
    train_diffusion(state, state.whitener.whiten(latents), dc);
    save_denoiser(state, out);
    std::cout << "diffusion loss " << state.loss_history.front() << " -> "
              << state.loss_history.back() << " over " << state.step << " steps\n";
    return 0;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

int cmd_generate(const RunConfig& cfg, int count, std::uint64_t gen_seed,
                 const fs::path& encdec_dir, const fs::path& denoiser_dir, fs::path out) {
    if (count < 1) throw std::invalid_argument("--count must be >= 1");
    require_dir(cfg.out_dir / "dataset", "dataset");
    TwoHeadNet net = load_net(cfg, encdec_dir);
    if (!fs::exists(denoiser_dir / "meta.json"))
        throw MissingArtifact("missing denoiser checkpoint: " + denoiser_dir.string());
    DenoiserState state(cfg.net.latent_dim, cfg.denoiser_hidden, cfg.denoiser_blocks,
                        cfg.horizon);
    load_denoiser(state, denoiser_dir);

    auto [_, real_manifest] = load_dataset(cfg.out_dir / "dataset");
    if (out.empty()) out = cfg.out_dir / ("generated_" + std::to_string(gen_seed));

    auto pairs = generate_pairs(state, net, count, gen_seed, cfg.sample_steps);
    DatasetManifest m = real_manifest;
    m.generated = true;
    m.seed = gen_seed;
    m.majority_ids.resize(count);
    for (int i = 0; i < count; ++i) m.majority_ids[i] = i;
    m.paired_ids = m.majority_ids;

    std::vector<PairedSample> samples;
    samples.reserve(count);
    for (int i = 0; i < count; ++i) {
        PairedSample s;
        s.id = i;
        s.ma = std::move(pairs[i].first);
        s.mi = std::move(pairs[i].second);
        samples.push_back(std::move(s));
    }
    save_dataset(samples, m, out);
    std::cout << "generated " << count << " pairs -> " << out.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const RunConfig& cfg, const fs::path& real_dir, const fs::path& gen_dir,
             std::vector<std::string> axes, const fs::path& report_path) {
    require_dir(real_dir, "real dataset");
    require_dir(gen_dir, "generated dataset");
    auto [real, rm] = load_dataset(real_dir);
    auto [gen, gm] = load_dataset(gen_dir);
    if (axes.empty()) axes = {"fid", "pairwise", "physics"};

    json report{{"real", real_dir.string()},
                {"generated", gen_dir.string()},
                {"config", cfg.snapshot}};

    for (const auto& axis : axes) {
        if (axis == "fid") {
            std::vector<Tensor> rv, gv, rs, gs;
            for (const auto& s : real) {
                rv.push_back(s.ma);
                if (s.mi) rs.push_back(*s.mi);
            }
            for (const auto& s : gen) {
                gv.push_back(s.ma);
                if (s.mi) gs.push_back(*s.mi);
            }
            FeatureExtractorSpec vspec = cfg.fid_spec;
            vspec.modality = Modality::velocity;
            FeatureExtractorSpec sspec = cfg.fid_spec;
            sspec.modality = Modality::seismic;
            report["fid"] = {{"velocity", eval_fid(rv, gv, vspec)},
                             {"seismic", eval_fid(rs, gs, sspec)}};
        } else if (axis == "pairwise") {
            std::vector<std::pair<Tensor, Tensor>> train_pairs, test_pairs;
            for (const auto& s : gen)
                if (s.mi) train_pairs.emplace_back(*s.mi, s.ma);
            std::vector<const PairedSample*> rp;
            for (const auto& s : real)
                if (s.mi) rp.push_back(&s);
            if (train_pairs.empty() || rp.empty())
                throw std::invalid_argument("pairwise axis needs paired samples on both sides");
            // Test only on the tail pairs held out from decoder fine-tuning so the
            // score measures transfer rather than recall of the generator's own
            // training pairs.
            const std::size_t held = std::max<std::size_t>(1, rp.size() / 5);
            for (std::size_t i = rp.size() - held; i < rp.size(); ++i)
                test_pairs.emplace_back(*rp[i]->mi, rp[i]->ma);
            InversionLite model(cfg.size);
            InversionTrainConfig ic = cfg.inversion;
            ic.seed = cfg.seed;
            auto losses = train_inversion_lite(model, train_pairs, ic);
            PairwiseReport pr = pairwise_eval(model, test_pairs);
            report["pairwise"] = {{"mae", pr.mae},
                                  {"mse", pr.mse},
                                  {"ssim", pr.ssim_mean},
                                  {"n_test", pr.n_test},
                                  {"final_train_loss", losses.back()}};
        } else if (axis == "physics") {
            const Wavelet wav = config_wavelet(cfg);
            double total = 0.0;
            int done = 0, skipped = 0;
            for (const auto& s : gen) {
                if (!s.mi) continue;
                if (done + skipped >= cfg.physics_max_samples) break;
                VelocityMap vel{gm.vel_norm.denormalize(s.ma), gm.spacing};
                SeismicGather g{gm.seis_norm.denormalize(*s.mi), gm.dt};
                try {
                    total += physics_residual(vel, g, cfg.geometry, wav, cfg.solver);
                    ++done;
                } catch (const std::exception&) {
                    ++skipped;  // CFL violations on degenerate maps are data
                }
            }
            report["physics"] = {{"mean_residual", done ? total / done : -1.0},
                                 {"n_evaluated", done},
                                 {"n_skipped", skipped}};
        } else {
            throw std::invalid_argument("unknown eval axis: " + axis);
        }
    }

    fs::create_directories(report_path.parent_path());
    std::ofstream f(report_path);
    if (!f) throw std::runtime_error("cannot write report: " + report_path.string());
    f << report.dump(2) << "\n";
    json echo = report;
    echo.erase("config");
    std::cout << echo.dump(2) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

int cmd_plot(const RunConfig& cfg, const fs::path& dataset_dir, std::vector<int> indices,
             fs::path out) {
    require_dir(dataset_dir, "dataset");
    auto [samples, manifest] = load_dataset(dataset_dir);
    if (indices.empty()) indices = {0};
    if (out.empty()) out = cfg.out_dir / "plots";
    fs::create_directories(out);

    std::map<int, const PairedSample*> by_id;
    for (const auto& s : samples) by_id[s.id] = &s;

    // shared color scales per modality across the selected samples
    float vlo = 1e30f, vhi = -1e30f, smax = 1e-12f;
    std::vector<const PairedSample*> chosen;
    for (int id : indices) {
        auto it = by_id.find(id);
        if (it == by_id.end())
            throw std::invalid_argument("sample id " + std::to_string(id) +
                                        " not in the dataset");
        chosen.push_back(it->second);
        for (float x : it->second->ma.v) {
            vlo = std::min(vlo, x);
            vhi = std::max(vhi, x);
        }
        if (it->second->mi) smax = std::max(smax, it->second->mi->max_abs());
    }
    if (!(vhi > vlo)) vhi = vlo + 1e-6f;

    int written = 0;
    for (const auto* s : chosen) {
        write_heatmap(out / ("vel_" + std::to_string(s->id) + ".png"), s->ma, vlo, vhi);
        ++written;
        if (!s->mi) continue;
        const int S = s->mi->shape[0], Tt = s->mi->shape[1], R = s->mi->shape[2];
        for (int src = 0; src < S; ++src) {
            Tensor ch({Tt, R});
            for (int t = 0; t < Tt; ++t)
                for (int r = 0; r < R; ++r) ch.at(t, r) = s->mi->at(src, t, r);
            write_heatmap(out / ("seis_" + std::to_string(s->id) + "_s" +
                                 std::to_string(src) + ".png"),
                          ch, -smax, smax);
            ++written;
        }
    }
    std::cout << "wrote " << written << " images -> " << out.string() << "\n";
    return 0;
}

}  // namespace
}  // namespace ubdiff

int main(int argc, char** argv) {
    using namespace ubdiff;
    CLI::App app{"unbalanced paired velocity/seismic generative pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string family, step = "1", freeze = "1";
    int count = -1, n_paired = -1, gen_count = 1;
    std::uint64_t gen_seed = 0;
    std::string encdec_dir, denoiser_dir, out_dir, real_dir, gen_dir, report_path, dataset_dir;
    std::vector<std::string> axes;
    std::vector<int> indices;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration")->required();
    };

    auto* synth = app.add_subcommand("synth", "synthesize the unbalanced corpus");
    add_config(synth);
    synth->add_option("--family", family, "flatvel|curvevel|flatfault|curvefault");
    synth->add_option("--count", count, "majority corpus size");
    synth->add_option("--n-paired", n_paired, "paired subset size");

    auto* tenc = app.add_subcommand("train-encdec", "train the one-encoder/two-decoder net");
    add_config(tenc);
    tenc->add_option("--step", step, "1, 2 or ablation");
    tenc->add_option("--freeze", freeze, "0, 1 or auto (step 2 only)");

    auto* tdiff = app.add_subcommand("train-diff", "train the latent denoiser");
    add_config(tdiff);
    tdiff->add_option("--encdec", encdec_dir, "encoder/decoder checkpoint directory");
    tdiff->add_option("--out", out_dir, "denoiser output directory");

    auto* gen = app.add_subcommand("generate", "sample paired data from the denoiser");
    add_config(gen);
    gen->add_option("--count", gen_count, "number of pairs");
    gen->add_option("--seed", gen_seed, "generation seed");
    gen->add_option("--encdec", encdec_dir, "encoder/decoder checkpoint directory");
    gen->add_option("--denoiser", denoiser_dir, "denoiser checkpoint directory");
    gen->add_option("--out", out_dir, "output dataset directory");

    auto* ev = app.add_subcommand("eval", "evaluate generated against real data");
    add_config(ev);
    ev->add_option("--real", real_dir, "real dataset directory");
    ev->add_option("--generated", gen_dir, "generated dataset directory")->required();
    ev->add_option("--axes", axes, "fid pairwise physics (default: all)");
    ev->add_option("--report", report_path, "report output path");

    auto* plot = app.add_subcommand("plot", "render heatmap PNGs for samples");
    add_config(plot);
    plot->add_option("--dataset", dataset_dir, "dataset directory");
    plot->add_option("--indices", indices, "sample ids to render");
    plot->add_option("--out", out_dir, "image output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int r = app.exit(e);
        return r == 0 ? 0 : 1;
    }

    try {
        RunConfig cfg = load_config(config_path);
        if (synth->parsed()) {
            if (!family.empty()) cfg.family = family_from_string(family);
            if (count >= 0) cfg.count = count;
            if (n_paired >= 0) cfg.n_paired = n_paired;
            cfg.validate();
            return cmd_synth(cfg);
        }
        if (tenc->parsed()) return cmd_train_encdec(cfg, step, freeze);
        if (tdiff->parsed())
            return cmd_train_diff(
                cfg, encdec_dir.empty() ? cfg.out_dir / "encdec_step2" : fs::path(encdec_dir),
                out_dir.empty() ? cfg.out_dir / "denoiser" : fs::path(out_dir));
        if (gen->parsed())
            return cmd_generate(
                cfg, gen_count, gen_seed,
                encdec_dir.empty() ? cfg.out_dir / "encdec_step2" : fs::path(encdec_dir),
                denoiser_dir.empty() ? cfg.out_dir / "denoiser" : fs::path(denoiser_dir),
                out_dir);
        if (ev->parsed())
            return cmd_eval(cfg, real_dir.empty() ? cfg.out_dir / "dataset" : fs::path(real_dir),
                            gen_dir, axes,
                            report_path.empty() ? cfg.out_dir / "report.json"
                                                : fs::path(report_path));
        if (plot->parsed())
            return cmd_plot(cfg,
                            dataset_dir.empty() ? cfg.out_dir / "dataset"
                                                : fs::path(dataset_dir),
                            indices, out_dir);
        return 1;
    } catch (const MissingArtifact& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        std::cerr << "error: " << msg << "\n";
        if (msg.find("non-finite") != std::string::npos ||
            msg.find("NaN") != std::string::npos)
            return 2;
        if (msg.find("missing") != std::string::npos) return 3;
        return 1;
    }
}
