#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ubdiff/diffusion.hpp"

using namespace ubdiff;

namespace {

Tensor randn(std::vector<int> shape, Rng& rng, float scale = 1.0f) {
    Tensor t(std::move(shape));
    rng.fill_normal(t, scale);
    return t;
}

}  // namespace

TEST_CASE("schedule is variance preserving with pinned endpoints") {
    for (auto kind : {ScheduleKind::cosine, ScheduleKind::linear}) {
        auto s = make_schedule(256, kind);
        REQUIRE(int(s.alpha.size()) == 257);
        REQUIRE(int(s.sigma.size()) == 257);
        CHECK(s.alpha[0] == 1.0f);
        CHECK(s.sigma[0] == 0.0f);
        CHECK(s.alpha[256] == Catch::Approx(kAlphaFloor));
        CHECK(s.sigma[256] == Catch::Approx(1.0f).margin(1e-6));
        for (int t = 0; t <= 256; ++t) {
            CHECK(s.alpha[t] * s.alpha[t] + s.sigma[t] * s.sigma[t] ==
                  Catch::Approx(1.0f).margin(1e-6));
            CHECK(s.alpha[t] >= kAlphaFloor);
            if (t > 0) {
                CHECK(s.alpha[t] <= s.alpha[t - 1]);
                CHECK(s.sigma[t] >= s.sigma[t - 1]);
            }
        }
    }
    CHECK_THROWS_AS(make_schedule(0), std::invalid_argument);
}

TEST_CASE("cosine schedule matches the closed form at a hand-picked point") {
    auto s = make_schedule(4, ScheduleKind::cosine);
    // t = 2, T = 4: cos(pi/4) = 1/sqrt(2)
    CHECK(s.alpha[2] == Catch::Approx(0.70710678).margin(1e-6));
    CHECK(s.sigma[2] == Catch::Approx(0.70710678).margin(1e-6));
    // t = 1: cos(pi/8)
    CHECK(s.alpha[1] == Catch::Approx(std::cos(M_PI / 8.0)).margin(1e-6));
    auto lin = make_schedule(4, ScheduleKind::linear);
    CHECK(lin.alpha[1] == Catch::Approx(std::sqrt(0.75)).margin(1e-6));
}

TEST_CASE("v parameterization round-trips z0 and eps") {
    auto s = make_schedule(64);
    Rng rng(3);
    Tensor z0 = randn({4, 8}, rng);
    Tensor eps = randn({4, 8}, rng);
    for (int t : {0, 1, 17, 32, 63, 64}) {
        Tensor zt = q_sample(z0, t, eps, s);
        Tensor u = v_target(z0, eps, t, s);
        Tensor z0r = recover_z0(zt, u, t, s);
        Tensor epr = recover_eps(zt, u, t, s);
        for (std::size_t i = 0; i < z0.size(); ++i) {
            CHECK(z0r[i] == Catch::Approx(z0[i]).margin(1e-5));
            CHECK(epr[i] == Catch::Approx(eps[i]).margin(1e-5));
        }
    }
    CHECK_THROWS_AS(q_sample(z0, -1, eps, s), std::invalid_argument);
    CHECK_THROWS_AS(v_target(z0, eps, 65, s), std::invalid_argument);
}

TEST_CASE("q_sample preserves marginal variance for unit-gaussian data") {
    auto s = make_schedule(128);
    Rng rng(5);
    Tensor z0 = randn({512, 16}, rng);
    Tensor eps = randn({512, 16}, rng);
    for (int t : {16, 64, 112}) {
        Tensor zt = q_sample(z0, t, eps, s);
        double m = 0.0, v = 0.0;
        for (std::size_t i = 0; i < zt.size(); ++i) m += zt[i];
        m /= double(zt.size());
        for (std::size_t i = 0; i < zt.size(); ++i) v += (zt[i] - m) * (zt[i] - m);
        v /= double(zt.size() - 1);
        CHECK(std::abs(v - 1.0) < 0.05);
    }
}

TEST_CASE("timestep embedding interleaves sin and cos") {
    Tensor e = timestep_embedding({0, 37}, 8, 256);
    REQUIRE(e.shape == std::vector<int>{2, 8});
    // t = 0 gives sin(0) = 0, cos(0) = 1 at every frequency
    for (int i = 0; i < 4; ++i) {
        CHECK(e.at(0, 2 * i) == 0.0f);
        CHECK(e.at(0, 2 * i + 1) == 1.0f);
    }
    // each (sin, cos) pair lies on the unit circle
    for (int i = 0; i < 4; ++i) {
        const float s = e.at(1, 2 * i), c = e.at(1, 2 * i + 1);
        CHECK(s * s + c * c == Catch::Approx(1.0f).margin(1e-5));
    }
    // distinct timesteps embed differently
    Tensor e2 = timestep_embedding({38}, 8, 256);
    bool differs = false;
    for (int i = 0; i < 8; ++i) differs |= (e2.at(0, i) != e.at(1, i));
    CHECK(differs);
}

TEST_CASE("denoiser validates input shape and passes a gradient check") {
    DenoiserMlp net(6, 12, 2, 32);
    Rng rng(7);
    net.init(rng);
    // non-zero block outputs so the residual branches carry gradient
    for (auto* p : net.params())
        for (auto& w : p->w.v) w += 0.01f * rng.normal();

    Tensor x = randn({2, 6}, rng);
    std::vector<int> ts{3, 20};
    CHECK_THROWS_AS(net.forward(randn({2, 5}, rng), ts), std::invalid_argument);
    CHECK_THROWS_AS(net.forward(x, {3}), std::invalid_argument);

    // probe loss L = sum c_i y_i; compare analytic grads to central differences
    Tensor y = net.forward(x, ts);
    Rng crng(8);
    Tensor c(y.shape);
    crng.fill_normal(c);
    for (auto* p : net.params()) p->g.zero();
    net.forward(x, ts);
    Tensor gx = net.backward(c);

    const float eps = 2e-2f;
    auto probe = [&](float* slot) {
        const float keep = *slot;
        *slot = keep + eps;
        Tensor yp = net.forward(x, ts);
        *slot = keep - eps;
        Tensor ym = net.forward(x, ts);
        *slot = keep;
        double d = 0.0;
        for (std::size_t i = 0; i < yp.size(); ++i) d += double(c[i]) * (yp[i] - ym[i]);
        return d / (2.0 * eps);
    };
    Rng pick(9);
    for (int k = 0; k < 24; ++k) {
        const int i = pick.index(int(x.size()));
        const double num = probe(&x[i]);
        CHECK(std::abs(gx[i] - num) < 3e-2 * std::max({1.0, std::abs(num), double(gx[i])}));
    }
    auto params = net.params();
    for (int k = 0; k < 24; ++k) {
        auto* p = params[pick.index(int(params.size()))];
        const int i = pick.index(int(p->w.size()));
        const double num = probe(&p->w[i]);
        CHECK(std::abs(p->g[i] - num) < 3e-2 * std::max({1.0, std::abs(num), double(p->g[i])}));
    }
}

TEST_CASE("zero-initialized blocks start as an affine map of the input") {
    DenoiserMlp net(6, 12, 3, 32);
    Rng rng(11);
    net.init(rng);
    // with lin2 zeroed every residual block is the identity, so the net is
    // out(in(x)) regardless of the timestep
    Tensor x = randn({3, 6}, rng);
    Tensor a = net.forward(x, {1, 9, 30});
    Tensor b = net.forward(x, {30, 1, 9});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("batch loss matches a hand-computed value") {
    auto s = make_schedule(8);
    DenoiserMlp net(4, 8, 1, 8);
    Rng rng(13);
    net.init(rng);
    Tensor z0 = randn({2, 4}, rng);
    Tensor eps = randn({2, 4}, rng);
    std::vector<int> ts{2, 5};

    Tensor zt({2, 4});
    for (int b = 0; b < 2; ++b)
        for (int j = 0; j < 4; ++j)
            zt.at(b, j) = s.alpha[ts[b]] * z0.at(b, j) + s.sigma[ts[b]] * eps.at(b, j);
    Tensor pred = net.forward(zt, ts);
    double want = 0.0;
    for (int b = 0; b < 2; ++b)
        for (int j = 0; j < 4; ++j) {
            const double u = s.alpha[ts[b]] * eps.at(b, j) - s.sigma[ts[b]] * z0.at(b, j);
            want += (pred.at(b, j) - u) * (pred.at(b, j) - u);
        }
    want /= 8.0;
    CHECK(diffusion_batch_loss(net, z0, ts, eps, s) == Catch::Approx(want).margin(1e-9));
}

TEST_CASE("untrained loss on unit gaussians is near one") {
    // with pred ~ 0 the loss is E[u^2] = alpha^2 + sigma^2 = 1 for N(0,1) data
    auto s = make_schedule(256);
    DenoiserMlp net(16, 32, 2, 256);
    Rng rng(17);
    net.init(rng);
    for (auto* p : net.params()) p->w.v.assign(p->w.size(), 0.0f);
    Tensor z0 = randn({256, 16}, rng);
    Tensor eps = randn({256, 16}, rng);
    std::vector<int> ts(256);
    for (auto& t : ts) t = rng.integer(1, 256);
    const double loss = diffusion_batch_loss(net, z0, ts, eps, s);
    CHECK(loss > 0.8);
    CHECK(loss < 1.2);
}

TEST_CASE("ema shadow matches a closed-form recomputation") {
    DenoiserState st(4, 8, 1, 8);
    Rng rng(19);
    st.net.init(rng);
    st.init_ema();
    auto params = st.net.params();
    std::vector<Tensor> w0;
    for (auto* p : params) w0.push_back(p->w);

    const float d = 0.9f;
    std::vector<Tensor> w1, w2;
    for (auto* p : params) {
        for (auto& x : p->w.v) x += 0.5f;
        w1.push_back(p->w);
    }
    st.update_ema(d);
    for (auto* p : params) {
        for (auto& x : p->w.v) x *= 1.25f;
        w2.push_back(p->w);
    }
    st.update_ema(d);
    for (std::size_t k = 0; k < params.size(); ++k)
        for (std::size_t i = 0; i < w0[k].size(); ++i) {
            const float want = d * (d * w0[k][i] + (1 - d) * w1[k][i]) + (1 - d) * w2[k][i];
            CHECK(st.ema[k][i] == Catch::Approx(want).margin(1e-6));
        }
}

TEST_CASE("whitener normalizes per dimension and inverts exactly") {
    Rng rng(23);
    Tensor lat({200, 3});
    for (int i = 0; i < 200; ++i) {
        lat.at(i, 0) = 5.0f + 2.0f * rng.normal();
        lat.at(i, 1) = -1.0f + 0.25f * rng.normal();
        lat.at(i, 2) = rng.normal();
    }
    auto w = LatentWhitener::fit(lat);
    Tensor z = w.whiten(lat);
    for (int j = 0; j < 3; ++j) {
        double m = 0.0, v = 0.0;
        for (int i = 0; i < 200; ++i) m += z.at(i, j);
        m /= 200.0;
        for (int i = 0; i < 200; ++i) v += (z.at(i, j) - m) * (z.at(i, j) - m);
        v /= 199.0;
        CHECK(std::abs(m) < 1e-5);
        CHECK(v == Catch::Approx(1.0).margin(1e-3));
    }
    Tensor back = w.unwhiten(z);
    for (std::size_t i = 0; i < lat.size(); ++i)
        CHECK(back[i] == Catch::Approx(lat[i]).margin(1e-4));

    auto rt = LatentWhitener::from_json(w.to_json());
    CHECK(rt.mean == w.mean);
    CHECK(rt.inv_std == w.inv_std);
}

TEST_CASE("training memorizes a single latent") {
    DenoiserState st(8, 64, 2, 32);
    Rng rng(29);
    st.net.init(rng);
    Tensor lat({1, 8});
    for (int j = 0; j < 8; ++j) lat.at(0, j) = 0.3f * float(j - 4);

    DiffusionTrainConfig cfg;
    cfg.steps = 6000;
    cfg.lr = 2e-3f;
    cfg.batch_size = 16;
    cfg.grad_accum = 1;
    cfg.ema_decay = 0.99f;
    cfg.seed = 1;
    train_diffusion(st, lat, cfg);
    REQUIRE(st.trained());
    CHECK(long(st.loss_history.size()) == cfg.steps);
    CHECK(st.loss_history.back() < st.loss_history.front());

    Tensor out = sample_latent(st, 32, 5, SamplerKind::deterministic, 4);
    REQUIRE(out.shape == std::vector<int>{4, 8});
    for (int i = 0; i < 4; ++i) {
        double mse = 0.0;
        for (int j = 0; j < 8; ++j) {
            const double d = out.at(i, j) - lat.at(0, j);
            mse += d * d;
        }
        CHECK(mse / 8.0 < 1e-3);
    }

    // ancestral sampling should land near the same point for one-mode data
    Tensor anc = sample_latent(st, 32, 5, SamplerKind::ancestral, 2);
    for (int i = 0; i < 2; ++i) {
        double mse = 0.0;
        for (int j = 0; j < 8; ++j) {
            const double d = anc.at(i, j) - lat.at(0, j);
            mse += d * d;
        }
        CHECK(mse / 8.0 < 5e-2);
    }
}

TEST_CASE("sampling is deterministic in the seed and validates arguments") {
    DenoiserState st(4, 16, 1, 16);
    Rng rng(31);
    st.net.init(rng);
    CHECK_THROWS_AS(sample_latent(st, 8, 0), std::invalid_argument);  // untrained

    Tensor lat({2, 4});
    Rng lrng(32);
    lrng.fill_normal(lat);
    DiffusionTrainConfig cfg;
    cfg.steps = 50;
    cfg.batch_size = 4;
    cfg.grad_accum = 1;
    cfg.seed = 2;
    train_diffusion(st, lat, cfg);

    Tensor a = sample_latent(st, 16, 7, SamplerKind::ancestral, 3);
    Tensor b = sample_latent(st, 16, 7, SamplerKind::ancestral, 3);
    CHECK(a.v == b.v);
    Tensor c = sample_latent(st, 16, 8, SamplerKind::ancestral, 3);
    CHECK(a.v != c.v);

    CHECK_THROWS_AS(sample_latent(st, 0, 0), std::invalid_argument);
    CHECK_THROWS_AS(sample_latent(st, 17, 0), std::invalid_argument);

    // sampling must not disturb the live weights
    auto params = st.net.params();
    std::vector<Tensor> before;
    for (auto* p : params) before.push_back(p->w);
    sample_latent(st, 16, 9, SamplerKind::deterministic, 2);
    for (std::size_t k = 0; k < params.size(); ++k) CHECK(params[k]->w.v == before[k].v);
}

TEST_CASE("a single deterministic step is recover_z0 from pure noise") {
    DenoiserState st(4, 16, 1, 16);
    Rng rng(37);
    st.net.init(rng);
    Tensor lat({2, 4});
    rng.fill_normal(lat);
    DiffusionTrainConfig cfg;
    cfg.steps = 20;
    cfg.batch_size = 4;
    cfg.grad_accum = 1;
    cfg.seed = 3;
    train_diffusion(st, lat, cfg);

    Tensor got = sample_latent(st, 1, 41, SamplerKind::deterministic, 1);

    auto live = st.swap_in_ema();
    Rng zr(derive_seed("sample", 41, 0));
    Tensor z({1, 4});
    zr.fill_normal(z);
    Tensor u = st.net.forward(z, {16});
    Tensor want = recover_z0(z, u, 16, st.schedule);
    st.swap_back(std::move(live));
    for (int j = 0; j < 4; ++j) CHECK(got.at(0, j) == want.at(0, j));
}

TEST_CASE("train_diffusion validates its inputs") {
    DenoiserState st(4, 8, 1, 8);
    Rng rng(43);
    st.net.init(rng);
    DiffusionTrainConfig cfg;
    cfg.steps = 1;
    cfg.batch_size = 2;

    Tensor wrong({2, 5});
    CHECK_THROWS_AS(train_diffusion(st, wrong, cfg), std::invalid_argument);
    Tensor empty({0, 4});
    CHECK_THROWS_AS(train_diffusion(st, empty, cfg), std::invalid_argument);

    DiffusionTrainConfig bad = cfg;
    bad.ema_decay = 1.0f;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.steps = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    Tensor nan_lat({1, 4});
    nan_lat[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH(train_diffusion(st, nan_lat, cfg),
                      Catch::Matchers::ContainsSubstring("step 0"));
}

TEST_CASE("denoiser checkpoint round-trips net, ema, schedule and whitener") {
    DenoiserState st(4, 8, 1, 16);
    Rng rng(47);
    st.net.init(rng);
    Tensor lat({3, 4});
    rng.fill_normal(lat, 2.0f);
    st.whitener = LatentWhitener::fit(lat);
    DiffusionTrainConfig cfg;
    cfg.steps = 10;
    cfg.batch_size = 2;
    cfg.grad_accum = 1;
    cfg.seed = 4;
    train_diffusion(st, st.whitener.whiten(lat), cfg);

    const fs::path dir = fs::temp_directory_path() / "ubdiff_denoiser_ckpt";
    fs::remove_all(dir);
    save_denoiser(st, dir);

    DenoiserState rt(4, 8, 1, 16);
    Rng rng2(48);
    rt.net.init(rng2);
    load_denoiser(rt, dir);
    CHECK(rt.step == st.step);
    CHECK(rt.schedule.alpha == st.schedule.alpha);
    CHECK(rt.whitener.mean == st.whitener.mean);
    auto pa = st.net.params(), pb = rt.net.params();
    for (std::size_t k = 0; k < pa.size(); ++k) {
        CHECK(pa[k]->w.v == pb[k]->w.v);
        CHECK(st.ema[k].v == rt.ema[k].v);
    }
    Tensor sa = sample_latent(st, 8, 5, SamplerKind::deterministic, 2);
    Tensor sb = sample_latent(rt, 8, 5, SamplerKind::deterministic, 2);
    CHECK(sa.v == sb.v);
    fs::remove_all(dir);
}

TEST_CASE("generated pairs decode both heads from one latent") {
    NetConfig nc;
    nc.latent_dim = 8;
    nc.token_dim = 16;
    nc.attn_blocks = 1;
    nc.attn_heads = 2;
    nc.attn_ff = 32;
    TwoHeadNet net(nc);
    Rng rng(53);
    net.init(rng);

    DenoiserState st(8, 16, 1, 16);
    st.net.init(rng);
    Tensor lat({4, 8});
    rng.fill_normal(lat);
    st.whitener = LatentWhitener::fit(lat);
    DiffusionTrainConfig cfg;
    cfg.steps = 20;
    cfg.batch_size = 4;
    cfg.grad_accum = 1;
    cfg.seed = 6;
    train_diffusion(st, st.whitener.whiten(lat), cfg);

    auto pairs = generate_pairs(st, net, 3, 99, 8);
    REQUIRE(pairs.size() == 3);
    for (auto& [vel, seis] : pairs) {
        REQUIRE(vel.shape == std::vector<int>{32, 32});
        REQUIRE(seis.shape == std::vector<int>{3, 256, 32});
        for (float x : vel.v) CHECK(std::abs(x) <= 1.0f);
        for (float x : seis.v) CHECK(std::abs(x) <= 1.0f);
    }
    // consistency: re-decoding the sampled latent reproduces the pair
    Tensor z = sample_latent(st, 8, 99, SamplerKind::deterministic, 3);
    Tensor z0 = st.whitener.unwhiten(z);
    Tensor zi({1, 8});
    for (int j = 0; j < 8; ++j) zi.at(0, j) = z0.at(1, j);
    Tensor vel = net.decode_velocity(zi);
    for (int r = 0; r < 32; ++r)
        for (int c = 0; c < 32; ++c) CHECK(vel.at(0, r, c) == pairs[1].first.at(r, c));
}
