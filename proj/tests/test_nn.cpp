#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ubdiff/nn.hpp"

using namespace ubdiff;
using namespace ubdiff::nn;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, float scale = 1.0f) {
    Tensor t(std::move(shape));
    for (auto& x : t.v) x = rng.normal() * scale;
    return t;
}

// L = sum_i c_i y_i, so dL/dy = c and all gradients are probed at once.
double loss_of(Layer& l, const Tensor& x, const Tensor& c) {
    Tensor y = l.forward(x);
    REQUIRE(y.shape == c.shape);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += double(y[i]) * c[i];
    return s;
}

void expect_close(float analytic, float numeric, float tol) {
    const float denom = std::max({1.0f, std::abs(analytic), std::abs(numeric)});
    if (std::abs(analytic - numeric) > tol * denom) {
        CAPTURE(analytic, numeric);
        FAIL_CHECK("gradient mismatch");
    } else {
        SUCCEED();
    }
}

// Central-difference check of input and parameter gradients.
void check_gradients(Layer& l, Tensor x, float eps = 2e-2f, float tol = 2e-2f) {
    Rng rng(99);
    Tensor y0 = l.forward(x);
    Tensor c = random_tensor(y0.shape, rng);

    std::vector<Param*> ps;
    l.collect(ps);
    for (auto* p : ps) p->g.zero();
    l.forward(x);  // refresh caches right before backward
    Tensor gx = l.backward(c);
    REQUIRE(gx.shape == x.shape);
    std::vector<Tensor> saved;
    for (auto* p : ps) saved.push_back(p->g);

    for (std::size_t i = 0; i < x.size(); ++i) {
        Tensor xp = x;
        xp[i] += eps;
        const double lp = loss_of(l, xp, c);
        xp[i] -= 2 * eps;
        const double lm = loss_of(l, xp, c);
        expect_close(gx[i], float((lp - lm) / (2 * eps)), tol);
    }
    for (std::size_t k = 0; k < ps.size(); ++k) {
        Tensor& w = ps[k]->w;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const float orig = w[i];
            w[i] = orig + eps;
            const double lp = loss_of(l, x, c);
            w[i] = orig - eps;
            const double lm = loss_of(l, x, c);
            w[i] = orig;
            expect_close(saved[k][i], float((lp - lm) / (2 * eps)), tol);
        }
    }
}

}  // namespace

TEST_CASE("Linear matches finite differences") {
    Rng rng(1);
    Linear l("l", 5, 4);
    l.init(rng);
    check_gradients(l, random_tensor({3, 5}, rng));
}

TEST_CASE("Linear broadcasts over leading axes") {
    Rng rng(2);
    Linear l("l", 4, 3);
    l.init(rng);
    auto x = random_tensor({2, 5, 4}, rng);
    auto y = l.forward(x);
    REQUIRE(y.shape == std::vector<int>({2, 5, 3}));
    check_gradients(l, x);
}

TEST_CASE("Conv2d matches finite differences (stride 1)") {
    Rng rng(3);
    Conv2d l("c", 3, 4);
    l.init(rng);
    check_gradients(l, random_tensor({2, 3, 6, 5}, rng));
}

TEST_CASE("Conv2d matches finite differences (stride 2x2)") {
    Rng rng(4);
    Conv2d l("c", 2, 3, 2, 2);
    l.init(rng);
    check_gradients(l, random_tensor({2, 2, 8, 6}, rng));
}

TEST_CASE("Conv2d matches finite differences (anisotropic stride 4x2)") {
    Rng rng(5);
    Conv2d l("c", 2, 2, 4, 2);
    l.init(rng);
    check_gradients(l, random_tensor({1, 2, 16, 8}, rng));
}

TEST_CASE("Conv2d stride-2 halves spatial dims") {
    Rng rng(6);
    Conv2d l("c", 1, 1, 2, 2);
    l.init(rng);
    auto y = l.forward(random_tensor({1, 1, 32, 32}, rng));
    CHECK(y.shape == std::vector<int>({1, 1, 16, 16}));
}

TEST_CASE("GroupNorm matches finite differences") {
    Rng rng(7);
    GroupNorm l("g", 4, 2);
    l.init(rng);
    // non-trivial gamma/beta so their gradients are exercised
    for (auto& x : l.gamma_.w.v) x = 1.0f + 0.3f * rng.normal();
    for (auto& x : l.beta_.w.v) x = 0.2f * rng.normal();
    check_gradients(l, random_tensor({2, 4, 3, 5}, rng));
}

TEST_CASE("GroupNorm normalizes each group") {
    Rng rng(8);
    GroupNorm l("g", 8, 4);
    l.init(rng);
    auto y = l.forward(random_tensor({2, 8, 4, 4}, rng, 3.0f));
    // per (batch, group) mean ~0 and variance ~1
    for (int b = 0; b < 2; ++b)
        for (int g = 0; g < 4; ++g) {
            double mu = 0, var = 0;
            for (int c = 2 * g; c < 2 * g + 2; ++c)
                for (int h = 0; h < 4; ++h)
                    for (int w = 0; w < 4; ++w) mu += y.at(b, c, h, w);
            mu /= 32.0;
            for (int c = 2 * g; c < 2 * g + 2; ++c)
                for (int h = 0; h < 4; ++h)
                    for (int w = 0; w < 4; ++w) {
                        const double d = y.at(b, c, h, w) - mu;
                        var += d * d;
                    }
            var /= 32.0;
            CHECK(std::abs(mu) < 1e-4);
            CHECK(var == Catch::Approx(1.0).margin(1e-2));
        }
}

TEST_CASE("LayerNorm matches finite differences") {
    Rng rng(9);
    LayerNorm l("ln", 6);
    l.init(rng);
    for (auto& x : l.gamma_.w.v) x = 1.0f + 0.3f * rng.normal();
    for (auto& x : l.beta_.w.v) x = 0.2f * rng.normal();
    check_gradients(l, random_tensor({4, 6}, rng));
}

TEST_CASE("SiLU matches finite differences and fixed values") {
    SiLU l;
    Tensor x({1, 3});
    x.v = {0.0f, 1.0f, -1.0f};
    auto y = l.forward(x);
    CHECK(y[0] == Catch::Approx(0.0));
    CHECK(y[1] == Catch::Approx(1.0 / (1.0 + std::exp(-1.0))));
    CHECK(y[2] == Catch::Approx(-1.0 / (1.0 + std::exp(1.0))));
    Rng rng(10);
    check_gradients(l, random_tensor({3, 7}, rng));
}

TEST_CASE("Tanh matches finite differences and saturates to (-1, 1)") {
    Tanh l;
    Rng rng(11);
    auto y = l.forward(random_tensor({2, 9}, rng, 5.0f));
    for (float v : y.v) {
        CHECK(v <= 1.0f);
        CHECK(v >= -1.0f);
    }
    check_gradients(l, random_tensor({2, 9}, rng));
}

TEST_CASE("UpsampleNearest2x replicates and back-propagates sums") {
    UpsampleNearest2x l;
    Rng rng(12);
    auto x = random_tensor({1, 2, 3, 4}, rng);
    auto y = l.forward(x);
    REQUIRE(y.shape == std::vector<int>({1, 2, 6, 8}));
    for (int c = 0; c < 2; ++c)
        for (int h = 0; h < 6; ++h)
            for (int w = 0; w < 8; ++w) CHECK(y.at(0, c, h, w) == x.at(0, c, h / 2, w / 2));
    check_gradients(l, x);
}

TEST_CASE("Reshape round-trips and rejects bad sizes") {
    Reshape l({3, 4});
    Rng rng(13);
    auto x = random_tensor({2, 12}, rng);
    auto y = l.forward(x);
    CHECK(y.shape == std::vector<int>({2, 3, 4}));
    CHECK(y.v == x.v);
    CHECK(l.backward(y).shape == x.shape);
    Reshape bad({5, 5});
    CHECK_THROWS_AS(bad.forward(x), std::invalid_argument);
}

TEST_CASE("SelfAttention matches finite differences") {
    Rng rng(14);
    SelfAttention l("a", 8, 2);
    l.init(rng);
    check_gradients(l, random_tensor({2, 5, 8}, rng), 1e-2f, 3e-2f);
}

TEST_CASE("SelfAttention rejects indivisible head count") {
    CHECK_THROWS_AS(SelfAttention("a", 10, 3), std::invalid_argument);
}

TEST_CASE("TransformerBlock matches finite differences") {
    Rng rng(15);
    TransformerBlock l("t", 8, 2, 16);
    l.init(rng);
    check_gradients(l, random_tensor({1, 4, 8}, rng), 1e-2f, 3e-2f);
}

TEST_CASE("Sequential conv stack matches finite differences") {
    Rng rng(16);
    Sequential s;
    s.add<Conv2d>("c1", 2, 4, 2, 2);
    s.add<GroupNorm>("g1", 4, 2);
    s.add<SiLU>();
    s.add<UpsampleNearest2x>();
    s.add<Conv2d>("c2", 4, 1);
    s.add<Tanh>();
    s.init(rng);
    check_gradients(s, random_tensor({1, 2, 6, 6}, rng), 1e-2f, 3e-2f);
}

TEST_CASE("init is deterministic given the rng seed") {
    auto snapshot = [](int seed) {
        Rng rng{std::uint64_t(seed)};
        Sequential s;
        s.add<Linear>("l", 6, 6);
        s.add<Conv2d>("c", 2, 2);
        s.init(rng);
        std::vector<Param*> ps;
        s.collect(ps);
        std::vector<float> all;
        for (auto* p : ps) all.insert(all.end(), p->w.v.begin(), p->w.v.end());
        return all;
    };
    CHECK(snapshot(42) == snapshot(42));
    CHECK(snapshot(42) != snapshot(43));
}

TEST_CASE("Adam minimizes a quadratic and bias-corrects the first step") {
    Param p("p", {1});
    p.w[0] = 3.0f;
    Adam opt({&p}, 0.1f);

    // first step has magnitude ~lr regardless of gradient scale
    p.g[0] = 1e-4f;
    opt.step();
    CHECK(std::abs(p.w[0] - 3.0f) == Catch::Approx(0.1).epsilon(0.01));

    for (int i = 0; i < 500; ++i) {
        opt.zero_grad();
        p.g[0] = 2.0f * p.w[0];  // d/dw of w^2
        opt.step();
    }
    CHECK(std::abs(p.w[0]) < 1e-2f);

    opt.zero_grad();
    CHECK(p.g[0] == 0.0f);
}
