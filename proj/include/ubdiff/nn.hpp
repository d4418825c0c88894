#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "ubdiff/rng.hpp"
#include "ubdiff/tensor.hpp"

namespace ubdiff::nn {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

struct Param {
    std::string name;
    Tensor w;
    Tensor g;

    explicit Param(std::string n, std::vector<int> shape)
        : name(std::move(n)), w(shape), g(shape) {}
};

class Layer {
  public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x) = 0;
    virtual Tensor backward(const Tensor& gy) = 0;
    virtual void collect(std::vector<Param*>& out) {}
    virtual void init(Rng&) {}
};

inline std::size_t rows_of(const Tensor& x) {
    // all leading dims collapse into rows; last dim is the feature axis
    return x.size() / std::size_t(x.shape.back());
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------
class Linear : public Layer {
  public:
    Linear(std::string name, int in, int out)
        : in_(in), out_(out), W_(name + ".W", {out, in}), b_(name + ".b", {out}) {}

    void init(Rng& rng) override {
        const float s = std::sqrt(2.0f / float(in_ + out_));
        for (auto& x : W_.w.v) x = rng.normal() * s;
        b_.w.zero();
    }

    Tensor forward(const Tensor& x) override {
        x_ = x;
        const int B = int(rows_of(x));
        std::vector<int> osh = x.shape;
        osh.back() = out_;
        Tensor y(osh);
        CMapMat xm(x.data(), B, in_);
        CMapMat wm(W_.w.data(), out_, in_);
        MapMat ym(y.data(), B, out_);
        ym.noalias() = xm * wm.transpose();
        Eigen::Map<const Eigen::VectorXf> bv(b_.w.data(), out_);
        ym.rowwise() += bv.transpose();
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        const int B = int(rows_of(gy));
        CMapMat gym(gy.data(), B, out_);
        CMapMat xm(x_.data(), B, in_);
        MapMat gwm(W_.g.data(), out_, in_);
        gwm.noalias() += gym.transpose() * xm;
        Eigen::Map<Eigen::VectorXf> gbv(b_.g.data(), out_);
        gbv += gym.colwise().sum().transpose();
        Tensor gx(x_.shape);
        MapMat gxm(gx.data(), B, in_);
        CMapMat wm(W_.w.data(), out_, in_);
        gxm.noalias() = gym * wm;
        return gx;
    }

    void collect(std::vector<Param*>& out) override {
        out.push_back(&W_);
        out.push_back(&b_);
    }

    int in_, out_;
    Param W_, b_;

  private:
    Tensor x_;
};

// ---------------------------------------------------------------------------
// 3x3 convolution, pad 1, per-axis stride; im2col + GEMM
// ---------------------------------------------------------------------------
class Conv2d : public Layer {
  public:
    Conv2d(std::string name, int in_c, int out_c, int stride_h = 1, int stride_w = 1)
        : in_c_(in_c), out_c_(out_c), sh_(stride_h), sw_(stride_w),
          W_(name + ".W", {out_c, in_c, 3, 3}), b_(name + ".b", {out_c}) {}

    void init(Rng& rng) override {
        const float s = std::sqrt(2.0f / float(in_c_ * 9));
        for (auto& x : W_.w.v) x = rng.normal() * s;
        b_.w.zero();
    }

    Tensor forward(const Tensor& x) override {
        const int B = x.shape[0], H = x.shape[2], W = x.shape[3];
        if (x.shape[1] != in_c_)
            throw std::invalid_argument("conv: channel mismatch " + shape_str(x.shape));
        x_shape_ = x.shape;
        oh_ = (H + 2 - 3) / sh_ + 1;
        ow_ = (W + 2 - 3) / sw_ + 1;
        const int cols_n = B * oh_ * ow_;
        cols_ = RowMat(in_c_ * 9, cols_n);
        im2col(x, cols_);
        Tensor y({B, out_c_, oh_, ow_});
        CMapMat wm(W_.w.data(), out_c_, in_c_ * 9);
        RowMat ym = wm * cols_;  // out_c x (B*oh*ow)
        for (int co = 0; co < out_c_; ++co) {
            const float bias = b_.w[co];
            for (int b = 0; b < B; ++b) {
                float* dst = &y.at(b, co, 0, 0);
                const float* src = ym.data() + std::size_t(co) * cols_n + std::size_t(b) * oh_ * ow_;
                for (int k = 0; k < oh_ * ow_; ++k) dst[k] = src[k] + bias;
            }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        const int B = x_shape_[0];
        const int cols_n = B * oh_ * ow_;
        RowMat gym(out_c_, cols_n);
        for (int co = 0; co < out_c_; ++co)
            for (int b = 0; b < B; ++b) {
                const float* src = &gy.at(b, co, 0, 0);
                float* dst = gym.data() + std::size_t(co) * cols_n + std::size_t(b) * oh_ * ow_;
                for (int k = 0; k < oh_ * ow_; ++k) dst[k] = src[k];
            }
        MapMat gwm(W_.g.data(), out_c_, in_c_ * 9);
        gwm.noalias() += gym * cols_.transpose();
        for (int co = 0; co < out_c_; ++co) b_.g[co] += gym.row(co).sum();
        RowMat gcols = CMapMat(W_.w.data(), out_c_, in_c_ * 9).transpose() * gym;
        Tensor gx(x_shape_);
        col2im(gcols, gx);
        return gx;
    }

    void collect(std::vector<Param*>& out) override {
        out.push_back(&W_);
        out.push_back(&b_);
    }

    int in_c_, out_c_, sh_, sw_;
    Param W_, b_;

  private:
    std::vector<int> x_shape_;
    int oh_ = 0, ow_ = 0;
    RowMat cols_;

    void im2col(const Tensor& x, RowMat& cols) const {
        const int B = x.shape[0], H = x.shape[2], W = x.shape[3];
        const int cols_n = B * oh_ * ow_;
        for (int c = 0; c < in_c_; ++c)
            for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj) {
                    float* row = cols.data() + std::size_t((c * 3 + ki) * 3 + kj) * cols_n;
                    for (int b = 0; b < B; ++b)
                        for (int oy = 0; oy < oh_; ++oy) {
                            const int iy = oy * sh_ + ki - 1;
                            float* dst = row + std::size_t(b) * oh_ * ow_ + std::size_t(oy) * ow_;
                            if (iy < 0 || iy >= H) {
                                for (int ox = 0; ox < ow_; ++ox) dst[ox] = 0.0f;
                                continue;
                            }
                            const float* src = &x.at(b, c, iy, 0);
                            for (int ox = 0; ox < ow_; ++ox) {
                                const int ix = ox * sw_ + kj - 1;
                                dst[ox] = (ix < 0 || ix >= W) ? 0.0f : src[ix];
                            }
                        }
                }
    }

    void col2im(const RowMat& gcols, Tensor& gx) const {
        const int B = gx.shape[0], H = gx.shape[2], W = gx.shape[3];
        const int cols_n = B * oh_ * ow_;
        for (int c = 0; c < in_c_; ++c)
            for (int ki = 0; ki < 3; ++ki)
                for (int kj = 0; kj < 3; ++kj) {
                    const float* row = gcols.data() + std::size_t((c * 3 + ki) * 3 + kj) * cols_n;
                    for (int b = 0; b < B; ++b)
                        for (int oy = 0; oy < oh_; ++oy) {
                            const int iy = oy * sh_ + ki - 1;
                            if (iy < 0 || iy >= H) continue;
                            const float* src = row + std::size_t(b) * oh_ * ow_ + std::size_t(oy) * ow_;
                            float* dst = &gx.at(b, c, iy, 0);
                            for (int ox = 0; ox < ow_; ++ox) {
                                const int ix = ox * sw_ + kj - 1;
                                if (ix >= 0 && ix < W) dst[ix] += src[ox];
                            }
                        }
                }
    }
};

// ---------------------------------------------------------------------------
// GroupNorm over [B, C, H, W]
// ---------------------------------------------------------------------------
class GroupNorm : public Layer {
  public:
    GroupNorm(std::string name, int channels, int groups)
        : C_(channels), G_(groups), gamma_(name + ".gamma", {channels}),
          beta_(name + ".beta", {channels}) {
        if (channels % groups != 0) throw std::invalid_argument("groupnorm: C % G != 0");
        gamma_.w.fill(1.0f);
    }

    void init(Rng&) override { gamma_.w.fill(1.0f); beta_.w.zero(); }

    Tensor forward(const Tensor& x) override {
        const int B = x.shape[0], H = x.shape[2], W = x.shape[3];
        const int cg = C_ / G_;
        const std::size_t gn = std::size_t(cg) * H * W;
        xhat_ = Tensor(x.shape);
        inv_std_.assign(std::size_t(B) * G_, 0.0f);
        x_shape_ = x.shape;
        for (int b = 0; b < B; ++b)
            for (int g = 0; g < G_; ++g) {
                double mu = 0.0;
                for (int c = g * cg; c < (g + 1) * cg; ++c)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) mu += x.at(b, c, h, w);
                mu /= double(gn);
                double var = 0.0;
                for (int c = g * cg; c < (g + 1) * cg; ++c)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) {
                            const double d = x.at(b, c, h, w) - mu;
                            var += d * d;
                        }
                var /= double(gn);
                const float is = float(1.0 / std::sqrt(var + 1e-5));
                inv_std_[std::size_t(b) * G_ + g] = is;
                for (int c = g * cg; c < (g + 1) * cg; ++c)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w)
                            xhat_.at(b, c, h, w) = (x.at(b, c, h, w) - float(mu)) * is;
            }
        Tensor y(x.shape);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C_; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        y.at(b, c, h, w) = gamma_.w[c] * xhat_.at(b, c, h, w) + beta_.w[c];
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        const int B = x_shape_[0], H = x_shape_[2], W = x_shape_[3];
        const int cg = C_ / G_;
        const double gn = double(cg) * H * W;
        for (int c = 0; c < C_; ++c) {
            double gg = 0.0, gb = 0.0;
            for (int b = 0; b < B; ++b)
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w) {
                        gg += double(gy.at(b, c, h, w)) * xhat_.at(b, c, h, w);
                        gb += gy.at(b, c, h, w);
                    }
            gamma_.g[c] += float(gg);
            beta_.g[c] += float(gb);
        }
        Tensor gx(x_shape_);
        for (int b = 0; b < B; ++b)
            for (int g = 0; g < G_; ++g) {
                double sum_gxh = 0.0, sum_gxh_xh = 0.0;
                for (int c = g * cg; c < (g + 1) * cg; ++c)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) {
                            const double gxh = double(gy.at(b, c, h, w)) * gamma_.w[c];
                            sum_gxh += gxh;
                            sum_gxh_xh += gxh * xhat_.at(b, c, h, w);
                        }
                const double m1 = sum_gxh / gn, m2 = sum_gxh_xh / gn;
                const float is = inv_std_[std::size_t(b) * G_ + g];
                for (int c = g * cg; c < (g + 1) * cg; ++c)
                    for (int h = 0; h < H; ++h)
                        for (int w = 0; w < W; ++w) {
                            const double gxh = double(gy.at(b, c, h, w)) * gamma_.w[c];
                            gx.at(b, c, h, w) =
                                float(is * (gxh - m1 - double(xhat_.at(b, c, h, w)) * m2));
                        }
            }
        return gx;
    }

    void collect(std::vector<Param*>& out) override {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }

    int C_, G_;
    Param gamma_, beta_;

  private:
    Tensor xhat_;
    std::vector<float> inv_std_;
    std::vector<int> x_shape_;
};

// ---------------------------------------------------------------------------
// LayerNorm over the last axis
// ---------------------------------------------------------------------------
class LayerNorm : public Layer {
  public:
    LayerNorm(std::string name, int dim)
        : D_(dim), gamma_(name + ".gamma", {dim}), beta_(name + ".beta", {dim}) {
        gamma_.w.fill(1.0f);
    }

    void init(Rng&) override { gamma_.w.fill(1.0f); beta_.w.zero(); }

    Tensor forward(const Tensor& x) override {
        const std::size_t B = rows_of(x);
        xhat_ = Tensor(x.shape);
        inv_std_.assign(B, 0.0f);
        for (std::size_t r = 0; r < B; ++r) {
            const float* xr = x.data() + r * D_;
            double mu = 0.0;
            for (int i = 0; i < D_; ++i) mu += xr[i];
            mu /= D_;
            double var = 0.0;
            for (int i = 0; i < D_; ++i) {
                const double d = xr[i] - mu;
                var += d * d;
            }
            var /= D_;
            const float is = float(1.0 / std::sqrt(var + 1e-5));
            inv_std_[r] = is;
            float* xh = xhat_.data() + r * D_;
            for (int i = 0; i < D_; ++i) xh[i] = (xr[i] - float(mu)) * is;
        }
        Tensor y(x.shape);
        for (std::size_t r = 0; r < B; ++r) {
            const float* xh = xhat_.data() + r * D_;
            float* yr = y.data() + r * D_;
            for (int i = 0; i < D_; ++i) yr[i] = gamma_.w[i] * xh[i] + beta_.w[i];
        }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        const std::size_t B = rows_of(gy);
        Tensor gx(gy.shape);
        for (std::size_t r = 0; r < B; ++r) {
            const float* gyr = gy.data() + r * D_;
            const float* xh = xhat_.data() + r * D_;
            double s1 = 0.0, s2 = 0.0;
            for (int i = 0; i < D_; ++i) {
                const double gxh = double(gyr[i]) * gamma_.w[i];
                s1 += gxh;
                s2 += gxh * xh[i];
                gamma_.g[i] += gyr[i] * xh[i];
                beta_.g[i] += gyr[i];
            }
            const double m1 = s1 / D_, m2 = s2 / D_;
            float* gxr = gx.data() + r * D_;
            for (int i = 0; i < D_; ++i) {
                const double gxh = double(gyr[i]) * gamma_.w[i];
                gxr[i] = float(inv_std_[r] * (gxh - m1 - double(xh[i]) * m2));
            }
        }
        return gx;
    }

    void collect(std::vector<Param*>& out) override {
        out.push_back(&gamma_);
        out.push_back(&beta_);
    }

    int D_;
    Param gamma_, beta_;

  private:
    Tensor xhat_;
    std::vector<float> inv_std_;
};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------
class SiLU : public Layer {
  public:
    Tensor forward(const Tensor& x) override {
        x_ = x;
        Tensor y(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const float s = 1.0f / (1.0f + std::exp(-x[i]));
            y[i] = x[i] * s;
        }
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx(gy.shape);
        for (std::size_t i = 0; i < gy.size(); ++i) {
            const float s = 1.0f / (1.0f + std::exp(-x_[i]));
            gx[i] = gy[i] * (s + x_[i] * s * (1.0f - s));
        }
        return gx;
    }

  private:
    Tensor x_;
};

class Tanh : public Layer {
  public:
    Tensor forward(const Tensor& x) override {
        y_ = Tensor(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i) y_[i] = std::tanh(x[i]);
        return y_;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx(gy.shape);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gy[i] * (1.0f - y_[i] * y_[i]);
        return gx;
    }

  private:
    Tensor y_;
};

class UpsampleNearest2x : public Layer {
  public:
    Tensor forward(const Tensor& x) override {
        x_shape_ = x.shape;
        const int B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
        Tensor y({B, C, 2 * H, 2 * W});
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < 2 * H; ++h)
                    for (int w = 0; w < 2 * W; ++w)
                        y.at(b, c, h, w) = x.at(b, c, h / 2, w / 2);
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx(x_shape_);
        const int B = gy.shape[0], C = gy.shape[1], H2 = gy.shape[2], W2 = gy.shape[3];
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H2; ++h)
                    for (int w = 0; w < W2; ++w)
                        gx.at(b, c, h / 2, w / 2) += gy.at(b, c, h, w);
        return gx;
    }

  private:
    std::vector<int> x_shape_;
};

// Reshape preserving the batch axis.
class Reshape : public Layer {
  public:
    explicit Reshape(std::vector<int> trailing) : trailing_(std::move(trailing)) {}
    Tensor forward(const Tensor& x) override {
        x_shape_ = x.shape;
        std::vector<int> osh{x.shape[0]};
        osh.insert(osh.end(), trailing_.begin(), trailing_.end());
        if (Tensor::numel(osh) != x.size())
            throw std::invalid_argument("reshape: element count mismatch");
        Tensor y = x;
        y.shape = osh;
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx = gy;
        gx.shape = x_shape_;
        return gx;
    }

  private:
    std::vector<int> trailing_;
    std::vector<int> x_shape_;
};

// ---------------------------------------------------------------------------
// Multi-head self attention over [B, T, D]
// ---------------------------------------------------------------------------
class SelfAttention : public Layer {
  public:
    SelfAttention(std::string name, int dim, int heads)
        : D_(dim), H_(heads), dh_(dim / heads),
          qkv_(name + ".qkv", dim, 3 * dim), proj_(name + ".proj", dim, dim) {
        if (dim % heads != 0) throw std::invalid_argument("attention: D % heads != 0");
    }

    void init(Rng& rng) override {
        qkv_.init(rng);
        proj_.init(rng);
    }

    Tensor forward(const Tensor& x) override {
        B_ = x.shape[0];
        T_ = x.shape[1];
        qkv_out_ = qkv_.forward(x);  // [B, T, 3D]
        q_ = split_heads(qkv_out_, 0);
        k_ = split_heads(qkv_out_, 1);
        v_ = split_heads(qkv_out_, 2);
        attn_ = Tensor({B_, H_, T_, T_});
        Tensor ctx({B_, H_, T_, dh_});
        const float scale = 1.0f / std::sqrt(float(dh_));
        for (int b = 0; b < B_; ++b)
            for (int h = 0; h < H_; ++h) {
                CMapMat Q(&q_.at(b, h, 0, 0), T_, dh_);
                CMapMat K(&k_.at(b, h, 0, 0), T_, dh_);
                CMapMat V(&v_.at(b, h, 0, 0), T_, dh_);
                MapMat A(&attn_.at(b, h, 0, 0), T_, T_);
                A.noalias() = Q * K.transpose() * scale;
                for (int i = 0; i < T_; ++i) {  // row softmax
                    float mx = A.row(i).maxCoeff();
                    double sum = 0.0;
                    for (int j = 0; j < T_; ++j) {
                        A(i, j) = std::exp(A(i, j) - mx);
                        sum += A(i, j);
                    }
                    A.row(i) /= float(sum);
                }
                MapMat C(&ctx.at(b, h, 0, 0), T_, dh_);
                C.noalias() = A * V;
            }
        return proj_.forward(merge_heads(ctx));
    }

    Tensor backward(const Tensor& gy) override {
        Tensor gctx_m = proj_.backward(gy);           // [B, T, D]
        Tensor gctx = split_heads_direct(gctx_m);     // [B, H, T, dh]
        Tensor gq({B_, H_, T_, dh_}), gk({B_, H_, T_, dh_}), gv({B_, H_, T_, dh_});
        const float scale = 1.0f / std::sqrt(float(dh_));
        for (int b = 0; b < B_; ++b)
            for (int h = 0; h < H_; ++h) {
                CMapMat Q(&q_.at(b, h, 0, 0), T_, dh_);
                CMapMat K(&k_.at(b, h, 0, 0), T_, dh_);
                CMapMat V(&v_.at(b, h, 0, 0), T_, dh_);
                CMapMat A(&attn_.at(b, h, 0, 0), T_, T_);
                CMapMat gC(&gctx.at(b, h, 0, 0), T_, dh_);
                RowMat gA = gC * V.transpose();       // T x T
                MapMat gV(&gv.at(b, h, 0, 0), T_, dh_);
                gV.noalias() = A.transpose() * gC;
                // softmax backward per row
                RowMat gS(T_, T_);
                for (int i = 0; i < T_; ++i) {
                    const float dot = gA.row(i).dot(A.row(i));
                    for (int j = 0; j < T_; ++j)
                        gS(i, j) = A(i, j) * (gA(i, j) - dot);
                }
                MapMat gQ(&gq.at(b, h, 0, 0), T_, dh_);
                MapMat gK(&gk.at(b, h, 0, 0), T_, dh_);
                gQ.noalias() = gS * K * scale;
                gK.noalias() = gS.transpose() * Q * scale;
            }
        Tensor gqkv({B_, T_, 3 * D_});
        merge_into_qkv(gq, gqkv, 0);
        merge_into_qkv(gk, gqkv, 1);
        merge_into_qkv(gv, gqkv, 2);
        return qkv_.backward(gqkv);
    }

    void collect(std::vector<Param*>& out) override {
        qkv_.collect(out);
        proj_.collect(out);
    }

  private:
    int D_, H_, dh_;
    int B_ = 0, T_ = 0;
    Linear qkv_, proj_;
    Tensor qkv_out_, q_, k_, v_, attn_;

    Tensor split_heads(const Tensor& qkv, int which) const {
        Tensor out({B_, H_, T_, dh_});
        for (int b = 0; b < B_; ++b)
            for (int t = 0; t < T_; ++t)
                for (int h = 0; h < H_; ++h)
                    for (int d = 0; d < dh_; ++d)
                        out.at(b, h, t, d) = qkv.at(b, t, which * D_ + h * dh_ + d);
        return out;
    }
    Tensor split_heads_direct(const Tensor& x) const {
        Tensor out({B_, H_, T_, dh_});
        for (int b = 0; b < B_; ++b)
            for (int t = 0; t < T_; ++t)
                for (int h = 0; h < H_; ++h)
                    for (int d = 0; d < dh_; ++d)
                        out.at(b, h, t, d) = x.at(b, t, h * dh_ + d);
        return out;
    }
    Tensor merge_heads(const Tensor& x) const {
        Tensor out({B_, T_, D_});
        for (int b = 0; b < B_; ++b)
            for (int h = 0; h < H_; ++h)
                for (int t = 0; t < T_; ++t)
                    for (int d = 0; d < dh_; ++d)
                        out.at(b, t, h * dh_ + d) = x.at(b, h, t, d);
        return out;
    }
    void merge_into_qkv(const Tensor& g, Tensor& gqkv, int which) const {
        for (int b = 0; b < B_; ++b)
            for (int h = 0; h < H_; ++h)
                for (int t = 0; t < T_; ++t)
                    for (int d = 0; d < dh_; ++d)
                        gqkv.at(b, t, which * D_ + h * dh_ + d) = g.at(b, h, t, d);
    }
};

// ---------------------------------------------------------------------------
// Sequential container
// ---------------------------------------------------------------------------
class Sequential : public Layer {
  public:
    template <typename L, typename... Args>
    L* add(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L* raw = layer.get();
        layers_.push_back(std::move(layer));
        return raw;
    }

    Tensor forward(const Tensor& x) override {
        Tensor h = x;
        for (auto& l : layers_) h = l->forward(h);
        return h;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor g = gy;
        for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
        return g;
    }
    void collect(std::vector<Param*>& out) override {
        for (auto& l : layers_) l->collect(out);
    }
    void init(Rng& rng) override {
        for (auto& l : layers_) l->init(rng);
    }

  private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

// Pre-norm transformer block: x + attn(ln(x)), then x + ff(ln(x)).
class TransformerBlock : public Layer {
  public:
    TransformerBlock(std::string name, int dim, int heads, int ff_width)
        : ln1_(name + ".ln1", dim), attn_(name + ".attn", dim, heads),
          ln2_(name + ".ln2", dim), ff1_(name + ".ff1", dim, ff_width),
          ff2_(name + ".ff2", ff_width, dim) {}

    void init(Rng& rng) override {
        attn_.init(rng);
        ff1_.init(rng);
        ff2_.init(rng);
    }

    Tensor forward(const Tensor& x) override {
        Tensor a = attn_.forward(ln1_.forward(x));
        h_ = Tensor(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i) h_[i] = x[i] + a[i];
        Tensor f = ff2_.forward(act_.forward(ff1_.forward(ln2_.forward(h_))));
        Tensor y(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = h_[i] + f[i];
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        Tensor gf = ln2_.backward(ff1_.backward(act_.backward(ff2_.backward(gy))));
        Tensor gh(gy.shape);
        for (std::size_t i = 0; i < gy.size(); ++i) gh[i] = gy[i] + gf[i];
        Tensor ga = ln1_.backward(attn_.backward(gh));
        Tensor gx(gy.shape);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = gh[i] + ga[i];
        return gx;
    }

    void collect(std::vector<Param*>& out) override {
        ln1_.collect(out);
        attn_.collect(out);
        ln2_.collect(out);
        ff1_.collect(out);
        ff2_.collect(out);
    }

  private:
    LayerNorm ln1_;
    SelfAttention attn_;
    LayerNorm ln2_;
    Linear ff1_, ff2_;
    SiLU act_;
    Tensor h_;
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------
class Adam {
  public:
    explicit Adam(std::vector<Param*> params, float lr = 1e-4f, float b1 = 0.9f,
                  float b2 = 0.999f, float eps = 1e-8f)
        : params_(std::move(params)), lr(lr), b1_(b1), b2_(b2), eps_(eps) {
        for (auto* p : params_) {
            m_.emplace_back(p->w.shape);
            v_.emplace_back(p->w.shape);
        }
    }

    void zero_grad() {
        for (auto* p : params_) p->g.zero();
    }

    void step() {
        ++t_;
        const float c1 = 1.0f - std::pow(b1_, float(t_));
        const float c2 = 1.0f - std::pow(b2_, float(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& w = params_[k]->w;
            auto& g = params_[k]->g;
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                m[i] = b1_ * m[i] + (1.0f - b1_) * g[i];
                v[i] = b2_ * v[i] + (1.0f - b2_) * g[i] * g[i];
                w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            }
        }
    }

    float lr;

  private:
    std::vector<Param*> params_;
    float b1_, b2_, eps_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

}  // namespace ubdiff::nn
