#pragma once

#include <Eigen/Dense>

#include "ubdiff/encdec.hpp"
#include "ubdiff/wave.hpp"

namespace ubdiff {

// ---------------------------------------------------------------------------
// Feature extraction for FID. The standard natural-image network does not
// apply to 1-channel 32x32 physics arrays; the default extractor is a
// seed-fixed random convolution stack with global average pooling, so FID
// numbers are internally comparable only.
// ---------------------------------------------------------------------------

enum class ExtractorKind { fixed_random_conv, trained_encoder };

struct FeatureExtractorSpec {
    Modality modality = Modality::velocity;
    ExtractorKind kind = ExtractorKind::fixed_random_conv;
    int feature_dim = 64;
    std::uint64_t seed = 0;

    void validate() const {
        if (feature_dim < 2) throw std::invalid_argument("feature_dim must be >= 2");
    }
};

class FeatureExtractor {
  public:
    explicit FeatureExtractor(const FeatureExtractorSpec& spec) : spec_(spec) {
        spec.validate();
        Rng rng(derive_seed("feature_extractor", spec.seed));
        if (spec.modality == Modality::velocity) {
            stack_.add<nn::Conv2d>("fx.c1", 1, 16, 2, 2);
            stack_.add<nn::SiLU>();
            stack_.add<nn::Conv2d>("fx.c2", 16, 32, 2, 2);
            stack_.add<nn::SiLU>();
            stack_.add<nn::Conv2d>("fx.c3", 32, 64, 2, 2);
        } else {
            // the S source channels enter as input channels of one stack
            stack_.add<nn::Conv2d>("fx.c1", 3, 16, 4, 2);
            stack_.add<nn::SiLU>();
            stack_.add<nn::Conv2d>("fx.c2", 16, 32, 4, 2);
            stack_.add<nn::SiLU>();
            stack_.add<nn::Conv2d>("fx.c3", 32, 64, 4, 2);
        }
        stack_.init(rng);
        proj_ = std::make_unique<nn::Linear>("fx.proj", 64, spec.feature_dim);
        proj_->init(rng);
    }

    // data: list of per-sample arrays, velocity (H,W) or seismic (S,Tt,R)
    Tensor extract(const std::vector<Tensor>& data) {
        if (data.empty()) throw std::invalid_argument("extract_features: empty input");
        Tensor feats({int(data.size()), spec_.feature_dim});
        for (std::size_t i = 0; i < data.size(); ++i) {
            Tensor x = batched(data[i]);
            Tensor h = stack_.forward(x);  // [1, 64, h, w]
            const int C = h.shape[1], HW = h.shape[2] * h.shape[3];
            Tensor pooled({1, C});
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (int k = 0; k < HW; ++k) s += h.v[std::size_t(c) * HW + k];
                pooled.at(0, c) = float(s / HW);
            }
            Tensor f = proj_->forward(pooled);
            for (int j = 0; j < spec_.feature_dim; ++j) feats.at(int(i), j) = f.at(0, j);
        }
        return feats;
    }

  private:
    FeatureExtractorSpec spec_;
    nn::Sequential stack_;
    std::unique_ptr<nn::Linear> proj_;

    Tensor batched(const Tensor& x) const {
        Tensor b = x;
        if (spec_.modality == Modality::velocity) {
            if (x.shape.size() != 2)
                throw std::invalid_argument("velocity extractor expects (H,W), got " +
                                            shape_str(x.shape));
            b.shape = {1, 1, x.shape[0], x.shape[1]};
        } else {
            if (x.shape.size() != 3)
                throw std::invalid_argument("seismic extractor expects (S,Tt,R), got " +
                                            shape_str(x.shape));
            b.shape = {1, x.shape[0], x.shape[1], x.shape[2]};
        }
        return b;
    }
};

// ---------------------------------------------------------------------------
// Frechet distance between Gaussian feature fits
// ---------------------------------------------------------------------------

struct GaussianStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;

    // Unbiased covariance; a small ridge keeps sample estimates conditioned.
    static GaussianStats fit(const Tensor& feats, double ridge = 1e-6) {
        const int N = feats.shape[0], d = feats.shape[1];
        GaussianStats g;
        g.mu = Eigen::VectorXd::Zero(d);
        for (int i = 0; i < N; ++i)
            for (int j = 0; j < d; ++j) g.mu[j] += feats.at(i, j);
        g.mu /= double(N);
        g.sigma = Eigen::MatrixXd::Zero(d, d);
        for (int i = 0; i < N; ++i) {
            Eigen::VectorXd x(d);
            for (int j = 0; j < d; ++j) x[j] = feats.at(i, j) - g.mu[j];
            g.sigma += x * x.transpose();
        }
        g.sigma /= double(std::max(1, N - 1));
        g.sigma = 0.5 * (g.sigma + g.sigma.transpose());
        g.sigma += ridge * Eigen::MatrixXd::Identity(d, d);
        return g;
    }
};

namespace detail {

inline Eigen::MatrixXd sym_sqrt(const Eigen::MatrixXd& a) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) {
        if (ev[i] < -1e-6) throw std::invalid_argument("fid: covariance not PSD");
        ev[i] = std::sqrt(std::max(0.0, ev[i]));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}),
// with (S_a S_b)^{1/2} computed through S_a^{1/2} S_b S_a^{1/2}.
inline double fid(const GaussianStats& a, const GaussianStats& b) {
    if (a.mu.size() != b.mu.size())
        throw std::invalid_argument("fid: feature dimension mismatch");
    const Eigen::MatrixXd ra = detail::sym_sqrt(a.sigma);
    Eigen::MatrixXd m = ra * b.sigma * ra;
    m = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    double tr_sqrt = 0.0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        const double ev = es.eigenvalues()[i];
        if (ev < -1e-6) throw std::invalid_argument("fid: product matrix not PSD");
        tr_sqrt += std::sqrt(std::max(0.0, ev));
    }
    const double d2 = (a.mu - b.mu).squaredNorm();
    return d2 + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_sqrt;
}

inline double eval_fid(const std::vector<Tensor>& real, const std::vector<Tensor>& generated,
                       const FeatureExtractorSpec& spec) {
    FeatureExtractor fx(spec);
    return fid(GaussianStats::fit(fx.extract(real)), GaussianStats::fit(fx.extract(generated)));
}

// ---------------------------------------------------------------------------
// SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, valid positions
// ---------------------------------------------------------------------------

inline double ssim(const Tensor& a, const Tensor& b, double data_range) {
    check_same_shape(a, b, "ssim");
    if (a.shape.size() != 2) throw std::invalid_argument("ssim expects 2-D arrays");
    if (!(data_range > 0)) throw std::invalid_argument("ssim: data_range must be positive");
    const int H = a.shape[0], W = a.shape[1];
    constexpr int win = 11;
    if (H < win || W < win) throw std::invalid_argument("ssim: image smaller than the window");
    static const std::vector<double> g = [] {
        std::vector<double> k(win);
        double s = 0.0;
        for (int i = 0; i < win; ++i) {
            const double x = i - (win - 1) / 2.0;
            k[i] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
            s += k[i];
        }
        for (auto& v : k) v /= s;
        return k;
    }();

    const double c1 = (0.01 * data_range) * (0.01 * data_range);
    const double c2 = (0.03 * data_range) * (0.03 * data_range);
    double total = 0.0;
    long count = 0;
    for (int y = 0; y + win <= H; ++y)
        for (int x = 0; x + win <= W; ++x) {
            double ma = 0, mb = 0, va = 0, vb = 0, cov = 0;
            for (int i = 0; i < win; ++i)
                for (int j = 0; j < win; ++j) {
                    const double wgt = g[i] * g[j];
                    const double pa = a.at(y + i, x + j), pb = b.at(y + i, x + j);
                    ma += wgt * pa;
                    mb += wgt * pb;
                    va += wgt * pa * pa;
                    vb += wgt * pb * pb;
                    cov += wgt * pa * pb;
                }
            va -= ma * ma;
            vb -= mb * mb;
            cov -= ma * mb;
            total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return total / double(count);
}

// ---------------------------------------------------------------------------
// Inversion-lite: small convolutional seismic -> velocity probe network
// ---------------------------------------------------------------------------

struct InversionTrainConfig {
    int epochs = 10;
    int batch_size = 32;
    float lr = 3e-4f;
    std::uint64_t seed = 0;
};

class InversionLite {
  public:
    InversionLite(int vel_size = 32) : vel_size_(vel_size) {
        enc_.add<nn::Conv2d>("inv.c1", 3, 16, 2, 1);    // 128 x 32
        enc_.add<nn::GroupNorm>("inv.n1", 16, 4);
        enc_.add<nn::SiLU>();
        enc_.add<nn::Conv2d>("inv.c2", 16, 32, 2, 2);   // 64 x 16
        enc_.add<nn::GroupNorm>("inv.n2", 32, 8);
        enc_.add<nn::SiLU>();
        enc_.add<nn::Conv2d>("inv.c3", 32, 64, 2, 2);   // 32 x 8
        enc_.add<nn::GroupNorm>("inv.n3", 64, 8);
        enc_.add<nn::SiLU>();
        enc_.add<nn::Conv2d>("inv.c4", 64, 64, 2, 2);   // 16 x 4
        enc_.add<nn::GroupNorm>("inv.n4", 64, 8);
        enc_.add<nn::SiLU>();
        enc_.add<nn::Conv2d>("inv.c5", 64, 128, 2, 2);  // 8 x 2
        enc_.add<nn::GroupNorm>("inv.n5", 128, 8);
        enc_.add<nn::SiLU>();
        enc_.add<nn::Conv2d>("inv.c6", 128, 128, 2, 2); // 4 x 1
        enc_.add<nn::Reshape>(std::vector<int>{512});
        enc_.add<nn::Linear>("inv.fc", 512, 128);
        dec_.add<nn::Reshape>(std::vector<int>{128, 1, 1});
        dec_.add<nn::UpsampleNearest2x>();
        dec_.add<nn::Conv2d>("inv.d1", 128, 64, 1, 1);
        dec_.add<nn::GroupNorm>("inv.dn1", 64, 8);
        dec_.add<nn::SiLU>();
        dec_.add<nn::UpsampleNearest2x>();
        dec_.add<nn::Conv2d>("inv.d2", 64, 32, 1, 1);
        dec_.add<nn::GroupNorm>("inv.dn2", 32, 8);
        dec_.add<nn::SiLU>();
        dec_.add<nn::UpsampleNearest2x>();
        dec_.add<nn::Conv2d>("inv.d3", 32, 16, 1, 1);
        dec_.add<nn::GroupNorm>("inv.dn3", 16, 4);
        dec_.add<nn::SiLU>();
        dec_.add<nn::UpsampleNearest2x>();
        dec_.add<nn::Conv2d>("inv.d4", 16, 16, 1, 1);
        dec_.add<nn::GroupNorm>("inv.dn4", 16, 4);
        dec_.add<nn::SiLU>();
        dec_.add<nn::UpsampleNearest2x>();
        dec_.add<nn::Conv2d>("inv.d5", 16, 1, 1, 1);
        dec_.add<nn::Tanh>();
    }

    void init(Rng& rng) {
        enc_.init(rng);
        dec_.init(rng);
    }

    Tensor forward(const Tensor& seis) {  // [B, S, Tt, R] -> [B, H, W]
        Tensor y = dec_.forward(enc_.forward(seis));
        y.shape = {y.shape[0], vel_size_, vel_size_};
        return y;
    }

    void backward(const Tensor& gy) {
        Tensor g = gy;
        g.shape = {gy.shape[0], 1, vel_size_, vel_size_};
        enc_.backward(dec_.backward(g));
    }

    std::vector<nn::Param*> params() {
        std::vector<nn::Param*> p;
        enc_.collect(p);
        dec_.collect(p);
        return p;
    }

  private:
    int vel_size_;
    nn::Sequential enc_, dec_;
};

// Trains on (seismic, velocity) pairs in normalized units with L1+L2 loss.
inline std::vector<double> train_inversion_lite(InversionLite& model,
                                                const std::vector<std::pair<Tensor, Tensor>>& pairs,
                                                const InversionTrainConfig& cfg) {
    if (pairs.empty()) throw std::invalid_argument("train_inversion_lite: empty dataset");
    Rng init_rng(derive_seed("inversion_init", cfg.seed));
    model.init(init_rng);
    nn::Adam opt(model.params(), cfg.lr);
    Rng rng(derive_seed("inversion_train", cfg.seed));
    std::vector<int> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);
    LossWeights w;  // gamma1 = gamma2 = 1

    std::vector<double> epoch_losses;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double el = 0.0;
        std::size_t batches = 0;
        for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
            const std::size_t end = std::min(off + std::size_t(cfg.batch_size), order.size());
            const int B = int(end - off);
            Tensor seis({B, pairs[0].first.shape[0], pairs[0].first.shape[1],
                         pairs[0].first.shape[2]});
            Tensor vel({B, pairs[0].second.shape[0], pairs[0].second.shape[1]});
            for (int b = 0; b < B; ++b) {
                const auto& pr = pairs[order[off + b]];
                std::copy(pr.first.v.begin(), pr.first.v.end(),
                          seis.v.begin() + std::size_t(b) * pr.first.size());
                std::copy(pr.second.v.begin(), pr.second.v.end(),
                          vel.v.begin() + std::size_t(b) * pr.second.size());
            }
            opt.zero_grad();
            Tensor pred = model.forward(seis);
            const double loss = loss_majority(pred, vel, w);
            if (!std::isfinite(loss))
                throw std::runtime_error("NaN loss in inversion-lite training at epoch " +
                                         std::to_string(epoch));
            model.backward(loss_majority_grad(pred, vel, w));
            opt.step();
            el += loss;
            ++batches;
        }
        epoch_losses.push_back(el / double(batches));
    }
    return epoch_losses;
}

struct PairwiseReport {
    double mae = 0.0;
    double mse = 0.0;
    double ssim_mean = 0.0;
    int n_test = 0;
};

// MAE/MSE over velocity cells in normalized units; SSIM with data_range 2.
inline PairwiseReport pairwise_eval(InversionLite& model,
                                    const std::vector<std::pair<Tensor, Tensor>>& real_test) {
    if (real_test.empty()) throw std::invalid_argument("pairwise_eval: empty test set");
    PairwiseReport r;
    for (const auto& [seis, vel] : real_test) {
        Tensor b = seis;
        b.shape = {1, seis.shape[0], seis.shape[1], seis.shape[2]};
        Tensor pred = model.forward(b);
        pred.shape = {pred.shape[1], pred.shape[2]};
        r.mae += mean_abs_diff(pred, vel);
        r.mse += mean_sq_diff(pred, vel);
        r.ssim_mean += ssim(pred, vel, 2.0);
    }
    r.n_test = int(real_test.size());
    r.mae /= r.n_test;
    r.mse /= r.n_test;
    r.ssim_mean /= r.n_test;
    return r;
}

// ---------------------------------------------------------------------------
// Physics micro-check: normalized misfit of a generated gather against the
// forward modeling of its paired generated velocity map (raw units).
// ---------------------------------------------------------------------------

inline double physics_residual(const VelocityMap& vel_gen, const SeismicGather& seis_gen,
                               const AcquisitionGeometry& geom, const Wavelet& wav,
                               const SolverConfig& cfg) {
    SeismicGather sim = simulate(vel_gen, geom, wav, cfg);
    check_same_shape(sim.traces, seis_gen.traces, "physics_residual");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < sim.traces.size(); ++i) {
        const double d = double(sim.traces[i]) - double(seis_gen.traces[i]);
        num += d * d;
        den += double(sim.traces[i]) * double(sim.traces[i]);
    }
    if (den == 0.0) throw std::invalid_argument("physics_residual: zero reference wavefield");
    return std::sqrt(num) / std::sqrt(den);
}

}  // namespace ubdiff
