#pragma once

#include <chrono>
#include <fstream>

#include "ubdiff/encdec.hpp"
#include "ubdiff/rng.hpp"

namespace ubdiff {

struct TrainConfig {
    int epochs_step1 = 50;
    int epochs_step2 = 50;
    int batch_size = 64;
    float learning_rate = 1e-4f;
    float lr_decay = 0.995f;  // per-epoch multiplicative factor
    LossWeights weights;      // gamma_1..4 default 1; F set per run
    std::uint64_t seed = 0;
    fs::path metrics_log;     // optional JSON-lines file, one record per epoch

    void validate() const {
        if (epochs_step1 < 1 || epochs_step2 < 1)
            throw std::invalid_argument("epoch counts must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
        if (!(lr_decay > 0.0f) || lr_decay > 1.0f)
            throw std::invalid_argument("lr_decay must be in (0, 1]");
        weights.validate();
    }
};

struct TrainReport {
    std::vector<double> epoch_loss;         // per-epoch mean training loss
    std::vector<double> epoch_loss_ma;      // majority-term component
    std::vector<double> epoch_loss_mi;      // minority-term component
    int freeze = 0;
    double wall_seconds = 0.0;
    double val_mae = -1.0;                  // minority-reconstruction MAE, when measured
};

namespace detail {

inline Tensor stack_batch(const std::vector<const Tensor*>& items) {
    std::vector<int> shape{int(items.size())};
    shape.insert(shape.end(), items[0]->shape.begin(), items[0]->shape.end());
    Tensor out(shape);
    const std::size_t per = items[0]->size();
    for (std::size_t i = 0; i < items.size(); ++i)
        std::copy(items[i]->v.begin(), items[i]->v.end(), out.v.begin() + i * per);
    return out;
}

[[noreturn]] inline void rethrow_with_epoch(const std::string& stage, int epoch,
                                            const std::exception& e) {
    throw std::runtime_error(stage + " training aborted at epoch " + std::to_string(epoch) +
                             ": " + e.what());
}

inline void log_epoch(const fs::path& path, int epoch, float lr, double loss, double loss_ma,
                      double loss_mi) {
    if (path.empty()) return;
    std::ofstream f(path, std::ios::app);
    f << json{{"epoch", epoch}, {"lr", lr}, {"loss", loss}, {"loss_ma", loss_ma},
              {"loss_mi", loss_mi}}
             .dump()
      << "\n";
}

}  // namespace detail

// Step 1 (Eq. 2): self-supervised majority reconstruction. Gradients flow to
// the encoder, the majority projection, and the majority decoder only.
inline TrainReport train_step1(TwoHeadNet& net, const std::vector<PairedSample>& majority,
                               const TrainConfig& cfg) {
    cfg.validate();
    if (majority.empty()) throw std::invalid_argument("train_step1: empty dataset");
    const auto t_start = std::chrono::steady_clock::now();

    nn::Adam opt(net.params_majority_path(), cfg.learning_rate);
    Rng rng(derive_seed("train_step1", cfg.seed));
    std::vector<int> order(majority.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);

    TrainReport report;
    for (int epoch = 0; epoch < cfg.epochs_step1; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
            const std::size_t end = std::min(off + cfg.batch_size, order.size());
            std::vector<const Tensor*> items;
            for (std::size_t i = off; i < end; ++i) items.push_back(&majority[order[i]].ma);
            Tensor ma = detail::stack_batch(items);

            opt.zero_grad();
            double loss = 0.0;
            try {
                Tensor z = net.encode(ma);
                Tensor pred = net.decode_majority(z);
                loss = loss_majority(pred, ma, cfg.weights);
                if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");
                Tensor gz = net.backward_majority(loss_majority_grad(pred, ma, cfg.weights));
                net.backward_encoder(gz);
            } catch (const std::exception& e) {
                detail::rethrow_with_epoch("step-1", epoch, e);
            }
            opt.step();
            epoch_loss += loss;
            ++batches;
        }
        epoch_loss /= double(batches);
        report.epoch_loss.push_back(epoch_loss);
        report.epoch_loss_ma.push_back(epoch_loss);
        report.epoch_loss_mi.push_back(0.0);
        detail::log_epoch(cfg.metrics_log, epoch, opt.lr, epoch_loss, epoch_loss, 0.0);
        opt.lr *= cfg.lr_decay;
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// Step 2 (Eq. 3): fine-tune on the n pairs. F=1 freezes the majority path
// (its parameters stay bit-identical and receive no gradient); F=0 trains
// everything with l_mi = l_ma + minority terms.
inline TrainReport train_step2(TwoHeadNet& net, const std::vector<PairedSample>& pairs,
                               const TrainConfig& cfg) {
    cfg.validate();
    if (pairs.empty()) throw std::invalid_argument("train_step2: empty paired dataset");
    for (const auto& p : pairs)
        if (!p.mi)
            throw std::invalid_argument("train_step2: sample " + std::to_string(p.id) +
                                        " has no minority array");
    const int F = cfg.weights.F;
    const auto t_start = std::chrono::steady_clock::now();

    std::vector<nn::Param*> trainable = net.params_minority_path();
    if (F == 0)
        for (auto* p : net.params_majority_path()) trainable.push_back(p);
    nn::Adam opt(trainable, cfg.learning_rate);
    Rng rng(derive_seed("train_step2", cfg.seed));
    std::vector<int> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);

    TrainReport report;
    report.freeze = F;
    for (int epoch = 0; epoch < cfg.epochs_step2; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double el = 0.0, el_ma = 0.0, el_mi = 0.0;
        std::size_t batches = 0;
        for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
            const std::size_t end = std::min(off + cfg.batch_size, order.size());
            std::vector<const Tensor*> ma_items, mi_items;
            for (std::size_t i = off; i < end; ++i) {
                ma_items.push_back(&pairs[order[i]].ma);
                mi_items.push_back(&*pairs[order[i]].mi);
            }
            Tensor ma = detail::stack_batch(ma_items);
            Tensor mi = detail::stack_batch(mi_items);

            opt.zero_grad();
            double loss = 0.0;
            try {
                Tensor z = net.encode(ma);
                Tensor pred_mi = net.decode_minority(z);
                Tensor pred_ma;
                if (F == 0) pred_ma = net.decode_majority(z);
                loss = F == 1 ? loss_minority(pred_mi, pred_mi, pred_mi, mi, cfg.weights)
                              : loss_minority(pred_ma, ma, pred_mi, mi, cfg.weights);
                if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");

                Tensor gz_mi =
                    net.backward_minority(loss_minority_grad_mi(pred_mi, mi, cfg.weights));
                if (F == 1) {
                    // frozen majority path: the minority gradient stops at the
                    // encoder output, so frozen parameters see exactly zero grad
                } else {
                    Tensor gz_ma =
                        net.backward_majority(loss_minority_grad_ma(pred_ma, ma, cfg.weights));
                    for (std::size_t i = 0; i < gz_mi.size(); ++i) gz_mi[i] += gz_ma[i];
                    net.backward_encoder(gz_mi);
                }
            } catch (const std::exception& e) {
                detail::rethrow_with_epoch("step-2", epoch, e);
            }
            opt.step();
            el += loss;
            el_mi += loss;
            ++batches;
        }
        el /= double(batches);
        el_mi /= double(batches);
        report.epoch_loss.push_back(el);
        report.epoch_loss_ma.push_back(0.0);
        report.epoch_loss_mi.push_back(el_mi);
        detail::log_epoch(cfg.metrics_log, epoch, opt.lr, el, 0.0, el_mi);
        opt.lr *= cfg.lr_decay;
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// "UB-Diff w/o opt" ablation: joint training on the n pairs only, with the
// combined step1+step2 epoch budget for fairness.
inline TrainReport train_onestep_ablation(TwoHeadNet& net, const std::vector<PairedSample>& pairs,
                                          const TrainConfig& cfg) {
    cfg.validate();
    if (pairs.empty()) throw std::invalid_argument("ablation: empty paired dataset");
    for (const auto& p : pairs)
        if (!p.mi)
            throw std::invalid_argument("ablation: sample " + std::to_string(p.id) +
                                        " has no minority array");
    const auto t_start = std::chrono::steady_clock::now();
    const int epochs = cfg.epochs_step1 + cfg.epochs_step2;

    LossWeights w = cfg.weights;
    w.F = 0;  // joint objective uses both reconstruction terms
    nn::Adam opt(net.params_all(), cfg.learning_rate);
    Rng rng(derive_seed("train_ablation", cfg.seed));
    std::vector<int> order(pairs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);

    TrainReport report;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order.begin(), order.end());
        double el = 0.0;
        std::size_t batches = 0;
        for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
            const std::size_t end = std::min(off + cfg.batch_size, order.size());
            std::vector<const Tensor*> ma_items, mi_items;
            for (std::size_t i = off; i < end; ++i) {
                ma_items.push_back(&pairs[order[i]].ma);
                mi_items.push_back(&*pairs[order[i]].mi);
            }
            Tensor ma = detail::stack_batch(ma_items);
            Tensor mi = detail::stack_batch(mi_items);

            opt.zero_grad();
            double loss = 0.0;
            try {
                Tensor z = net.encode(ma);
                Tensor pred_ma = net.decode_majority(z);
                Tensor pred_mi = net.decode_minority(z);
                loss = loss_minority(pred_ma, ma, pred_mi, mi, w);
                if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");
                Tensor gz = net.backward_minority(loss_minority_grad_mi(pred_mi, mi, w));
                Tensor gz_ma = net.backward_majority(loss_minority_grad_ma(pred_ma, ma, w));
                for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += gz_ma[i];
                net.backward_encoder(gz);
            } catch (const std::exception& e) {
                detail::rethrow_with_epoch("ablation", epoch, e);
            }
            opt.step();
            el += loss;
            ++batches;
        }
        el /= double(batches);
        report.epoch_loss.push_back(el);
        report.epoch_loss_ma.push_back(el);
        report.epoch_loss_mi.push_back(el);
        detail::log_epoch(cfg.metrics_log, epoch, opt.lr, el, el, el);
        opt.lr *= cfg.lr_decay;
    }
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

// Minority-reconstruction MAE on a held-out paired set.
inline double validate_minority_mae(TwoHeadNet& net, const std::vector<PairedSample>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("validation set is empty");
    double total = 0.0;
    for (const auto& p : pairs) {
        if (!p.mi) throw std::invalid_argument("validation sample lacks minority array");
        std::vector<const Tensor*> one{&p.ma};
        Tensor z = net.encode(detail::stack_batch(one));
        Tensor pred = net.decode_minority(z);
        Tensor target = *p.mi;
        std::vector<int> bshape{1};
        bshape.insert(bshape.end(), target.shape.begin(), target.shape.end());
        target.shape = bshape;
        total += mean_abs_diff(pred, target);
    }
    return total / double(pairs.size());
}

// Freeze selection: lower validation MAE wins; ties go to F=1.
inline int select_freeze(const TrainReport& report_f0, const TrainReport& report_f1) {
    if (report_f0.val_mae < 0 || report_f1.val_mae < 0)
        throw std::invalid_argument("select_freeze: missing validation metrics");
    return report_f0.val_mae < report_f1.val_mae ? 0 : 1;
}

}  // namespace ubdiff
