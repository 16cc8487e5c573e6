#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "innpar/checkpoint.hpp"
#include "innpar/layers.hpp"
#include "innpar/signal.hpp"

namespace innpar {

struct TrainConfig {
    std::size_t epochs = 500;
    std::size_t batch_size = 128;
    double lr = 1e-4;
    double alpha = 1.0;
    std::uint64_t seed = 0;
    // ablation switches
    bool ae1_duplicate_signal = false;
    bool ae2_single_scale = false; // applied to ModelConfig via apply_ae2
    bool ae3_alpha_zero = false;
    std::size_t checkpoint_every = 0; // 0 disables cadence checkpoints
    // supervise forward-difference of output channel 1 instead of channel 2
    bool supervise_recomputed_gradient = false;

    void validate() const {
        if (epochs == 0) throw ConfigError("train config: epochs must be >= 1");
        if (batch_size == 0) throw ConfigError("train config: batch_size must be >= 1");
        if (alpha < 0.0) throw ConfigError("train config: alpha must be >= 0");
        if (lr < 0.0) throw ConfigError("train config: lr must be >= 0");
    }

    double effective_alpha() const { return ae3_alpha_zero ? 0.0 : alpha; }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"epochs", c.epochs},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"alpha", c.alpha},
                       {"seed", c.seed},
                       {"ae1_duplicate_signal", c.ae1_duplicate_signal},
                       {"ae2_single_scale", c.ae2_single_scale},
                       {"ae3_alpha_zero", c.ae3_alpha_zero},
                       {"checkpoint_every", c.checkpoint_every},
                       {"supervise_recomputed_gradient", c.supervise_recomputed_gradient}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.alpha = j.value("alpha", d.alpha);
    c.seed = j.value("seed", d.seed);
    c.ae1_duplicate_signal = j.value("ae1_duplicate_signal", d.ae1_duplicate_signal);
    c.ae2_single_scale = j.value("ae2_single_scale", d.ae2_single_scale);
    c.ae3_alpha_zero = j.value("ae3_alpha_zero", d.ae3_alpha_zero);
    c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
    c.supervise_recomputed_gradient =
        j.value("supervise_recomputed_gradient", d.supervise_recomputed_gradient);
}

/// Single-scale ablation: 16-filter convolutions only, no squeeze/unsqueeze.
inline ModelConfig apply_ae2(ModelConfig cfg) {
    cfg.scales = 1;
    cfg.mscm_filters = {cfg.mscm_filters.empty() ? 16 : cfg.mscm_filters[0]};
    return cfg;
}

struct RunLog {
    struct Entry {
        std::size_t epoch;
        double train_loss;
        double val_loss;
        double seconds;
    };
    std::vector<Entry> entries;

    bool same_losses(const RunLog& o, double tol = 0.0) const {
        if (entries.size() != o.entries.size()) return false;
        for (std::size_t i = 0; i < entries.size(); ++i)
            if (std::abs(entries[i].train_loss - o.entries[i].train_loss) > tol ||
                std::abs(entries[i].val_loss - o.entries[i].val_loss) > tol)
                return false;
        return true;
    }
};

/// Line-delimited JSON, one record per epoch.
inline void write_runlog(const std::string& path, const RunLog& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("write_runlog: cannot open " + path);
    for (const auto& e : log.entries) {
        nlohmann::json j = {{"epoch", e.epoch},
                            {"train_loss", e.train_loss},
                            {"val_loss", e.val_loss},
                            {"seconds", e.seconds}};
        out << j.dump() << "\n";
    }
}

inline RunLog read_runlog(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_runlog: cannot open " + path);
    RunLog log;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        log.entries.push_back({j.at("epoch").get<std::size_t>(),
                               j.at("train_loss").get<double>(),
                               j.at("val_loss").get<double>(),
                               j.at("seconds").get<double>()});
    }
    return log;
}

/// Builds the 2-channel model input from a PPG segment: channel 1 the signal,
/// channel 2 its forward-difference gradient (or the signal again under AE1).
template <class T>
Tensor3<T> make_model_input(const std::vector<std::vector<float>>& ppg_rows,
                            bool ae1_duplicate = false) {
    if (ppg_rows.empty()) throw UsageError("make_model_input: empty batch");
    const std::size_t B = ppg_rows.size(), L = ppg_rows[0].size();
    Tensor3<T> x(B, 2, L);
    for (std::size_t b = 0; b < B; ++b) {
        if (ppg_rows[b].size() != L)
            throw DimensionError("make_model_input: row " + std::to_string(b) +
                                 " length " + std::to_string(ppg_rows[b].size()) +
                                 " != " + std::to_string(L));
        std::vector<T> sig(ppg_rows[b].begin(), ppg_rows[b].end());
        const std::vector<T> g = ae1_duplicate ? sig : grad_channel(sig);
        for (std::size_t i = 0; i < L; ++i) {
            x.at(b, 0, i) = sig[i];
            x.at(b, 1, i) = g[i];
        }
    }
    return x;
}

template <class T>
Tensor3<T> make_model_input(const std::vector<float>& ppg, bool ae1_duplicate = false) {
    return make_model_input<T>(std::vector<std::vector<float>>{ppg}, ae1_duplicate);
}

/// Ground-truth tensor: channel 1 the normalized ABP, channel 2 its gradient.
template <class T>
Tensor3<T> make_target(const std::vector<std::vector<float>>& abp_rows) {
    return make_model_input<T>(abp_rows, false);
}

/// L1 on channel 1 plus alpha times L1 on channel 2, each mean-reduced over
/// batch x length. With supervise_recomputed_gradient the second term compares
/// the forward difference of output channel 1 instead of output channel 2.
template <class T>
Var<T> compute_loss(Tape<T>& tape, const Var<T>& pred, const Var<T>& gt, T alpha,
                    bool recomputed_gradient = false) {
    if (pred->value.channels() != 2 || gt->value.channels() != 2)
        throw DimensionError("compute_loss: expected 2 channels, got " +
                             std::to_string(pred->value.channels()) + " / " +
                             std::to_string(gt->value.channels()));
    if (!recomputed_gradient)
        return tape.weighted_l1(pred, gt, {T(1), alpha});
    Var<T> y = tape.slice_channels(pred, 0, 1);
    Var<T> rebuilt = tape.concat_channels(y, tape.forward_diff(y));
    return tape.weighted_l1(rebuilt, gt, {T(1), alpha});
}

template <class T>
T compute_loss_value(InnParModel<T>& model, const Tensor3<T>& x, const Tensor3<T>& gt,
                     const TrainConfig& tc) {
    Tape<T> tape;
    Var<T> pred = model.forward(tape, tape.input(x), false);
    Var<T> loss = compute_loss(tape, pred, tape.input(gt),
                               static_cast<T>(tc.effective_alpha()),
                               tc.supervise_recomputed_gradient);
    return loss->value.at(0, 0, 0);
}

namespace detail {
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t epoch) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (epoch + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

template <class T>
double param_l2_norm(std::vector<Param<T>*>& params) {
    double s = 0.0;
    for (Param<T>* p : params)
        for (T v : p->value.flat()) s += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(s);
}
} // namespace detail

/// Seeded mini-batch training: shuffle, forward, L1 loss, backward, Adam.
/// Deterministic for a fixed seed (single-threaded). Fixed epoch count, no
/// schedule, no early stopping.
template <class T>
RunLog fit(InnParModel<T>& model, const SegmentSet& train_set, const SegmentSet& val_set,
           const TrainConfig& tc, const std::string& checkpoint_dir = "") {
    tc.validate();
    if (train_set.segments.empty() || val_set.segments.empty())
        throw UsageError("fit: train and validation sets must be non-empty");
    if (train_set.length != model.config().signal_length)
        throw DimensionError("fit: segment length " + std::to_string(train_set.length) +
                             " != model signal_length " +
                             std::to_string(model.config().signal_length));

    auto params = model.params();
    Adam<T> opt(static_cast<T>(tc.lr));
    const T alpha = static_cast<T>(tc.effective_alpha());
    RunLog log;

    auto batch_rows = [&](const SegmentSet& set, const std::vector<std::size_t>& idx,
                          std::size_t from, std::size_t to) {
        std::vector<std::vector<float>> ppg, abp;
        for (std::size_t i = from; i < to; ++i) {
            ppg.push_back(set.segments[idx[i]].ppg);
            abp.push_back(set.segments[idx[i]].abp_norm);
        }
        return std::pair{make_model_input<T>(ppg, tc.ae1_duplicate_signal),
                         make_target<T>(abp)};
    };

    std::vector<std::size_t> val_idx(val_set.segments.size());
    std::iota(val_idx.begin(), val_idx.end(), 0);

    for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<std::size_t> idx(train_set.segments.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::mt19937_64 rng(detail::mix_seed(tc.seed, epoch));
        std::shuffle(idx.begin(), idx.end(), rng);

        double train_loss = 0.0;
        std::size_t seen = 0, batch_no = 0;
        for (std::size_t from = 0; from < idx.size(); from += tc.batch_size, ++batch_no) {
            const std::size_t to = std::min(from + tc.batch_size, idx.size());
            auto [x, gt] = batch_rows(train_set, idx, from, to);
            Tape<T> tape;
            Var<T> pred = model.forward(tape, tape.input(x), true);
            Var<T> loss = compute_loss(tape, pred, tape.input(gt), alpha,
                                       tc.supervise_recomputed_gradient);
            const double lv = static_cast<double>(loss->value.at(0, 0, 0));
            if (!std::isfinite(lv))
                throw NumericError("fit: non-finite loss at epoch " + std::to_string(epoch) +
                                   " batch " + std::to_string(batch_no) +
                                   ", parameter L2 norm " +
                                   std::to_string(detail::param_l2_norm(params)));
            tape.backward(loss);
            opt.step(std::span<Param<T>* const>(params.data(), params.size()));
            train_loss += lv * static_cast<double>(to - from);
            seen += to - from;
        }
        train_loss /= static_cast<double>(seen);

        double val_loss = 0.0;
        for (std::size_t from = 0; from < val_idx.size(); from += tc.batch_size) {
            const std::size_t to = std::min(from + tc.batch_size, val_idx.size());
            auto [x, gt] = batch_rows(val_set, val_idx, from, to);
            val_loss += static_cast<double>(compute_loss_value(model, x, gt, tc)) *
                        static_cast<double>(to - from);
        }
        val_loss /= static_cast<double>(val_idx.size());

        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log.entries.push_back({epoch, train_loss, val_loss, secs});

        if (!checkpoint_dir.empty() && tc.checkpoint_every > 0 &&
            epoch % tc.checkpoint_every == 0) {
            CheckpointMeta meta{epoch, "train_loss=" + std::to_string(train_loss)};
            save_checkpoint(model, checkpoint_dir + "/epoch_" + std::to_string(epoch) +
                                        ".ckpt", meta);
        }
    }
    if (!checkpoint_dir.empty()) {
        CheckpointMeta meta{tc.epochs,
                            log.entries.empty()
                                ? std::string{}
                                : "train_loss=" + std::to_string(log.entries.back().train_loss)};
        save_checkpoint(model, checkpoint_dir + "/final.ckpt", meta);
    }
    return log;
}

/// Waveform and BP metrics over a test set. Output channel 1 is the
/// reconstructed ABP; channel 2 is supervised during training but unused here.
template <class T>
MetricsReport evaluate(InnParModel<T>& model, const SegmentSet& test_set,
                       bool ae1_duplicate = false) {
    if (test_set.segments.empty()) throw UsageError("evaluate: empty test set");
    MetricsReport r;
    for (const Segment& seg : test_set.segments) {
        Tensor3<T> x = make_model_input<T>(seg.ppg, ae1_duplicate);
        Tensor3<T> y = model.forward(x);
        std::vector<float> pred_norm(test_set.length);
        for (std::size_t i = 0; i < test_set.length; ++i)
            pred_norm[i] = static_cast<float>(y.at(0, 0, i));

        const double seg_mae = mae(pred_norm, seg.abp_norm);
        const double seg_nrmse = nrmse(pred_norm, seg.abp_norm);
        const std::vector<float> pred_mmhg = denormalize_abp(pred_norm, test_set.norm);
        const std::vector<float> gt_mmhg = denormalize_abp(seg.abp_norm, test_set.norm);
        const auto [psbp, pdbp] = extract_sbp_dbp(pred_mmhg, test_set.sample_rate_hz);
        const auto [gsbp, gdbp] = extract_sbp_dbp(gt_mmhg, test_set.sample_rate_hz);

        const double sbp_err = std::abs(psbp - gsbp);
        const double dbp_err = std::abs(pdbp - gdbp);
        r.waveform_mae += seg_mae;
        r.waveform_nrmse += seg_nrmse;
        r.waveform_mae_mmhg += mae(pred_mmhg, gt_mmhg);
        r.waveform_nrmse_mmhg += nrmse(pred_mmhg, gt_mmhg);
        r.sbp_mae_mmhg += sbp_err;
        r.dbp_mae_mmhg += dbp_err;
        r.per_segment.push_back({seg_mae, seg_nrmse, sbp_err, dbp_err});
    }
    const double n = static_cast<double>(test_set.segments.size());
    r.waveform_mae /= n;
    r.waveform_nrmse /= n;
    r.waveform_mae_mmhg /= n;
    r.waveform_nrmse_mmhg /= n;
    r.sbp_mae_mmhg /= n;
    r.dbp_mae_mmhg /= n;
    r.n_segments = test_set.segments.size();
    return r;
}

inline nlohmann::json metrics_to_json(const MetricsReport& r) {
    return {{"waveform", {{"mae", r.waveform_mae},
                          {"nrmse", r.waveform_nrmse},
                          {"mae_mmhg", r.waveform_mae_mmhg},
                          {"nrmse_mmhg", r.waveform_nrmse_mmhg}}},
            {"sbp_mae", r.sbp_mae_mmhg},
            {"dbp_mae", r.dbp_mae_mmhg},
            {"n_segments", r.n_segments}};
}

} // namespace innpar
