#pragma once

#include <random>

#include "innpar/layers.hpp"
#include "innpar/train.hpp"

namespace innpar {

/// Worst max|x - inverse(forward(x))| over `trials` freshly initialized
/// models (seeds seed, seed+1, ...) with seeded Gaussian inputs.
template <class T>
double roundtrip_audit(const ModelConfig& cfg, std::uint64_t seed, int trials) {
    if (trials <= 0) throw UsageError("roundtrip_audit: trials must be >= 1");
    std::mt19937_64 rng(seed ^ 0xA5A5A5A5ull);
    std::normal_distribution<double> g(0.0, 1.0);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        InnParModel<T> model(cfg);
        model.init(seed + static_cast<std::uint64_t>(t));
        Tensor3<T> x(1, cfg.channels, cfg.signal_length);
        for (T& v : x.flat()) v = static_cast<T>(g(rng));
        Tensor3<T> back = model.inverse(model.forward(x));
        for (std::size_t i = 0; i < x.size(); ++i)
            worst = std::max(worst, std::abs(static_cast<double>(back.flat()[i]) -
                                             static_cast<double>(x.flat()[i])));
    }
    return worst;
}

/// 64-bit central-difference audit of every model parameter against the
/// analytic gradients of the training loss. Couplings are randomized with a
/// small seeded Gaussian so all gradient paths are live.
///
/// Central differences of this loss are only trustworthy away from its
/// non-smooth points and above the floating-point noise floor, so the probe
/// input is selected for two properties:
///  - every relu preactivation clears the kink by more than any single +-h
///    parameter perturbation can move it (the target is likewise offset from
///    the prediction so no L1 term sits on its kink);
///  - the smallest nonzero analytic gradient is as large as possible, since
///    the FD noise floor (~1e-11 here) is absolute while the pass criterion
///    is relative. Exactly-zero gradients are fine: a relu-dead path yields
///    an exactly-zero difference quotient too.
inline FdReport gradient_audit(const ModelConfig& cfg, std::uint64_t seed,
                               double h = 1e-5) {
    InnParModel<double> model(cfg);
    model.init(seed);
    {
        std::mt19937_64 rng(seed ^ 0x5EED5EEDull);
        std::normal_distribution<double> g(0.0, 0.15);
        for (auto& acl : model.couplings()) {
            std::vector<Param<double>*> ps;
            acl.collect(ps);
            for (auto* p : ps)
                for (double& v : p->value.flat()) v = g(rng);
        }
    }

    std::mt19937_64 rng(seed + 1);
    std::normal_distribution<double> g(0.0, 1.0);
    const double kink_band = 10.0 * h;
    auto params = model.params();
    Tensor3<double> x(2, cfg.channels, cfg.signal_length);
    Tensor3<double> best_x = x;
    bool have_clear = false;
    double best_min_grad = -1.0, fallback_clearance = -1.0;
    for (int attempt = 0; attempt < 100; ++attempt) {
        for (double& v : x.flat()) v = g(rng);
        Tape<double> probe;
        model.forward(probe, probe.input(x), false);
        const double clearance = probe.relu_clearance();
        if (clearance < kink_band) {
            if (!have_clear && clearance > fallback_clearance) {
                fallback_clearance = clearance;
                best_x = x;
            }
            continue;
        }

        Tensor3<double> probe_gt = model.forward(x);
        for (double& v : probe_gt.flat()) v += 0.02;
        for (auto* p : params) p->zero_grad();
        Tape<double> tape;
        Var<double> pred = model.forward(tape, tape.input(x), true);
        tape.backward(compute_loss(tape, pred, tape.input(probe_gt), 1.0));
        double min_grad = std::numeric_limits<double>::infinity();
        for (auto* p : params)
            for (double v : p->grad.flat())
                if (v != 0.0) min_grad = std::min(min_grad, std::abs(v));

        if (!have_clear || min_grad > best_min_grad) {
            have_clear = true;
            best_min_grad = min_grad;
            best_x = x;
        }
        if (min_grad >= 5e-7) break;
    }
    x = best_x;

    Tensor3<double> gt = model.forward(x);
    for (double& v : gt.flat()) v += 0.02 + 0.01 * std::abs(g(rng));

    for (auto* p : params) p->zero_grad();
    {
        Tape<double> tape;
        Var<double> pred = model.forward(tape, tape.input(x), true);
        Var<double> loss = compute_loss(tape, pred, tape.input(gt), 1.0);
        tape.backward(loss);
    }
    auto loss_value = [&]() {
        Tape<double> tape;
        Var<double> pred = model.forward(tape, tape.input(x), false);
        Var<double> loss = compute_loss(tape, pred, tape.input(gt), 1.0);
        return loss->value.at(0, 0, 0);
    };
    return finite_diff_check<double>(loss_value, params, h);
}

} // namespace innpar
