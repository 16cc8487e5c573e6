#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "innpar/autodiff.hpp"
#include "innpar/tensor.hpp"

namespace innpar {

/// Architecture hyperparameters. Defaults follow the reference setup:
/// 4 invertible blocks on a 2-channel (signal + gradient) input, 3-scale
/// convolution modules with 16/32/64 filters, kernel 5, segments of 625.
struct ModelConfig {
    std::size_t num_blocks = 4;
    std::size_t channels = 2;
    std::size_t split_c1 = 1;
    std::size_t split_c2 = 1;
    std::vector<std::size_t> mscm_filters = {16, 32, 64};
    std::size_t kernel = 5;
    std::size_t squeeze_factor = 2;
    std::size_t scales = 3;
    double clamp_c = 2.0;
    bool clamp_enabled = true;
    std::size_t signal_length = 625;

    void validate() const {
        if (num_blocks == 0) throw ConfigError("config: num_blocks must be >= 1");
        if (channels == 0) throw ConfigError("config: channels must be >= 1");
        if (split_c1 == 0 || split_c2 == 0 || split_c1 + split_c2 != channels)
            throw ConfigError("config: split (" + std::to_string(split_c1) + ", " +
                              std::to_string(split_c2) + ") must sum to channels " +
                              std::to_string(channels));
        if (kernel % 2 == 0) throw ConfigError("config: kernel must be odd");
        if (scales == 0) throw ConfigError("config: scales must be >= 1");
        if (mscm_filters.size() != scales)
            throw ConfigError("config: mscm_filters size " +
                              std::to_string(mscm_filters.size()) + " != scales " +
                              std::to_string(scales));
        if (squeeze_factor < 2 && scales > 1)
            throw ConfigError("config: squeeze_factor must be >= 2 for multi-scale");
        for (std::size_t s = 1; s < scales; ++s)
            if (mscm_filters[s] != mscm_filters[s - 1] * squeeze_factor)
                throw ConfigError("config: mscm_filters[" + std::to_string(s) +
                                  "] must equal mscm_filters[" + std::to_string(s - 1) +
                                  "] * squeeze_factor");
        if (clamp_c <= 0.0) throw ConfigError("config: clamp_c must be positive");
        if (signal_length == 0) throw ConfigError("config: signal_length must be >= 1");
    }

    std::size_t pad_multiple() const {
        std::size_t m = 1;
        for (std::size_t s = 1; s < scales; ++s) m *= squeeze_factor;
        return m;
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"num_blocks", c.num_blocks},
                       {"channels", c.channels},
                       {"split", {c.split_c1, c.split_c2}},
                       {"mscm_filters", c.mscm_filters},
                       {"kernel", c.kernel},
                       {"squeeze_factor", c.squeeze_factor},
                       {"scales", c.scales},
                       {"clamp_c", c.clamp_c},
                       {"clamp_enabled", c.clamp_enabled},
                       {"signal_length", c.signal_length}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.num_blocks = j.value("num_blocks", d.num_blocks);
    c.channels = j.value("channels", d.channels);
    if (j.contains("split")) {
        auto s = j.at("split");
        c.split_c1 = s.at(0).get<std::size_t>();
        c.split_c2 = s.at(1).get<std::size_t>();
    }
    c.mscm_filters = j.value("mscm_filters", d.mscm_filters);
    c.kernel = j.value("kernel", d.kernel);
    c.squeeze_factor = j.value("squeeze_factor", d.squeeze_factor);
    c.scales = j.value("scales", d.scales);
    c.clamp_c = j.value("clamp_c", d.clamp_c);
    c.clamp_enabled = j.value("clamp_enabled", d.clamp_enabled);
    c.signal_length = j.value("signal_length", d.signal_length);
}

/// Binds model parameters onto a tape: trainable leaves during fit,
/// plain value inputs during inference.
template <class T>
struct ParamBinder {
    Tape<T>& tape;
    bool train;
    Var<T> operator()(Param<T>& p) const {
        return train ? tape.param(p) : tape.input(p.value);
    }
};

template <class T>
struct ConvLayer {
    Param<T> w; // (out, in, k)
    Param<T> b; // (1, out, 1)
    std::size_t in_ch, out_ch, kernel;

    ConvLayer(const std::string& name, std::size_t in, std::size_t out, std::size_t k)
        : w(name + ".weight", Tensor3<T>(out, in, k)),
          b(name + ".bias", Tensor3<T>(1, out, 1)), in_ch(in), out_ch(out), kernel(k) {}

    Var<T> apply(Tape<T>& tape, const ParamBinder<T>& bind, const Var<T>& x) {
        return tape.conv1d(x, bind(w), bind(b));
    }

    void collect(std::vector<Param<T>*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }

    std::size_t param_count() const { return w.value.size() + b.value.channels(); }
};

/// Multi-scale convolution module: a U-shaped stack that trades length for
/// channels through lossless squeeze/unsqueeze, with additive skips between
/// matching scales. ReLU after every convolution except the last.
/// Not invertible, and does not need to be.
template <class T>
class Mscm {
public:
    Mscm(const std::string& name, std::size_t in_ch, std::size_t out_ch,
         const ModelConfig& cfg)
        : in_ch_(in_ch), out_ch_(out_ch), scales_(cfg.scales), factor_(cfg.squeeze_factor),
          pad_multiple_(cfg.pad_multiple()),
          in_conv_(name + ".in", in_ch, cfg.mscm_filters[0], cfg.kernel),
          out_conv_(name + ".out", cfg.mscm_filters[0], out_ch, cfg.kernel) {
        for (std::size_t s = 1; s < scales_; ++s)
            down_.emplace_back(name + ".down" + std::to_string(s), cfg.mscm_filters[s],
                               cfg.mscm_filters[s], cfg.kernel);
        for (std::size_t s = scales_ - 1; s >= 2; --s)
            up_.emplace_back(name + ".up" + std::to_string(s - 1), cfg.mscm_filters[s - 1],
                             cfg.mscm_filters[s - 1], cfg.kernel);
    }

    Var<T> forward(Tape<T>& tape, const ParamBinder<T>& bind, Var<T> x) {
        const std::size_t L = x->value.length();
        const std::size_t padded = ((L + pad_multiple_ - 1) / pad_multiple_) * pad_multiple_;
        const std::size_t padn = padded - L;
        if (padn) x = tape.pad_replicate_right(x, padn);

        Var<T> h = tape.relu(in_conv_.apply(tape, bind, x));
        std::vector<Var<T>> skips{h};
        for (std::size_t s = 1; s < scales_; ++s) {
            h = tape.squeeze(h, factor_);
            h = tape.relu(down_[s - 1].apply(tape, bind, h));
            if (s + 1 < scales_) skips.push_back(h);
        }
        for (std::size_t s = scales_ - 1; s >= 1; --s) {
            h = tape.unsqueeze(h, factor_);
            h = tape.add(h, skips[s - 1]);
            if (s >= 2)
                h = tape.relu(up_[scales_ - 1 - s].apply(tape, bind, h));
            else
                h = out_conv_.apply(tape, bind, h);
        }
        if (scales_ == 1) h = out_conv_.apply(tape, bind, h);
        if (padn) h = tape.crop_right(h, padn);
        return h;
    }

    void collect(std::vector<Param<T>*>& out) {
        in_conv_.collect(out);
        for (auto& c : down_) c.collect(out);
        for (auto& c : up_) c.collect(out);
        out_conv_.collect(out);
    }

    std::vector<ConvLayer<T>*> convs() {
        std::vector<ConvLayer<T>*> cs{&in_conv_};
        for (auto& c : down_) cs.push_back(&c);
        for (auto& c : up_) cs.push_back(&c);
        cs.push_back(&out_conv_);
        return cs;
    }

    ConvLayer<T>& out_conv() { return out_conv_; }

    unsigned long long mac_count(std::size_t L) const {
        const std::size_t padded = ((L + pad_multiple_ - 1) / pad_multiple_) * pad_multiple_;
        unsigned long long macs = 0, len = padded;
        auto conv_macs = [](const ConvLayer<T>& c, std::size_t l) {
            return static_cast<unsigned long long>(c.out_ch) * c.in_ch * c.kernel * l;
        };
        macs += conv_macs(in_conv_, len);
        for (std::size_t s = 1; s < scales_; ++s) {
            len /= factor_;
            macs += conv_macs(down_[s - 1], len);
        }
        for (std::size_t s = scales_ - 1; s >= 1; --s) {
            len *= factor_;
            if (s >= 2)
                macs += conv_macs(up_[scales_ - 1 - s], len);
            // skip additions count as one op per element
            macs += static_cast<unsigned long long>(
                        (s >= 2 ? up_[scales_ - 1 - s].in_ch : out_conv_.in_ch)) * len;
        }
        macs += conv_macs(out_conv_, padded);
        return macs;
    }

private:
    std::size_t in_ch_, out_ch_, scales_, factor_, pad_multiple_;
    ConvLayer<T> in_conv_;
    std::vector<ConvLayer<T>> down_;
    std::vector<ConvLayer<T>> up_;
    ConvLayer<T> out_conv_;
};

/// Per-position channel mix y[:, ., i] = W x[:, ., i] with an exactly invertible
/// square W. The inverse is recomputed from W on every call by Gaussian
/// elimination with partial pivoting.
template <class T>
class InvConv1x1 {
public:
    InvConv1x1(const std::string& name, std::size_t channels)
        : w(name + ".weight", Tensor3<T>(channels, channels, 1)), channels_(channels) {}

    Param<T> w;

    Var<T> forward(Tape<T>& tape, const ParamBinder<T>& bind, const Var<T>& x) {
        return tape.conv1d(x, bind(w), tape.input(Tensor3<T>(1, channels_, 1)));
    }

    Var<T> inverse(Tape<T>& tape, const Var<T>& y) const {
        Tensor3<T> winv(channels_, channels_, 1, invert());
        return tape.conv1d(y, tape.input(std::move(winv)),
                           tape.input(Tensor3<T>(1, channels_, 1)));
    }

    double determinant() const {
        std::vector<T> a(w.value.flat().begin(), w.value.flat().end());
        return eliminate(a, nullptr);
    }

    std::size_t channels() const { return channels_; }

private:
    std::size_t channels_;

    std::vector<T> invert() const {
        const std::size_t n = channels_;
        std::vector<T> a(w.value.flat().begin(), w.value.flat().end());
        std::vector<T> inv(n * n, T(0));
        for (std::size_t i = 0; i < n; ++i) inv[i * n + i] = T(1);
        const double det = eliminate(a, &inv);
        if (std::abs(det) <= 1e-12)
            throw NumericError("invconv inverse: near-singular weight, |det| = " +
                               std::to_string(std::abs(det)));
        return inv;
    }

    // Gauss-Jordan with partial pivoting; returns the determinant. When aug is
    // non-null it is reduced alongside a and ends up holding a^-1.
    double eliminate(std::vector<T>& a, std::vector<T>* aug) const {
        const std::size_t n = channels_;
        double det = 1.0;
        for (std::size_t col = 0; col < n; ++col) {
            std::size_t pivot = col;
            for (std::size_t r = col + 1; r < n; ++r)
                if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
            if (pivot != col) {
                for (std::size_t c = 0; c < n; ++c) {
                    std::swap(a[pivot * n + c], a[col * n + c]);
                    if (aug) std::swap((*aug)[pivot * n + c], (*aug)[col * n + c]);
                }
                det = -det;
            }
            const T p = a[col * n + col];
            det *= static_cast<double>(p);
            if (p == T(0)) return 0.0;
            for (std::size_t r = 0; r < n; ++r) {
                if (r == col) continue;
                const T factor = a[r * n + col] / p;
                for (std::size_t c = 0; c < n; ++c) {
                    a[r * n + c] -= factor * a[col * n + c];
                    if (aug) (*aug)[r * n + c] -= factor * (*aug)[col * n + c];
                }
            }
        }
        if (aug)
            for (std::size_t r = 0; r < n; ++r) {
                const T p = a[r * n + r];
                for (std::size_t c = 0; c < n; ++c) (*aug)[r * n + c] /= p;
            }
        return det;
    }
};

/// Affine coupling layer. Forward:
///   Y1 = X1 + H1(X2)
///   Y2 = X2 * exp(s) + H3(Y1),  s = clamp_c * tanh(H2(Y1) / clamp_c)
/// The soft clamp keeps exp bounded; it is recomputed identically from Y1 on
/// the reverse path, so invertibility is exact. Disable via config to get the
/// raw exponent.
template <class T>
class AffineCoupling {
public:
    AffineCoupling(const std::string& name, const ModelConfig& cfg)
        : h1_(name + ".h1", cfg.split_c2, cfg.split_c1, cfg),
          h2_(name + ".h2", cfg.split_c1, cfg.split_c2, cfg),
          h3_(name + ".h3", cfg.split_c1, cfg.split_c2, cfg),
          clamp_c_(static_cast<T>(cfg.clamp_c)), clamp_enabled_(cfg.clamp_enabled) {}

    std::pair<Var<T>, Var<T>> forward(Tape<T>& tape, const ParamBinder<T>& bind,
                                      const Var<T>& x1, const Var<T>& x2) {
        Var<T> y1 = tape.add(x1, h1_.forward(tape, bind, x2));
        Var<T> s = log_scale(tape, bind, y1);
        Var<T> y2 = tape.add(tape.mul(x2, tape.exp(s)), h3_.forward(tape, bind, y1));
        return {y1, y2};
    }

    std::pair<Var<T>, Var<T>> inverse(Tape<T>& tape, const ParamBinder<T>& bind,
                                      const Var<T>& y1, const Var<T>& y2) {
        Var<T> s = log_scale(tape, bind, y1);
        Var<T> x2 = tape.div(tape.sub(y2, h3_.forward(tape, bind, y1)), tape.exp(s));
        Var<T> x1 = tape.sub(y1, h1_.forward(tape, bind, x2));
        return {x1, x2};
    }

    void collect(std::vector<Param<T>*>& out) {
        h1_.collect(out);
        h2_.collect(out);
        h3_.collect(out);
    }

    Mscm<T>& h1() { return h1_; }
    Mscm<T>& h2() { return h2_; }
    Mscm<T>& h3() { return h3_; }

    unsigned long long mac_count(std::size_t L, std::size_t c1, std::size_t c2) const {
        unsigned long long macs = h1_.mac_count(L) + h2_.mac_count(L) + h3_.mac_count(L);
        // elementwise: y1 add; tanh+2 scales on s; exp, mul, add on y2
        macs += static_cast<unsigned long long>(c1) * L;
        macs += static_cast<unsigned long long>(c2) * L * 6;
        return macs;
    }

private:
    Mscm<T> h1_, h2_, h3_;
    T clamp_c_;
    bool clamp_enabled_;

    Var<T> log_scale(Tape<T>& tape, const ParamBinder<T>& bind, const Var<T>& y1) {
        Var<T> raw = h2_.forward(tape, bind, y1);
        if (!clamp_enabled_) return raw;
        return tape.scale(tape.tanh(tape.scale(raw, T(1) / clamp_c_)), clamp_c_);
    }
};

/// The full invertible stack: num_blocks x (1x1 convolution, coupling layer).
template <class T>
class InnParModel {
public:
    using value_type = T;

    explicit InnParModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        for (std::size_t i = 0; i < cfg_.num_blocks; ++i) {
            const std::string prefix = "block" + std::to_string(i);
            invconvs_.emplace_back(prefix + ".invconv", cfg_.channels);
            couplings_.emplace_back(prefix + ".acl", cfg_);
        }
    }

    /// Deterministic init: 1x1 weights orthonormal (QR of a seeded Gaussian),
    /// conv kernels Gaussian with std sqrt(2 / (in_ch * k)), biases zero. The
    /// final convolution of each H module starts at zero, so every coupling
    /// begins as the identity and the freshly initialized stack is
    /// well-conditioned in both directions.
    void init(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> gauss(0.0, 1.0);
        for (std::size_t i = 0; i < invconvs_.size(); ++i) {
            orthonormal_init(invconvs_[i].w.value, rng);
            for (Mscm<T>* m : {&couplings_[i].h1(), &couplings_[i].h2(), &couplings_[i].h3()})
                for (ConvLayer<T>* c : m->convs()) {
                    const bool last = c == &m->out_conv();
                    const double std_dev =
                        last ? 0.0
                             : std::sqrt(2.0 / static_cast<double>(c->in_ch * c->kernel));
                    for (T& v : c->w.value.flat())
                        v = static_cast<T>(gauss(rng) * std_dev);
                    for (T& v : c->b.value.flat()) v = T(0);
                }
        }
    }

    /// Zero coupling weights + identity 1x1 convs: the model maps x -> x exactly.
    void init_identity() {
        for (auto& ic : invconvs_) {
            for (T& v : ic.w.value.flat()) v = T(0);
            for (std::size_t c = 0; c < cfg_.channels; ++c) ic.w.value.at(c, c, 0) = T(1);
        }
        for (auto& acl : couplings_) {
            std::vector<Param<T>*> ps;
            acl.collect(ps);
            for (Param<T>* p : ps)
                for (T& v : p->value.flat()) v = T(0);
        }
    }

    Var<T> forward(Tape<T>& tape, Var<T> x, bool train) {
        check_input(x->value);
        ParamBinder<T> bind{tape, train};
        for (std::size_t i = 0; i < invconvs_.size(); ++i) {
            x = invconvs_[i].forward(tape, bind, x);
            Var<T> x1 = tape.slice_channels(x, 0, cfg_.split_c1);
            Var<T> x2 = tape.slice_channels(x, cfg_.split_c1, cfg_.split_c2);
            auto [y1, y2] = couplings_[i].forward(tape, bind, x1, x2);
            x = tape.concat_channels(y1, y2);
        }
        return x;
    }

    Var<T> inverse(Tape<T>& tape, Var<T> y) {
        check_input(y->value);
        ParamBinder<T> bind{tape, false};
        for (std::size_t i = invconvs_.size(); i-- > 0;) {
            Var<T> y1 = tape.slice_channels(y, 0, cfg_.split_c1);
            Var<T> y2 = tape.slice_channels(y, cfg_.split_c1, cfg_.split_c2);
            auto [x1, x2] = couplings_[i].inverse(tape, bind, y1, y2);
            y = tape.concat_channels(x1, x2);
            y = invconvs_[i].inverse(tape, y);
        }
        return y;
    }

    Tensor3<T> forward(const Tensor3<T>& x) const {
        auto* self = const_cast<InnParModel*>(this);
        Tape<T> tape;
        return self->forward(tape, tape.input(x), false)->value;
    }

    Tensor3<T> inverse(const Tensor3<T>& y) const {
        auto* self = const_cast<InnParModel*>(this);
        Tape<T> tape;
        return self->inverse(tape, tape.input(y))->value;
    }

    std::vector<Param<T>*> params() {
        std::vector<Param<T>*> out;
        for (std::size_t i = 0; i < invconvs_.size(); ++i) {
            out.push_back(&invconvs_[i].w);
            couplings_[i].collect(out);
        }
        return out;
    }

    const ModelConfig& config() const { return cfg_; }

    std::size_t param_count() const {
        auto* self = const_cast<InnParModel*>(this);
        std::size_t n = 0;
        for (Param<T>* p : self->params()) n += p->value.size();
        return n;
    }

    /// Multiply-accumulates (plus elementwise ops) for one forward pass.
    unsigned long long mac_count(std::size_t length) const {
        unsigned long long macs = 0;
        for (std::size_t i = 0; i < cfg_.num_blocks; ++i) {
            macs += static_cast<unsigned long long>(cfg_.channels) * cfg_.channels * length;
            macs += couplings_[i].mac_count(length, cfg_.split_c1, cfg_.split_c2);
        }
        return macs;
    }

    std::vector<InvConv1x1<T>>& invconvs() { return invconvs_; }
    std::vector<AffineCoupling<T>>& couplings() { return couplings_; }

private:
    ModelConfig cfg_;
    std::vector<InvConv1x1<T>> invconvs_;
    mutable std::vector<AffineCoupling<T>> couplings_;

    void check_input(const Tensor3<T>& x) const {
        if (x.channels() != cfg_.channels)
            throw DimensionError("model: input has " + std::to_string(x.channels()) +
                                 " channels, config expects " +
                                 std::to_string(cfg_.channels));
        if (x.length() != cfg_.signal_length)
            throw DimensionError("model: input length " + std::to_string(x.length()) +
                                 " != config signal_length " +
                                 std::to_string(cfg_.signal_length));
    }

    static void orthonormal_init(Tensor3<T>& w, std::mt19937_64& rng) {
        const std::size_t n = w.batch();
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<double> q(n * n);
        // modified Gram-Schmidt on Gaussian columns, retrying degenerate draws
        for (std::size_t col = 0; col < n; ++col) {
            for (;;) {
                for (std::size_t r = 0; r < n; ++r) q[r * n + col] = gauss(rng);
                for (std::size_t prev = 0; prev < col; ++prev) {
                    double dot = 0.0;
                    for (std::size_t r = 0; r < n; ++r)
                        dot += q[r * n + prev] * q[r * n + col];
                    for (std::size_t r = 0; r < n; ++r)
                        q[r * n + col] -= dot * q[r * n + prev];
                }
                double norm = 0.0;
                for (std::size_t r = 0; r < n; ++r)
                    norm += q[r * n + col] * q[r * n + col];
                norm = std::sqrt(norm);
                if (norm > 1e-6) {
                    for (std::size_t r = 0; r < n; ++r) q[r * n + col] /= norm;
                    break;
                }
            }
        }
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c)
                w.at(r, c, 0) = static_cast<T>(q[r * n + c]);
    }
};

} // namespace innpar
