#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "innpar/tensor.hpp"

namespace innpar {

/// Named trainable tensor with a same-shape gradient accumulator.
template <class T>
struct Param {
    std::string name;
    Tensor3<T> value;
    Tensor3<T> grad;

    Param(std::string n, Tensor3<T> v)
        : name(std::move(n)), value(std::move(v)),
          grad(value.batch(), value.channels(), value.length()) {}

    void zero_grad() {
        for (T& g : grad.flat()) g = T(0);
    }
};

template <class T>
struct Node {
    Tensor3<T> value;
    Tensor3<T> grad;
    bool needs_grad = false;
    std::function<void()> backprop; // adds into parent grads

    explicit Node(Tensor3<T> v)
        : value(std::move(v)), grad(value.batch(), value.channels(), value.length()) {}
};

template <class T>
using Var = std::shared_ptr<Node<T>>;

/// Records primitive ops in execution order; backward() replays the adjoints
/// once each, in reverse. One tape per training step.
template <class T>
class Tape {
public:
    Var<T> input(Tensor3<T> v) { return make(std::move(v), false, nullptr); }

    /// Leaf backed by a Param; backward accumulates into p.grad (+=).
    Var<T> param(Param<T>& p) {
        auto node = make(p.value, true, nullptr);
        Node<T>* n = node.get();
        Param<T>* pp = &p;
        node->backprop = [n, pp]() {
            T* dst = pp->grad.data();
            const T* src = n->grad.data();
            for (std::size_t i = 0; i < pp->grad.size(); ++i) dst[i] += src[i];
        };
        return node;
    }

    Var<T> conv1d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
        const Tensor3<T>& wt = w->value;
        if (b->value.channels() != wt.batch() || b->value.batch() != 1 ||
            b->value.length() != 1)
            throw DimensionError("conv1d: bias shape " + b->value.shape_str() +
                                 " incompatible with out_ch " + std::to_string(wt.batch()));
        std::vector<T> bias(wt.batch());
        for (std::size_t o = 0; o < bias.size(); ++o) bias[o] = b->value.at(0, o, 0);
        auto node = make(innpar::conv1d(x->value, wt, bias),
                         x->needs_grad || w->needs_grad || b->needs_grad, nullptr);
        if (node->needs_grad) {
            Node<T>* n = node.get();
            node->backprop = [n, x, w, b]() {
                const Tensor3<T>& xv = x->value;
                const Tensor3<T>& wv = w->value;
                const std::size_t B = xv.batch(), C = xv.channels(), L = xv.length();
                const std::size_t O = wv.batch(), k = wv.length();
                std::vector<T> col(C * k * L);
                for (std::size_t bt = 0; bt < B; ++bt) {
                    const T* dy = &n->grad.at(bt, 0, 0);
                    if (x->needs_grad) {
                        // dcol = W^T * dY, then scatter back
                        detail::gemm(CblasTrans, CblasNoTrans, static_cast<int>(C * k),
                                     static_cast<int>(L), static_cast<int>(O), T(1),
                                     wv.data(), static_cast<int>(C * k), dy,
                                     static_cast<int>(L), T(0), col.data(),
                                     static_cast<int>(L));
                        detail::col2im_add(col.data(), bt, k, x->grad);
                    }
                    if (w->needs_grad) {
                        detail::im2col(xv, bt, k, col.data());
                        detail::gemm(CblasNoTrans, CblasTrans, static_cast<int>(O),
                                     static_cast<int>(C * k), static_cast<int>(L), T(1),
                                     dy, static_cast<int>(L), col.data(),
                                     static_cast<int>(L), T(1), w->grad.data(),
                                     static_cast<int>(C * k));
                    }
                    if (b->needs_grad)
                        for (std::size_t o = 0; o < O; ++o) {
                            T s = T(0);
                            for (std::size_t i = 0; i < L; ++i) s += dy[o * L + i];
                            b->grad.at(0, o, 0) += s;
                        }
                }
            };
        }
        return node;
    }

    Var<T> add(const Var<T>& a, const Var<T>& b) {
        return binary(a, b, innpar::add<T>, [](Node<T>* n, const Var<T>& pa, const Var<T>& pb) {
            if (pa->needs_grad) accumulate(pa->grad, n->grad, T(1));
            if (pb->needs_grad) accumulate(pb->grad, n->grad, T(1));
        });
    }

    Var<T> sub(const Var<T>& a, const Var<T>& b) {
        return binary(a, b, innpar::sub<T>, [](Node<T>* n, const Var<T>& pa, const Var<T>& pb) {
            if (pa->needs_grad) accumulate(pa->grad, n->grad, T(1));
            if (pb->needs_grad) accumulate(pb->grad, n->grad, T(-1));
        });
    }

    Var<T> mul(const Var<T>& a, const Var<T>& b) {
        return binary(a, b, innpar::mul<T>, [](Node<T>* n, const Var<T>& pa, const Var<T>& pb) {
            if (pa->needs_grad)
                for (std::size_t i = 0; i < n->grad.size(); ++i)
                    pa->grad.data()[i] += n->grad.data()[i] * pb->value.data()[i];
            if (pb->needs_grad)
                for (std::size_t i = 0; i < n->grad.size(); ++i)
                    pb->grad.data()[i] += n->grad.data()[i] * pa->value.data()[i];
        });
    }

    Var<T> div(const Var<T>& a, const Var<T>& b) {
        return binary(a, b, innpar::div<T>, [](Node<T>* n, const Var<T>& pa, const Var<T>& pb) {
            if (pa->needs_grad)
                for (std::size_t i = 0; i < n->grad.size(); ++i)
                    pa->grad.data()[i] += n->grad.data()[i] / pb->value.data()[i];
            if (pb->needs_grad)
                for (std::size_t i = 0; i < n->grad.size(); ++i)
                    pb->grad.data()[i] -= n->grad.data()[i] * n->value.data()[i] /
                                          pb->value.data()[i];
        });
    }

    Var<T> exp(const Var<T>& x) {
        return unary(x, innpar::exp<T>, [](Node<T>* n, const Var<T>& p) {
            for (std::size_t i = 0; i < n->grad.size(); ++i)
                p->grad.data()[i] += n->grad.data()[i] * n->value.data()[i];
        });
    }

    Var<T> tanh(const Var<T>& x) {
        return unary(x, innpar::tanh<T>, [](Node<T>* n, const Var<T>& p) {
            for (std::size_t i = 0; i < n->grad.size(); ++i) {
                const T t = n->value.data()[i];
                p->grad.data()[i] += n->grad.data()[i] * (T(1) - t * t);
            }
        });
    }

    // relu subgradient at 0 is defined as 0.
    Var<T> relu(const Var<T>& x) {
        for (std::size_t i = 0; i < x->value.size(); ++i)
            relu_clearance_ = std::min(relu_clearance_,
                                       std::abs(static_cast<double>(x->value.data()[i])));
        return unary(x, innpar::relu<T>, [](Node<T>* n, const Var<T>& p) {
            for (std::size_t i = 0; i < n->grad.size(); ++i)
                if (p->value.data()[i] > T(0))
                    p->grad.data()[i] += n->grad.data()[i];
        });
    }

    /// Smallest |x| seen at any relu input on this tape. Finite-difference
    /// audits use it to reject probes that sit on a kink.
    double relu_clearance() const { return relu_clearance_; }

    Var<T> scale(const Var<T>& x, T s) {
        return unary(
            x, [s](const Tensor3<T>& v) { return innpar::scale(v, s); },
            [s](Node<T>* n, const Var<T>& p) {
                for (std::size_t i = 0; i < n->grad.size(); ++i)
                    p->grad.data()[i] += n->grad.data()[i] * s;
            });
    }

    Var<T> squeeze(const Var<T>& x, std::size_t factor) {
        return unary(
            x, [factor](const Tensor3<T>& v) { return innpar::squeeze(v, factor); },
            [factor](Node<T>* n, const Var<T>& p) {
                Tensor3<T> g = innpar::unsqueeze(n->grad, factor);
                accumulate(p->grad, g, T(1));
            });
    }

    Var<T> unsqueeze(const Var<T>& x, std::size_t factor) {
        return unary(
            x, [factor](const Tensor3<T>& v) { return innpar::unsqueeze(v, factor); },
            [factor](Node<T>* n, const Var<T>& p) {
                Tensor3<T> g = innpar::squeeze(n->grad, factor);
                accumulate(p->grad, g, T(1));
            });
    }

    Var<T> pad_replicate_right(const Var<T>& x, std::size_t count) {
        return unary(
            x, [count](const Tensor3<T>& v) { return innpar::pad_replicate_right(v, count); },
            [count](Node<T>* n, const Var<T>& p) {
                const std::size_t L = p->value.length();
                for (std::size_t b = 0; b < p->value.batch(); ++b)
                    for (std::size_t c = 0; c < p->value.channels(); ++c) {
                        for (std::size_t i = 0; i < L; ++i)
                            p->grad.at(b, c, i) += n->grad.at(b, c, i);
                        for (std::size_t i = 0; i < count; ++i)
                            p->grad.at(b, c, L - 1) += n->grad.at(b, c, L + i);
                    }
            });
    }

    Var<T> crop_right(const Var<T>& x, std::size_t count) {
        return unary(
            x, [count](const Tensor3<T>& v) { return innpar::crop_right(v, count); },
            [](Node<T>* n, const Var<T>& p) {
                for (std::size_t b = 0; b < n->grad.batch(); ++b)
                    for (std::size_t c = 0; c < n->grad.channels(); ++c)
                        for (std::size_t i = 0; i < n->grad.length(); ++i)
                            p->grad.at(b, c, i) += n->grad.at(b, c, i);
            });
    }

    Var<T> slice_channels(const Var<T>& x, std::size_t from, std::size_t count) {
        return unary(
            x, [from, count](const Tensor3<T>& v) { return innpar::slice_channels(v, from, count); },
            [from](Node<T>* n, const Var<T>& p) {
                for (std::size_t b = 0; b < n->grad.batch(); ++b)
                    for (std::size_t c = 0; c < n->grad.channels(); ++c)
                        for (std::size_t i = 0; i < n->grad.length(); ++i)
                            p->grad.at(b, from + c, i) += n->grad.at(b, c, i);
            });
    }

    Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
        return binary(a, b, innpar::concat_channels<T>,
                      [](Node<T>* n, const Var<T>& pa, const Var<T>& pb) {
                          const std::size_t ca = pa->value.channels();
                          for (std::size_t bt = 0; bt < n->grad.batch(); ++bt) {
                              if (pa->needs_grad)
                                  for (std::size_t c = 0; c < ca; ++c)
                                      for (std::size_t i = 0; i < n->grad.length(); ++i)
                                          pa->grad.at(bt, c, i) += n->grad.at(bt, c, i);
                              if (pb->needs_grad)
                                  for (std::size_t c = 0; c < pb->value.channels(); ++c)
                                      for (std::size_t i = 0; i < n->grad.length(); ++i)
                                          pb->grad.at(bt, c, i) += n->grad.at(bt, ca + c, i);
                          }
                      });
    }

    /// Forward difference per row with the last value replicated, so output
    /// length equals input length. Matches the signal-domain gradient channel.
    Var<T> forward_diff(const Var<T>& x) {
        const std::size_t L = x->value.length();
        if (L < 2) throw UsageError("forward_diff: length must be >= 2");
        auto fd = [](const Tensor3<T>& v) {
            Tensor3<T> y(v.batch(), v.channels(), v.length());
            const std::size_t n = v.length();
            for (std::size_t b = 0; b < v.batch(); ++b)
                for (std::size_t c = 0; c < v.channels(); ++c) {
                    for (std::size_t i = 0; i + 1 < n; ++i)
                        y.at(b, c, i) = v.at(b, c, i + 1) - v.at(b, c, i);
                    y.at(b, c, n - 1) = y.at(b, c, n - 2);
                }
            return y;
        };
        return unary(x, fd, [](Node<T>* n, const Var<T>& p) {
            const std::size_t L2 = p->value.length();
            for (std::size_t b = 0; b < p->value.batch(); ++b)
                for (std::size_t c = 0; c < p->value.channels(); ++c) {
                    for (std::size_t i = 0; i + 1 < L2; ++i) {
                        p->grad.at(b, c, i + 1) += n->grad.at(b, c, i);
                        p->grad.at(b, c, i) -= n->grad.at(b, c, i);
                    }
                    // replicated tail differentiates x[L-1] - x[L-2]
                    p->grad.at(b, c, L2 - 1) += n->grad.at(b, c, L2 - 1);
                    p->grad.at(b, c, L2 - 2) -= n->grad.at(b, c, L2 - 1);
                }
        });
    }

    /// Scalar loss: sum over channels of weight[c] * mean_{batch,length} |pred - gt|.
    Var<T> weighted_l1(const Var<T>& pred, const Var<T>& gt, std::vector<T> channel_weights) {
        detail::require_same_shape(pred->value, gt->value, "weighted_l1");
        if (channel_weights.size() != pred->value.channels())
            throw DimensionError("weighted_l1: " + std::to_string(channel_weights.size()) +
                                 " weights for " + std::to_string(pred->value.channels()) +
                                 " channels");
        const std::size_t B = pred->value.batch(), C = pred->value.channels(),
                          L = pred->value.length();
        const T norm = T(1) / static_cast<T>(B * L);
        T total = T(0);
        for (std::size_t c = 0; c < C; ++c) {
            T s = T(0);
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t i = 0; i < L; ++i)
                    s += std::abs(pred->value.at(b, c, i) - gt->value.at(b, c, i));
            total += channel_weights[c] * s * norm;
        }
        // non-validating ctor: a non-finite loss must reach the caller's
        // divergence check rather than abort here without context
        Tensor3<T> scalar(1, 1, 1);
        scalar.at(0, 0, 0) = total;
        auto node = make(std::move(scalar), pred->needs_grad || gt->needs_grad, nullptr);
        if (node->needs_grad) {
            Node<T>* n = node.get();
            auto w = std::move(channel_weights);
            node->backprop = [n, pred, gt, w, norm]() {
                const T seed = n->grad.at(0, 0, 0);
                const std::size_t B2 = pred->value.batch(), C2 = pred->value.channels(),
                                  L2 = pred->value.length();
                for (std::size_t c = 0; c < C2; ++c) {
                    const T g = seed * w[c] * norm;
                    for (std::size_t b = 0; b < B2; ++b)
                        for (std::size_t i = 0; i < L2; ++i) {
                            const T d = pred->value.at(b, c, i) - gt->value.at(b, c, i);
                            const T s = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
                            if (pred->needs_grad) pred->grad.at(b, c, i) += g * s;
                            if (gt->needs_grad) gt->grad.at(b, c, i) -= g * s;
                        }
                }
            };
        }
        return node;
    }

    /// Seeds the scalar terminal and replays adjoints in reverse order.
    void backward(const Var<T>& loss, T seed = T(1)) {
        if (loss->value.batch() != 1 || loss->value.channels() != 1 ||
            loss->value.length() != 1)
            throw UsageError("backward: terminal node must be scalar, got " +
                             loss->value.shape_str());
        loss->grad.at(0, 0, 0) = seed;
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
            if ((*it)->needs_grad && (*it)->backprop) (*it)->backprop();
    }

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<Var<T>> nodes_;
    double relu_clearance_ = std::numeric_limits<double>::infinity();

    static void accumulate(Tensor3<T>& dst, const Tensor3<T>& src, T s) {
        T* d = dst.data();
        const T* v = src.data();
        for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s * v[i];
    }

    Var<T> make(Tensor3<T> value, bool needs, std::function<void()> bp) {
        auto node = std::make_shared<Node<T>>(std::move(value));
        node->needs_grad = needs;
        node->backprop = std::move(bp);
        nodes_.push_back(node);
        return node;
    }

    template <class F, class Bp>
    Var<T> unary(const Var<T>& x, F&& f, Bp&& bp) {
        auto node = make(f(x->value), x->needs_grad, nullptr);
        if (node->needs_grad) {
            Node<T>* n = node.get();
            node->backprop = [n, x, bp = std::forward<Bp>(bp)]() { bp(n, x); };
        }
        return node;
    }

    template <class F, class Bp>
    Var<T> binary(const Var<T>& a, const Var<T>& b, F&& f, Bp&& bp) {
        auto node = make(f(a->value, b->value), a->needs_grad || b->needs_grad, nullptr);
        if (node->needs_grad) {
            Node<T>* n = node.get();
            node->backprop = [n, a, b, bp = std::forward<Bp>(bp)]() { bp(n, a, b); };
        }
        return node;
    }
};

/// Adam with bias correction. Grads are zeroed after each step.
template <class T>
class Adam {
public:
    explicit Adam(T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::span<Param<T>* const> params) {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (Param<T>* p : params) {
            auto& [m, v] = moments_[p->name];
            if (m.empty()) {
                m.assign(p->value.size(), T(0));
                v.assign(p->value.size(), T(0));
            }
            T* theta = p->value.data();
            T* g = p->grad.data();
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                m[i] = beta1_ * m[i] + (T(1) - beta1_) * g[i];
                v[i] = beta2_ * v[i] + (T(1) - beta2_) * g[i] * g[i];
                const T mhat = m[i] / bc1;
                const T vhat = v[i] / bc2;
                theta[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
                g[i] = T(0);
            }
        }
    }

    long long step_count() const { return t_; }

private:
    T lr_, beta1_, beta2_, eps_;
    long long t_ = 0;
    std::unordered_map<std::string, std::pair<std::vector<T>, std::vector<T>>> moments_;
};

struct FdReport {
    double max_rel_err = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
};

/// Central-difference audit of analytic gradients. Expects params[i]->grad to
/// already hold the analytic gradient of f; never throws, only reports.
template <class T>
FdReport finite_diff_check(const std::function<T()>& f, std::span<Param<T>* const> params,
                           T h = T(1e-5)) {
    FdReport report;
    for (Param<T>* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const T saved = p->value.data()[i];
            p->value.data()[i] = saved + h;
            const T fp = f();
            p->value.data()[i] = saved - h;
            const T fm = f();
            p->value.data()[i] = saved;
            const double numeric = (static_cast<double>(fp) - static_cast<double>(fm)) /
                                   (2.0 * static_cast<double>(h));
            const double analytic = static_cast<double>(p->grad.data()[i]);
            const double denom =
                std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            const double rel = std::abs(analytic - numeric) / denom;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = p->name;
                report.worst_index = i;
            }
        }
    }
    return report;
}

} // namespace innpar
