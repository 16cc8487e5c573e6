#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <vector>

#include <cblas.h>

#include "innpar/errors.hpp"

namespace innpar {

/// Dense rank-3 array, row-major in (batch, channel, length) order.
/// Values are immutable once built through the op suite below; every op
/// returns fresh storage and never aliases its inputs.
template <class T>
class Tensor3 {
    static_assert(std::is_floating_point_v<T>);

public:
    Tensor3() : batch_(0), channels_(0), length_(0) {}

    Tensor3(std::size_t batch, std::size_t channels, std::size_t length)
        : batch_(batch), channels_(channels), length_(length),
          data_(batch * channels * length, T(0)) {
        if (batch == 0 || channels == 0 || length == 0)
            throw DimensionError("Tensor3: all axes must be positive, got (" +
                                 std::to_string(batch) + ", " + std::to_string(channels) +
                                 ", " + std::to_string(length) + ")");
    }

    Tensor3(std::size_t batch, std::size_t channels, std::size_t length,
            std::vector<T> data)
        : batch_(batch), channels_(channels), length_(length), data_(std::move(data)) {
        if (data_.size() != batch * channels * length)
            throw DimensionError("Tensor3: data size " + std::to_string(data_.size()) +
                                 " != batch*channels*length = " +
                                 std::to_string(batch * channels * length));
        for (T v : data_)
            if (!std::isfinite(v))
                throw NumericError("Tensor3: non-finite element in constructor data");
    }

    std::size_t batch() const { return batch_; }
    std::size_t channels() const { return channels_; }
    std::size_t length() const { return length_; }
    std::size_t size() const { return data_.size(); }

    T& at(std::size_t b, std::size_t c, std::size_t i) {
        return data_[(b * channels_ + c) * length_ + i];
    }
    T at(std::size_t b, std::size_t c, std::size_t i) const {
        return data_[(b * channels_ + c) * length_ + i];
    }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::span<const T> flat() const { return {data_.data(), data_.size()}; }
    std::span<T> flat() { return {data_.data(), data_.size()}; }

    bool same_shape(const Tensor3& o) const {
        return batch_ == o.batch_ && channels_ == o.channels_ && length_ == o.length_;
    }

    std::string shape_str() const {
        std::ostringstream ss;
        ss << "(" << batch_ << ", " << channels_ << ", " << length_ << ")";
        return ss.str();
    }

    bool all_finite() const {
        for (T v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    std::size_t batch_, channels_, length_;
    std::vector<T> data_;
};

namespace detail {

inline void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k,
                 float alpha, const float* a, int lda, const float* b, int ldb,
                 float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline void gemm(CBLAS_TRANSPOSE ta, CBLAS_TRANSPOSE tb, int m, int n, int k,
                 double alpha, const double* a, int lda, const double* b, int ldb,
                 double beta, double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

// col[(c*k + j), i] = x[b, c, i + j - pad], zero outside. col is (C*k) x L row-major.
template <class T>
void im2col(const Tensor3<T>& x, std::size_t b, std::size_t k, T* col) {
    const std::size_t C = x.channels(), L = x.length();
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < k; ++j) {
            T* row = col + (c * k + j) * L;
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
            for (std::size_t i = 0; i < L; ++i) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) + shift;
                row[i] = (src >= 0 && src < static_cast<std::ptrdiff_t>(L))
                             ? x.at(b, c, static_cast<std::size_t>(src))
                             : T(0);
            }
        }
    }
}

// Scatter-add of a (C*k) x L column matrix back into dx for batch b.
template <class T>
void col2im_add(const T* col, std::size_t b, std::size_t k, Tensor3<T>& dx) {
    const std::size_t C = dx.channels(), L = dx.length();
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t j = 0; j < k; ++j) {
            const T* row = col + (c * k + j) * L;
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
            for (std::size_t i = 0; i < L; ++i) {
                const std::ptrdiff_t dst = static_cast<std::ptrdiff_t>(i) + shift;
                if (dst >= 0 && dst < static_cast<std::ptrdiff_t>(L))
                    dx.at(b, c, static_cast<std::size_t>(dst)) += row[i];
            }
        }
    }
}

} // namespace detail

/// Same-padded 1-D cross-correlation. weight is (out_ch, in_ch, k) with k odd,
/// bias has out_ch entries. y[b,o,i] = sum_c sum_j w[o,c,j] x[b,c,i+j-(k-1)/2] + bias[o].
template <class T>
Tensor3<T> conv1d(const Tensor3<T>& x, const Tensor3<T>& weight, const std::vector<T>& bias) {
    const std::size_t O = weight.batch(), C = weight.channels(), k = weight.length();
    if (C != x.channels())
        throw DimensionError("conv1d: weight in_ch " + std::to_string(C) +
                             " != input channels " + std::to_string(x.channels()));
    if (k % 2 == 0)
        throw DimensionError("conv1d: kernel size must be odd, got " + std::to_string(k));
    if (bias.size() != O)
        throw DimensionError("conv1d: bias size " + std::to_string(bias.size()) +
                             " != out_ch " + std::to_string(O));

    const std::size_t B = x.batch(), L = x.length();
    Tensor3<T> y(B, O, L);
    std::vector<T> col(C * k * L);
    for (std::size_t b = 0; b < B; ++b) {
        detail::im2col(x, b, k, col.data());
        detail::gemm(CblasNoTrans, CblasNoTrans, static_cast<int>(O), static_cast<int>(L),
                     static_cast<int>(C * k), T(1), weight.data(), static_cast<int>(C * k),
                     col.data(), static_cast<int>(L), T(0), &y.at(b, 0, 0),
                     static_cast<int>(L));
        for (std::size_t o = 0; o < O; ++o) {
            T* row = &y.at(b, o, 0);
            for (std::size_t i = 0; i < L; ++i) row[i] += bias[o];
        }
    }
    return y;
}

/// Phase-interleaved length-to-channel rearrangement (1-D pixel shuffle inverse):
/// output channel c*factor+p at position i equals input channel c at i*factor+p.
template <class T>
Tensor3<T> squeeze(const Tensor3<T>& x, std::size_t factor) {
    if (factor == 0 || x.length() % factor != 0)
        throw DimensionError("squeeze: length " + std::to_string(x.length()) +
                             " not divisible by factor " + std::to_string(factor));
    const std::size_t B = x.batch(), C = x.channels(), L = x.length() / factor;
    Tensor3<T> y(B, C * factor, L);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < factor; ++p)
                for (std::size_t i = 0; i < L; ++i)
                    y.at(b, c * factor + p, i) = x.at(b, c, i * factor + p);
    return y;
}

/// Exact inverse of squeeze.
template <class T>
Tensor3<T> unsqueeze(const Tensor3<T>& x, std::size_t factor) {
    if (factor == 0 || x.channels() % factor != 0)
        throw DimensionError("unsqueeze: channels " + std::to_string(x.channels()) +
                             " not divisible by factor " + std::to_string(factor));
    const std::size_t B = x.batch(), C = x.channels() / factor, L = x.length();
    Tensor3<T> y(B, C, L * factor);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t p = 0; p < factor; ++p)
                for (std::size_t i = 0; i < L; ++i)
                    y.at(b, c, i * factor + p) = x.at(b, c * factor + p, i);
    return y;
}

namespace detail {
template <class T>
void require_same_shape(const Tensor3<T>& a, const Tensor3<T>& b, const char* op) {
    if (!a.same_shape(b))
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() +
                             " vs " + b.shape_str());
}
} // namespace detail

template <class T>
Tensor3<T> add(const Tensor3<T>& a, const Tensor3<T>& b) {
    detail::require_same_shape(a, b, "add");
    Tensor3<T> y = a;
    T* yd = y.data();
    const T* bd = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) yd[i] += bd[i];
    return y;
}

template <class T>
Tensor3<T> sub(const Tensor3<T>& a, const Tensor3<T>& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor3<T> y = a;
    T* yd = y.data();
    const T* bd = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) yd[i] -= bd[i];
    return y;
}

template <class T>
Tensor3<T> mul(const Tensor3<T>& a, const Tensor3<T>& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor3<T> y = a;
    T* yd = y.data();
    const T* bd = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) yd[i] *= bd[i];
    return y;
}

template <class T>
Tensor3<T> div(const Tensor3<T>& a, const Tensor3<T>& b) {
    detail::require_same_shape(a, b, "div");
    Tensor3<T> y = a;
    T* yd = y.data();
    const T* bd = b.data();
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (bd[i] == T(0)) throw NumericError("div: zero denominator element");
        yd[i] /= bd[i];
    }
    return y;
}

template <class T>
Tensor3<T> exp(const Tensor3<T>& x) {
    Tensor3<T> y = x;
    for (T& v : y.flat()) v = std::exp(v);
    return y;
}

template <class T>
Tensor3<T> tanh(const Tensor3<T>& x) {
    Tensor3<T> y = x;
    for (T& v : y.flat()) v = std::tanh(v);
    return y;
}

template <class T>
Tensor3<T> relu(const Tensor3<T>& x) {
    Tensor3<T> y = x;
    for (T& v : y.flat()) v = v > T(0) ? v : T(0);
    return y;
}

template <class T>
Tensor3<T> scale(const Tensor3<T>& x, T s) {
    Tensor3<T> y = x;
    for (T& v : y.flat()) v *= s;
    return y;
}

/// Appends n copies of the last sample per (batch, channel) row.
template <class T>
Tensor3<T> pad_replicate_right(const Tensor3<T>& x, std::size_t n) {
    if (n == 0) return x;
    const std::size_t B = x.batch(), C = x.channels(), L = x.length();
    Tensor3<T> y(B, C, L + n);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < L; ++i) y.at(b, c, i) = x.at(b, c, i);
            for (std::size_t i = 0; i < n; ++i) y.at(b, c, L + i) = x.at(b, c, L - 1);
        }
    return y;
}

/// Removes the last n samples per row.
template <class T>
Tensor3<T> crop_right(const Tensor3<T>& x, std::size_t n) {
    if (n == 0) return x;
    if (n >= x.length())
        throw DimensionError("crop_right: n " + std::to_string(n) + " >= length " +
                             std::to_string(x.length()));
    const std::size_t B = x.batch(), C = x.channels(), L = x.length() - n;
    Tensor3<T> y(B, C, L);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < L; ++i) y.at(b, c, i) = x.at(b, c, i);
    return y;
}

template <class T>
Tensor3<T> slice_channels(const Tensor3<T>& x, std::size_t from, std::size_t count) {
    if (from + count > x.channels())
        throw DimensionError("slice_channels: [" + std::to_string(from) + ", " +
                             std::to_string(from + count) + ") exceeds channels " +
                             std::to_string(x.channels()));
    Tensor3<T> y(x.batch(), count, x.length());
    for (std::size_t b = 0; b < x.batch(); ++b)
        for (std::size_t c = 0; c < count; ++c)
            for (std::size_t i = 0; i < x.length(); ++i)
                y.at(b, c, i) = x.at(b, from + c, i);
    return y;
}

template <class T>
Tensor3<T> concat_channels(const Tensor3<T>& a, const Tensor3<T>& b) {
    if (a.batch() != b.batch() || a.length() != b.length())
        throw DimensionError("concat_channels: incompatible shapes " + a.shape_str() +
                             " vs " + b.shape_str());
    Tensor3<T> y(a.batch(), a.channels() + b.channels(), a.length());
    for (std::size_t bt = 0; bt < a.batch(); ++bt) {
        for (std::size_t c = 0; c < a.channels(); ++c)
            for (std::size_t i = 0; i < a.length(); ++i) y.at(bt, c, i) = a.at(bt, c, i);
        for (std::size_t c = 0; c < b.channels(); ++c)
            for (std::size_t i = 0; i < a.length(); ++i)
                y.at(bt, a.channels() + c, i) = b.at(bt, c, i);
    }
    return y;
}

} // namespace innpar
