#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "innpar/errors.hpp"

namespace innpar {

inline constexpr char kSegmentMagic[8] = {'I', 'N', 'N', 'S', 'I', 'G', '0', '1'};

struct NormConstants {
    double abp_min_mmhg = 20.0;
    double abp_max_mmhg = 200.0;
};

struct Segment {
    std::vector<float> ppg;      // raw, roughly unit amplitude
    std::vector<float> abp_norm; // normalized units
};

/// Paired fixed-length (PPG, ABP) segments with shared sample rate and
/// dataset-wide affine ABP normalization. Immutable after ingest.
struct SegmentSet {
    std::vector<Segment> segments;
    std::size_t length = 625;
    double sample_rate_hz = 125.0;
    NormConstants norm;
    std::string split_tag = "train";
};

struct MetricsReport {
    double waveform_mae = 0.0;        // normalized units
    double waveform_nrmse = 0.0;      // normalized units
    double waveform_mae_mmhg = 0.0;   // mmHg-scale variant
    double waveform_nrmse_mmhg = 0.0; // equals the normalized value by construction
    double sbp_mae_mmhg = 0.0;
    double dbp_mae_mmhg = 0.0;
    std::size_t n_segments = 0;
    struct PerSegment {
        double mae, nrmse, sbp_err, dbp_err;
    };
    std::vector<PerSegment> per_segment;
};

/// Forward difference with the last value replicated, so output length
/// matches input length. Exact for affine signals.
template <class T>
std::vector<T> grad_channel(const std::vector<T>& x) {
    if (x.size() < 2) throw UsageError("grad_channel: need at least 2 samples");
    std::vector<T> g(x.size());
    for (std::size_t i = 0; i + 1 < x.size(); ++i) g[i] = x[i + 1] - x[i];
    g[x.size() - 1] = g[x.size() - 2];
    return g;
}

inline double normalize_abp(double mmhg, const NormConstants& n) {
    if (n.abp_max_mmhg <= n.abp_min_mmhg)
        throw ConfigError("norm: abp_max must exceed abp_min");
    return (mmhg - n.abp_min_mmhg) / (n.abp_max_mmhg - n.abp_min_mmhg);
}

inline double denormalize_abp(double y, const NormConstants& n) {
    if (n.abp_max_mmhg <= n.abp_min_mmhg)
        throw ConfigError("norm: abp_max must exceed abp_min");
    return y * (n.abp_max_mmhg - n.abp_min_mmhg) + n.abp_min_mmhg;
}

template <class T>
std::vector<T> normalize_abp(const std::vector<T>& mmhg, const NormConstants& n) {
    std::vector<T> out(mmhg.size());
    for (std::size_t i = 0; i < mmhg.size(); ++i)
        out[i] = static_cast<T>(normalize_abp(static_cast<double>(mmhg[i]), n));
    return out;
}

template <class T>
std::vector<T> denormalize_abp(const std::vector<T>& y, const NormConstants& n) {
    std::vector<T> out(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        out[i] = static_cast<T>(denormalize_abp(static_cast<double>(y[i]), n));
    return out;
}

struct PeakDetectorConfig {
    double min_distance_s = 0.4;   // >= 0.4 s between systolic peaks (<= 150 bpm)
    double min_prominence = 0.05;  // fraction of segment peak-to-peak range
};

/// Cycle-wise SBP/DBP from an ABP waveform in mmHg. SBP is the mean of
/// detected systolic maxima; DBP the mean of inter-peak minima, plus the
/// edge minima before the first / after the last peak when those minima are
/// interior local minima (a boundary sample is not a trough). Falls back to
/// (global max, global min) when no peak qualifies.
template <class T>
std::pair<double, double> extract_sbp_dbp(const std::vector<T>& abp, double sample_rate_hz,
                                          const PeakDetectorConfig& det = {}) {
    if (abp.empty()) throw UsageError("extract_sbp_dbp: empty input");
    if (static_cast<double>(abp.size()) < sample_rate_hz)
        throw UsageError("extract_sbp_dbp: need at least 1 s of samples");
    for (T v : abp)
        if (!std::isfinite(static_cast<double>(v)))
            throw UsageError("extract_sbp_dbp: non-finite sample");

    const std::size_t n = abp.size();
    const auto [mn_it, mx_it] = std::minmax_element(abp.begin(), abp.end());
    const double range = static_cast<double>(*mx_it) - static_cast<double>(*mn_it);
    const double prom_thresh = det.min_prominence * range;
    const auto min_dist =
        static_cast<std::size_t>(std::ceil(det.min_distance_s * sample_rate_hz));

    // candidate local maxima with sufficient prominence
    std::vector<std::size_t> candidates;
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (!(abp[i] > abp[i - 1] && abp[i] >= abp[i + 1])) continue;
        double left_min = abp[i];
        for (std::size_t j = i; j-- > 0;) {
            if (abp[j] > abp[i]) break;
            left_min = std::min(left_min, static_cast<double>(abp[j]));
        }
        double right_min = abp[i];
        for (std::size_t j = i + 1; j < n; ++j) {
            if (abp[j] > abp[i]) break;
            right_min = std::min(right_min, static_cast<double>(abp[j]));
        }
        const double prominence =
            static_cast<double>(abp[i]) - std::max(left_min, right_min);
        if (range > 0.0 && prominence >= prom_thresh) candidates.push_back(i);
    }

    // greedy distance pruning, tallest first
    std::sort(candidates.begin(), candidates.end(),
              [&](std::size_t a, std::size_t b) {
                  return abp[a] != abp[b] ? abp[a] > abp[b] : a < b;
              });
    std::vector<std::size_t> peaks;
    for (std::size_t c : candidates) {
        bool ok = true;
        for (std::size_t p : peaks)
            if ((c > p ? c - p : p - c) < min_dist) {
                ok = false;
                break;
            }
        if (ok) peaks.push_back(c);
    }
    std::sort(peaks.begin(), peaks.end());

    if (peaks.empty())
        return {static_cast<double>(*mx_it), static_cast<double>(*mn_it)};

    double sbp = 0.0;
    for (std::size_t p : peaks) sbp += static_cast<double>(abp[p]);
    sbp /= static_cast<double>(peaks.size());

    std::vector<double> troughs;
    for (std::size_t i = 0; i + 1 < peaks.size(); ++i) {
        double m = abp[peaks[i]];
        for (std::size_t j = peaks[i]; j <= peaks[i + 1]; ++j)
            m = std::min(m, static_cast<double>(abp[j]));
        troughs.push_back(m);
    }
    auto edge_trough = [&](std::size_t from, std::size_t to) {
        std::size_t arg = from;
        for (std::size_t j = from; j < to; ++j)
            if (abp[j] < abp[arg]) arg = j;
        const bool interior = arg > 0 && arg + 1 < n && abp[arg] <= abp[arg - 1] &&
                              abp[arg] <= abp[arg + 1];
        if (interior) troughs.push_back(static_cast<double>(abp[arg]));
    };
    if (peaks.front() > 0) edge_trough(0, peaks.front());
    if (peaks.back() + 1 < n) edge_trough(peaks.back() + 1, n);

    double dbp;
    if (troughs.empty()) {
        dbp = static_cast<double>(*mn_it);
    } else {
        dbp = std::accumulate(troughs.begin(), troughs.end(), 0.0) /
              static_cast<double>(troughs.size());
    }
    return {sbp, dbp};
}

template <class T>
double mae(const std::vector<T>& pred, const std::vector<T>& gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw DimensionError("mae: lengths " + std::to_string(pred.size()) + " vs " +
                             std::to_string(gt.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        s += std::abs(static_cast<double>(pred[i]) - static_cast<double>(gt[i]));
    return s / static_cast<double>(pred.size());
}

/// RMSE divided by the ground-truth range (max - min).
template <class T>
double nrmse(const std::vector<T>& pred, const std::vector<T>& gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw DimensionError("nrmse: lengths " + std::to_string(pred.size()) + " vs " +
                             std::to_string(gt.size()));
    const auto [mn, mx] = std::minmax_element(gt.begin(), gt.end());
    const double range = static_cast<double>(*mx) - static_cast<double>(*mn);
    if (range <= 0.0) throw NumericError("nrmse: flat ground truth, range is zero");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred[i]) - static_cast<double>(gt[i]);
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(pred.size())) / range;
}

namespace detail {
inline void check_norm_band(const SegmentSet& set, const char* where) {
    for (std::size_t s = 0; s < set.segments.size(); ++s)
        for (float v : set.segments[s].abp_norm)
            if (v < -0.5f || v > 1.5f)
                throw FormatError(std::string(where) + ": segment " + std::to_string(s) +
                                  " has normalized ABP outside [-0.5, 1.5]");
}
} // namespace detail

/// CSV ingest: one segment per row, 2L comma-separated reals (PPG samples in
/// signal units, then ABP samples in mmHg). Lines starting with '#' are
/// skipped. ABP is normalized on ingest.
inline SegmentSet ingest_csv(const std::string& path, std::size_t length,
                             const NormConstants& norm = {}, double sample_rate_hz = 125.0) {
    std::ifstream in(path);
    if (!in) throw IoError("ingest_csv: cannot open " + path);
    SegmentSet set;
    set.length = length;
    set.sample_rate_hz = sample_rate_hz;
    set.norm = norm;

    std::string line;
    std::size_t rownum = 0;
    while (std::getline(in, line)) {
        ++rownum;
        if (line.empty() || line[0] == '#') continue;
        std::vector<double> vals;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t pos = 0;
                const double v = std::stod(cell, &pos);
                while (pos < cell.size() && std::isspace(static_cast<unsigned char>(cell[pos])))
                    ++pos;
                if (pos != cell.size()) throw std::invalid_argument(cell);
                vals.push_back(v);
            } catch (const std::exception&) {
                throw FormatError("ingest_csv: non-numeric cell '" + cell + "' in row " +
                                  std::to_string(rownum));
            }
        }
        if (vals.size() != 2 * length)
            throw FormatError("ingest_csv: row " + std::to_string(rownum) + " has " +
                              std::to_string(vals.size()) + " values, expected " +
                              std::to_string(2 * length));
        Segment seg;
        seg.ppg.assign(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(length));
        seg.abp_norm.resize(length);
        for (std::size_t i = 0; i < length; ++i)
            seg.abp_norm[i] = static_cast<float>(normalize_abp(vals[length + i], norm));
        set.segments.push_back(std::move(seg));
    }
    detail::check_norm_band(set, "ingest_csv");
    return set;
}

/// Segment binary format: magic "INNSIG01" | u32 LE count | u32 LE L |
/// f32 LE sample rate | f32 LE norm_min, norm_max | per segment L x f32 PPG
/// then L x f32 ABP (normalized units).
inline void write_segments(const std::string& path, const SegmentSet& set) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("write_segments: cannot open " + path);
    out.write(kSegmentMagic, 8);
    const std::uint32_t count = static_cast<std::uint32_t>(set.segments.size());
    const std::uint32_t L = static_cast<std::uint32_t>(set.length);
    const float rate = static_cast<float>(set.sample_rate_hz);
    const float nmin = static_cast<float>(set.norm.abp_min_mmhg);
    const float nmax = static_cast<float>(set.norm.abp_max_mmhg);
    out.write(reinterpret_cast<const char*>(&count), 4);
    out.write(reinterpret_cast<const char*>(&L), 4);
    out.write(reinterpret_cast<const char*>(&rate), 4);
    out.write(reinterpret_cast<const char*>(&nmin), 4);
    out.write(reinterpret_cast<const char*>(&nmax), 4);
    for (const Segment& s : set.segments) {
        out.write(reinterpret_cast<const char*>(s.ppg.data()),
                  static_cast<std::streamsize>(set.length * 4));
        out.write(reinterpret_cast<const char*>(s.abp_norm.data()),
                  static_cast<std::streamsize>(set.length * 4));
    }
    if (!out) throw IoError("write_segments: write failed for " + path);
}

inline SegmentSet read_segments(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("read_segments: cannot open " + path);
    char magic[8];
    if (!in.read(magic, 8))
        throw FormatError("read_segments: truncated before magic at byte 0");
    if (std::memcmp(magic, kSegmentMagic, 8) != 0)
        throw FormatError("read_segments: bad magic at byte 0");
    std::uint32_t count = 0, L = 0;
    float rate = 0, nmin = 0, nmax = 0;
    if (!in.read(reinterpret_cast<char*>(&count), 4) ||
        !in.read(reinterpret_cast<char*>(&L), 4) ||
        !in.read(reinterpret_cast<char*>(&rate), 4) ||
        !in.read(reinterpret_cast<char*>(&nmin), 4) ||
        !in.read(reinterpret_cast<char*>(&nmax), 4))
        throw FormatError("read_segments: truncated header at byte 8");
    if (L == 0) throw FormatError("read_segments: zero segment length in header");
    SegmentSet set;
    set.length = L;
    set.sample_rate_hz = rate;
    set.norm = {nmin, nmax};
    set.segments.resize(count);
    std::uint64_t offset = 24;
    for (std::uint32_t s = 0; s < count; ++s) {
        set.segments[s].ppg.resize(L);
        set.segments[s].abp_norm.resize(L);
        if (!in.read(reinterpret_cast<char*>(set.segments[s].ppg.data()), L * 4) ||
            !in.read(reinterpret_cast<char*>(set.segments[s].abp_norm.data()), L * 4))
            throw FormatError("read_segments: truncated segment " + std::to_string(s) +
                              " at byte " + std::to_string(offset));
        offset += 8ull * L;
    }
    detail::check_norm_band(set, "read_segments");
    return set;
}

namespace detail {

// Fixed pressure-pulse template on [0, 1): systolic upstroke, decay, and a
// small dicrotic bump, rescaled so min = 0 and max = 1 over a dense grid.
class PulseTemplate {
public:
    PulseTemplate() : table_(kSize) {
        for (std::size_t i = 0; i < kSize; ++i) {
            const double phi = static_cast<double>(i) / kSize;
            table_[i] = raw(phi);
        }
        const auto [mn, mx] = std::minmax_element(table_.begin(), table_.end());
        const double lo = *mn, hi = *mx;
        for (double& v : table_) v = (v - lo) / (hi - lo);
    }

    double operator()(double phi) const {
        phi -= std::floor(phi);
        const double x = phi * kSize;
        const std::size_t i0 = static_cast<std::size_t>(x) % kSize;
        const std::size_t i1 = (i0 + 1) % kSize;
        const double f = x - std::floor(x);
        return table_[i0] * (1.0 - f) + table_[i1] * f;
    }

private:
    static constexpr std::size_t kSize = 2048;
    std::vector<double> table_;

    static double raw(double phi) {
        const double sys = std::pow(std::max(0.0, std::sin(M_PI * std::min(phi / 0.55, 1.0))), 1.6);
        // kept below the detector's prominence gate so it never reads as a beat
        const double dic = 0.035 * std::exp(-std::pow((phi - 0.70) / 0.06, 2.0));
        return sys + dic;
    }
};

} // namespace detail

struct SynthTruth {
    double sbp_mmhg, dbp_mmhg, heart_rate_hz;
};

/// Deterministic synthetic corpus: PPG is a unit-amplitude zero-baseline
/// harmonic pulse train with per-segment heart rate, phase and baseline
/// wander; ABP shares the cycle timing and maps it through a fixed nonlinear
/// pressure-pulse template scaled to a per-segment SBP/DBP draw.
inline SegmentSet synth_corpus(std::size_t n, std::uint64_t seed, std::size_t length = 625,
                               double sample_rate_hz = 125.0, const NormConstants& norm = {},
                               std::vector<SynthTruth>* truth_out = nullptr) {
    if (n == 0) throw UsageError("synth_corpus: n must be >= 1");
    static const detail::PulseTemplate pulse;

    SegmentSet set;
    set.length = length;
    set.sample_rate_hz = sample_rate_hz;
    set.norm = norm;
    set.segments.reserve(n);

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double harmonics_amp[3] = {1.0, 0.35, 0.12};
    const double harmonics_phase[3] = {0.0, 0.9, 2.1};

    for (std::size_t s = 0; s < n; ++s) {
        const double hr = 0.9 + 0.9 * u01(rng);
        const double phase0 = u01(rng);
        const double dbp = 60.0 + 40.0 * u01(rng);
        const double sbp = std::max(100.0, dbp + 30.0) +
                           (160.0 - std::max(100.0, dbp + 30.0)) * u01(rng);
        const double wander_amp = 0.02 + 0.06 * u01(rng);
        const double wander_phase = 2.0 * M_PI * u01(rng);

        Segment seg;
        seg.ppg.resize(length);
        seg.abp_norm.resize(length);
        double peak = 0.0;
        std::vector<double> raw_ppg(length);
        for (std::size_t i = 0; i < length; ++i) {
            const double t = static_cast<double>(i) / sample_rate_hz;
            const double phi = hr * t + phase0;
            double v = 0.0;
            for (int k = 0; k < 3; ++k)
                v += harmonics_amp[k] *
                     std::sin(2.0 * M_PI * (k + 1) * phi + harmonics_phase[k]);
            raw_ppg[i] = v;
            peak = std::max(peak, std::abs(v));
            const double abp = dbp + (sbp - dbp) * pulse(phi);
            seg.abp_norm[i] = static_cast<float>(normalize_abp(abp, norm));
        }
        for (std::size_t i = 0; i < length; ++i) {
            const double t = static_cast<double>(i) / sample_rate_hz;
            const double wander =
                wander_amp * std::sin(2.0 * M_PI * 0.15 * t + wander_phase);
            seg.ppg[i] = static_cast<float>(raw_ppg[i] / peak + wander);
        }
        set.segments.push_back(std::move(seg));
        if (truth_out) truth_out->push_back({sbp, dbp, hr});
    }
    return set;
}

} // namespace innpar
