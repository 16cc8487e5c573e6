#include "innpar.h"

#include <cstdlib>
#include <cstring>
#include <string>
#include <variant>

#include "innpar/audit.hpp"
#include "innpar/checkpoint.hpp"
#include "innpar/layers.hpp"
#include "innpar/signal.hpp"
#include "innpar/train.hpp"

using namespace innpar;

namespace {

thread_local std::string g_error = "no error";

using AnyModel = std::variant<InnParModel<float>, InnParModel<double>>;

bool use_f64() {
    const char* p = std::getenv("INNPAR_PRECISION");
    if (!p || std::strcmp(p, "f32") == 0) return false;
    if (std::strcmp(p, "f64") == 0) return true;
    throw ConfigError(std::string("INNPAR_PRECISION must be f32 or f64, got '") + p +
                      "'");
}

ModelConfig parse_model_config(const char* json) {
    if (!json || !*json) return {};
    nlohmann::json j = nlohmann::json::parse(json);
    static const char* allowed[] = {"num_blocks", "channels",  "split",
                                    "mscm_filters", "kernel",  "squeeze_factor",
                                    "scales",     "clamp_c",   "clamp_enabled",
                                    "signal_length"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ConfigError("config: unknown key '" + it.key() + "'");
    }
    ModelConfig cfg = j.get<ModelConfig>();
    cfg.validate();
    return cfg;
}

TrainConfig parse_train_config(const char* json) {
    if (!json || !*json) return {};
    nlohmann::json j = nlohmann::json::parse(json);
    TrainConfig tc = j.get<TrainConfig>();
    tc.validate();
    return tc;
}

innpar_status status_of(const std::exception& e) {
    g_error = e.what();
    if (dynamic_cast<const NumericError*>(&e)) return INNPAR_ENUMERIC;
    return INNPAR_EINVAL;
}

template <class F>
innpar_status guarded(F&& f) {
    try {
        return f();
    } catch (const std::exception& e) {
        return status_of(e);
    }
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

} // namespace

struct innpar_model {
    AnyModel m;
};

struct innpar_dataset {
    SegmentSet set;
};

namespace {

template <bool Forward>
innpar_status run_direction(innpar_model* m, const float* in, size_t channels,
                            size_t length, float* out) {
    return guarded([&] {
        if (!m || !in || !out) throw UsageError("model transform: NULL argument");
        return std::visit(
            [&](auto& model) {
                using T = typename std::decay_t<decltype(model)>::value_type;
                Tensor3<T> x(1, channels, length);
                for (std::size_t i = 0; i < channels * length; ++i)
                    x.flat()[i] = static_cast<T>(in[i]);
                Tensor3<T> y = Forward ? model.forward(x) : model.inverse(x);
                for (std::size_t i = 0; i < channels * length; ++i)
                    out[i] = static_cast<float>(y.flat()[i]);
                return INNPAR_OK;
            },
            m->m);
    });
}

} // namespace

extern "C" {

const char* innpar_last_error(void) { return g_error.c_str(); }

void innpar_string_free(char* s) { std::free(s); }

/* ---- model ---------------------------------------------------------- */

innpar_model* innpar_model_create(const char* config_json, uint64_t seed) {
    try {
        ModelConfig cfg = parse_model_config(config_json);
        if (use_f64()) {
            InnParModel<double> m(cfg);
            m.init(seed);
            return new innpar_model{AnyModel(std::move(m))};
        }
        InnParModel<float> m(cfg);
        m.init(seed);
        return new innpar_model{AnyModel(std::move(m))};
    } catch (const std::exception& e) {
        g_error = e.what();
        return nullptr;
    }
}

innpar_model* innpar_model_create_identity(const char* config_json) {
    try {
        ModelConfig cfg = parse_model_config(config_json);
        if (use_f64()) {
            InnParModel<double> m(cfg);
            m.init_identity();
            return new innpar_model{AnyModel(std::move(m))};
        }
        InnParModel<float> m(cfg);
        m.init_identity();
        return new innpar_model{AnyModel(std::move(m))};
    } catch (const std::exception& e) {
        g_error = e.what();
        return nullptr;
    }
}

innpar_model* innpar_model_load(const char* checkpoint_path) {
    try {
        if (!checkpoint_path) throw UsageError("model_load: path is NULL");
        if (use_f64())
            return new innpar_model{AnyModel(load_checkpoint<double>(checkpoint_path))};
        return new innpar_model{AnyModel(load_checkpoint<float>(checkpoint_path))};
    } catch (const std::exception& e) {
        g_error = e.what();
        return nullptr;
    }
}

innpar_status innpar_model_save(innpar_model* m, const char* checkpoint_path) {
    return guarded([&] {
        if (!m || !checkpoint_path) throw UsageError("model_save: NULL argument");
        std::visit([&](auto& model) { save_checkpoint(model, checkpoint_path); }, m->m);
        return INNPAR_OK;
    });
}

void innpar_model_free(innpar_model* m) { delete m; }

char* innpar_model_config_json(const innpar_model* m) {
    if (!m) {
        g_error = "model_config_json: NULL model";
        return nullptr;
    }
    nlohmann::json j =
        std::visit([](const auto& model) { return nlohmann::json(model.config()); },
                   m->m);
    return dup_string(j.dump());
}

size_t innpar_model_param_count(const innpar_model* m) {
    if (!m) return 0;
    return std::visit([](const auto& model) { return model.param_count(); }, m->m);
}

uint64_t innpar_model_mac_count(const innpar_model* m) {
    if (!m) return 0;
    return std::visit(
        [](const auto& model) {
            return static_cast<uint64_t>(model.mac_count(model.config().signal_length));
        },
        m->m);
}

size_t innpar_model_signal_length(const innpar_model* m) {
    if (!m) return 0;
    return std::visit([](const auto& model) { return model.config().signal_length; },
                      m->m);
}

size_t innpar_model_channels(const innpar_model* m) {
    if (!m) return 0;
    return std::visit([](const auto& model) { return model.config().channels; }, m->m);
}

innpar_status innpar_model_forward(innpar_model* m, const float* in, size_t channels,
                                   size_t length, float* out) {
    return run_direction<true>(m, in, channels, length, out);
}

innpar_status innpar_model_inverse(innpar_model* m, const float* in, size_t channels,
                                   size_t length, float* out) {
    return run_direction<false>(m, in, channels, length, out);
}

/* ---- datasets ------------------------------------------------------- */

innpar_dataset* innpar_dataset_synth(size_t n, uint64_t seed, size_t length) {
    try {
        return new innpar_dataset{synth_corpus(n, seed, length)};
    } catch (const std::exception& e) {
        g_error = e.what();
        return nullptr;
    }
}

innpar_dataset* innpar_dataset_read(const char* path) {
    try {
        if (!path) throw UsageError("dataset_read: path is NULL");
        return new innpar_dataset{read_segments(path)};
    } catch (const std::exception& e) {
        g_error = e.what();
        return nullptr;
    }
}

innpar_dataset* innpar_dataset_read_csv(const char* path, size_t length) {
    try {
        if (!path) throw UsageError("dataset_read_csv: path is NULL");
        return new innpar_dataset{ingest_csv(path, length)};
    } catch (const std::exception& e) {
        g_error = e.what();
        return nullptr;
    }
}

innpar_status innpar_dataset_write(const innpar_dataset* d, const char* path) {
    return guarded([&] {
        if (!d || !path) throw UsageError("dataset_write: NULL argument");
        write_segments(path, d->set);
        return INNPAR_OK;
    });
}

size_t innpar_dataset_size(const innpar_dataset* d) {
    return d ? d->set.segments.size() : 0;
}

size_t innpar_dataset_length(const innpar_dataset* d) { return d ? d->set.length : 0; }

double innpar_dataset_sample_rate(const innpar_dataset* d) {
    return d ? d->set.sample_rate_hz : 0.0;
}

innpar_dataset* innpar_dataset_slice(const innpar_dataset* d, size_t from,
                                     size_t count) {
    try {
        if (!d) throw UsageError("dataset_slice: NULL dataset");
        if (from + count > d->set.segments.size())
            throw UsageError("dataset_slice: [" + std::to_string(from) + ", " +
                             std::to_string(from + count) + ") out of range for " +
                             std::to_string(d->set.segments.size()) + " segments");
        SegmentSet out = d->set;
        out.segments.assign(d->set.segments.begin() + static_cast<std::ptrdiff_t>(from),
                            d->set.segments.begin() +
                                static_cast<std::ptrdiff_t>(from + count));
        return new innpar_dataset{std::move(out)};
    } catch (const std::exception& e) {
        g_error = e.what();
        return nullptr;
    }
}

innpar_status innpar_dataset_get(const innpar_dataset* d, size_t index, float* ppg,
                                 float* abp_norm) {
    return guarded([&] {
        if (!d) throw UsageError("dataset_get: NULL dataset");
        if (index >= d->set.segments.size())
            throw UsageError("dataset_get: index " + std::to_string(index) +
                             " out of range");
        const Segment& s = d->set.segments[index];
        if (ppg) std::memcpy(ppg, s.ppg.data(), s.ppg.size() * sizeof(float));
        if (abp_norm)
            std::memcpy(abp_norm, s.abp_norm.data(), s.abp_norm.size() * sizeof(float));
        return INNPAR_OK;
    });
}

void innpar_dataset_free(innpar_dataset* d) { delete d; }

/* ---- signal helpers -------------------------------------------------- */

innpar_status innpar_grad_channel(const float* x, size_t n, float* out) {
    return guarded([&] {
        if (!x || !out) throw UsageError("grad_channel: NULL argument");
        std::vector<float> in(x, x + n);
        auto g = grad_channel(in);
        std::memcpy(out, g.data(), n * sizeof(float));
        return INNPAR_OK;
    });
}

double innpar_normalize_abp(double mmhg) { return normalize_abp(mmhg, {}); }

double innpar_denormalize_abp(double normalized) {
    return denormalize_abp(normalized, {});
}

innpar_status innpar_extract_sbp_dbp(const float* abp_mmhg, size_t n,
                                     double sample_rate_hz, double* sbp, double* dbp) {
    return guarded([&] {
        if (!abp_mmhg || !sbp || !dbp)
            throw UsageError("extract_sbp_dbp: NULL argument");
        std::vector<float> v(abp_mmhg, abp_mmhg + n);
        auto [s, d] = extract_sbp_dbp(v, sample_rate_hz);
        *sbp = s;
        *dbp = d;
        return INNPAR_OK;
    });
}

/* ---- training and evaluation ---------------------------------------- */

innpar_status innpar_fit(innpar_model* m, const innpar_dataset* train,
                         const innpar_dataset* val, const char* train_config_json,
                         const char* checkpoint_dir, const char* runlog_path) {
    return guarded([&] {
        if (!m || !train || !val) throw UsageError("fit: NULL argument");
        TrainConfig tc = parse_train_config(train_config_json);
        RunLog log = std::visit(
            [&](auto& model) {
                return fit(model, train->set, val->set, tc,
                           checkpoint_dir ? checkpoint_dir : "");
            },
            m->m);
        if (runlog_path) write_runlog(runlog_path, log);
        return INNPAR_OK;
    });
}

char* innpar_evaluate_json(innpar_model* m, const innpar_dataset* test,
                           int ae1_duplicate) {
    try {
        if (!m || !test) throw UsageError("evaluate: NULL argument");
        MetricsReport r = std::visit(
            [&](auto& model) { return evaluate(model, test->set, ae1_duplicate != 0); },
            m->m);
        return dup_string(metrics_to_json(r).dump());
    } catch (const std::exception& e) {
        g_error = e.what();
        return nullptr;
    }
}

/* ---- audits ---------------------------------------------------------- */

innpar_status innpar_audit_roundtrip(const char* config_json, uint64_t seed,
                                     int trials, double tolerance, double* worst) {
    return guarded([&] {
        if (trials <= 0) throw UsageError("audit_roundtrip: trials must be >= 1");
        ModelConfig cfg = parse_model_config(config_json);
        const double w = use_f64() ? roundtrip_audit<double>(cfg, seed, trials)
                                   : roundtrip_audit<float>(cfg, seed, trials);
        if (worst) *worst = w;
        if (w > tolerance) {
            g_error = "roundtrip audit: worst |x - inverse(forward(x))| = " +
                      std::to_string(w) + " exceeds tolerance " +
                      std::to_string(tolerance);
            return INNPAR_AUDIT_FAIL;
        }
        return INNPAR_OK;
    });
}

innpar_status innpar_audit_gradcheck(const char* config_json, uint64_t seed,
                                     double tolerance, double* max_rel_err) {
    return guarded([&] {
        ModelConfig cfg = parse_model_config(config_json);
        FdReport report = gradient_audit(cfg, seed);
        if (max_rel_err) *max_rel_err = report.max_rel_err;
        if (report.max_rel_err > tolerance) {
            g_error = "gradient audit: worst relative error " +
                      std::to_string(report.max_rel_err) + " at parameter '" +
                      report.worst_param + "' exceeds tolerance " +
                      std::to_string(tolerance);
            return INNPAR_AUDIT_FAIL;
        }
        return INNPAR_OK;
    });
}

} // extern "C"
