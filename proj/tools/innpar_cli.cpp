// Command-line front end. Talks to the core exclusively through the C API in
// innpar.h; file plumbing (CSV rows, config merging, report writing) lives
// here.
//
// Exit codes: 0 success, 1 audit failure, 2 input/config error, 3 numeric
// abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "innpar.h"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitAudit = 1;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

int exit_code_for(innpar_status s) {
    switch (s) {
        case INNPAR_OK: return kExitOk;
        case INNPAR_AUDIT_FAIL: return kExitAudit;
        case INNPAR_ENUMERIC: return kExitNumeric;
        default: return kExitInput;
    }
}

int fail(innpar_status s) {
    std::fprintf(stderr, "error: %s\n", innpar_last_error());
    return exit_code_for(s);
}

int fail_input(const std::string& msg) {
    std::fprintf(stderr, "error: %s\n", msg.c_str());
    return kExitInput;
}

struct ModelDeleter {
    void operator()(innpar_model* m) const { innpar_model_free(m); }
};
struct DatasetDeleter {
    void operator()(innpar_dataset* d) const { innpar_dataset_free(d); }
};
using ModelPtr = std::unique_ptr<innpar_model, ModelDeleter>;
using DatasetPtr = std::unique_ptr<innpar_dataset, DatasetDeleter>;

// ---- config handling -----------------------------------------------------

// Merged run configuration: {"model": {...}, "train": {...}}. File values
// are overlaid on defaults, dotted-path flags win over the file.
struct RunConfig {
    json root = {{"model", json::object()}, {"train", json::object()}};

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw CLI::ValidationError("--config", "cannot open " + path);
        json j;
        try {
            in >> j;
        } catch (const json::parse_error& e) {
            throw CLI::ValidationError("--config", std::string("bad JSON: ") + e.what());
        }
        for (auto& [k, v] : j.items()) {
            if (k != "model" && k != "train")
                throw CLI::ValidationError("--config",
                                           "unknown top-level key '" + k + "'");
            for (auto& [k2, v2] : v.items()) root[k][k2] = v2;
        }
    }

    void set(const std::string& dotted, const json& value) {
        const auto dot = dotted.find('.');
        root[dotted.substr(0, dot)][dotted.substr(dot + 1)] = value;
    }

    std::string model_json() const { return root.at("model").dump(); }
    std::string train_json() const { return root.at("train").dump(); }
};

// Registers --model.X / --train.Y flags on a subcommand and applies the
// parsed values onto cfg after the config file has been read.
struct ConfigFlags {
    std::vector<std::pair<std::string, std::string>> raw; // dotted path -> text

    void add_to(CLI::App* cmd) {
        static const char* size_keys[] = {
            "model.num_blocks", "model.channels",      "model.kernel",
            "model.scales",     "model.squeeze_factor", "model.signal_length",
            "train.epochs",     "train.batch_size",     "train.seed",
            "train.checkpoint_every"};
        static const char* real_keys[] = {"model.clamp_c", "train.lr", "train.alpha"};
        static const char* bool_keys[] = {"model.clamp_enabled",
                                          "train.ae1_duplicate_signal",
                                          "train.ae2_single_scale",
                                          "train.ae3_alpha_zero",
                                          "train.supervise_recomputed_gradient"};
        auto capture = [this](const std::string& key) {
            return [this, key](const std::string& v) {
                raw.emplace_back(key, v);
                return true;
            };
        };
        for (const char* k : size_keys)
            cmd->add_option_function<std::string>("--" + std::string(k), capture(k))
                ->group("Config overrides");
        for (const char* k : real_keys)
            cmd->add_option_function<std::string>("--" + std::string(k), capture(k))
                ->group("Config overrides");
        for (const char* k : bool_keys)
            cmd->add_option_function<std::string>("--" + std::string(k), capture(k))
                ->group("Config overrides");
        cmd->add_option_function<std::string>(
               "--model.mscm_filters",
               [this](const std::string& v) {
                   raw.emplace_back("model.mscm_filters", v);
                   return true;
               },
               "comma-separated per-scale filter counts")
            ->group("Config overrides");
        cmd->add_option_function<std::string>(
               "--model.split",
               [this](const std::string& v) {
                   raw.emplace_back("model.split", v);
                   return true;
               },
               "comma-separated (c1,c2) channel split")
            ->group("Config overrides");
    }

    void apply(RunConfig& cfg) const {
        for (const auto& [key, text] : raw) {
            if (key == "model.mscm_filters" || key == "model.split") {
                json arr = json::array();
                std::stringstream ss(text);
                std::string cell;
                while (std::getline(ss, cell, ','))
                    arr.push_back(static_cast<std::size_t>(std::stoull(cell)));
                cfg.set(key, arr);
            } else if (text == "true" || text == "false") {
                cfg.set(key, text == "true");
            } else if (text.find_first_of(".eE") != std::string::npos) {
                cfg.set(key, std::stod(text));
            } else {
                cfg.set(key, static_cast<std::uint64_t>(std::stoull(text)));
            }
        }
    }
};

// ---- data loading ----------------------------------------------------------

DatasetPtr load_dataset(const std::string& path, std::size_t csv_length) {
    if (!std::filesystem::exists(path)) {
        std::fprintf(stderr, "error: data file not found: %s\n", path.c_str());
        return nullptr;
    }
    DatasetPtr d(path.size() >= 4 && path.substr(path.size() - 4) == ".csv"
                     ? innpar_dataset_read_csv(path.c_str(), csv_length)
                     : innpar_dataset_read(path.c_str()));
    if (!d) std::fprintf(stderr, "error: %s\n", innpar_last_error());
    return d;
}

// CSV of raw rows (no normalization); returns false on malformed content.
bool read_rows(const std::string& path, std::vector<std::vector<float>>& rows,
               std::string& err) {
    std::ifstream in(path);
    if (!in) {
        err = "cannot open " + path;
        return false;
    }
    std::string line;
    std::size_t rownum = 0;
    while (std::getline(in, line)) {
        ++rownum;
        if (line.empty() || line[0] == '#') continue;
        std::vector<float> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                std::size_t pos = 0;
                row.push_back(std::stof(cell, &pos));
                while (pos < cell.size() &&
                       std::isspace(static_cast<unsigned char>(cell[pos])))
                    ++pos;
                if (pos != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                err = "non-numeric cell '" + cell + "' in row " + std::to_string(rownum);
                return false;
            }
        }
        if (!rows.empty() && row.size() != rows.front().size()) {
            err = "row " + std::to_string(rownum) + " has " +
                  std::to_string(row.size()) + " values, expected " +
                  std::to_string(rows.front().size());
            return false;
        }
        rows.push_back(std::move(row));
    }
    return true;
}

void write_json_file(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    out << j.dump(2) << "\n";
}

// ---- subcommands -----------------------------------------------------------

struct TrainArgs {
    std::string data, config, out = "out";
    std::size_t synth_n = 0;
    std::uint64_t seed = 0;
    ConfigFlags flags;
};

int cmd_train(const TrainArgs& a) {
    RunConfig cfg;
    if (!a.config.empty()) cfg.load_file(a.config);
    a.flags.apply(cfg);
    cfg.set("train.seed", a.seed);

    // data: either a file or an on-the-fly synthetic corpus split 80/20
    DatasetPtr train_set, val_set;
    const std::size_t length =
        cfg.root["model"].value("signal_length", std::size_t{625});
    if (a.synth_n > 0) {
        DatasetPtr all(innpar_dataset_synth(a.synth_n, a.seed, length));
        if (!all) return fail(INNPAR_EINVAL);
        const std::size_t n_val = std::max<std::size_t>(1, a.synth_n / 5);
        if (n_val >= a.synth_n) return fail_input("--synth needs at least 2 segments");
        const std::size_t n_train = a.synth_n - n_val;
        train_set.reset(innpar_dataset_slice(all.get(), 0, n_train));
        val_set.reset(innpar_dataset_slice(all.get(), n_train, n_val));
        if (!train_set || !val_set) return fail(INNPAR_EINVAL);
    } else if (!a.data.empty()) {
        DatasetPtr all = load_dataset(a.data, length);
        if (!all) return kExitInput;
        const std::size_t n = innpar_dataset_size(all.get());
        if (n < 2) return fail_input("need at least 2 segments to split train/val");
        const std::size_t n_val = std::max<std::size_t>(1, n / 5);
        train_set.reset(innpar_dataset_slice(all.get(), 0, n - n_val));
        val_set.reset(innpar_dataset_slice(all.get(), n - n_val, n_val));
        if (!train_set || !val_set) return fail(INNPAR_EINVAL);
    } else {
        return fail_input("one of --data or --synth is required");
    }

    ModelPtr model(innpar_model_create(cfg.model_json().c_str(), a.seed));
    if (!model) return fail(INNPAR_EINVAL);

    std::filesystem::create_directories(a.out);
    write_json_file(a.out + "/config.json", cfg.root); // provenance echo
    const innpar_status s =
        innpar_fit(model.get(), train_set.get(), val_set.get(),
                   cfg.train_json().c_str(), a.out.c_str(),
                   (a.out + "/runlog.jsonl").c_str());
    if (s != INNPAR_OK) return fail(s);
    std::printf("trained model written to %s/final.ckpt\n", a.out.c_str());
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint, data, report;
    std::size_t synth_n = 0;
    std::uint64_t seed = 0;
    bool ae1 = false;
};

int cmd_eval(const EvalArgs& a) {
    ModelPtr model(innpar_model_load(a.checkpoint.c_str()));
    if (!model) return fail(INNPAR_EINVAL);
    DatasetPtr data;
    if (a.synth_n > 0) {
        data.reset(innpar_dataset_synth(a.synth_n, a.seed,
                                        innpar_model_signal_length(model.get())));
    } else if (!a.data.empty()) {
        data = load_dataset(a.data, innpar_model_signal_length(model.get()));
    } else {
        return fail_input("one of --data or --synth is required");
    }
    if (!data) return data ? kExitOk : fail(INNPAR_EINVAL);

    char* report = innpar_evaluate_json(model.get(), data.get(), a.ae1 ? 1 : 0);
    if (!report) return fail(INNPAR_EINVAL);
    const std::string text(report);
    innpar_string_free(report);
    if (!a.report.empty()) write_json_file(a.report, json::parse(text));
    std::printf("%s\n", json::parse(text).dump(2).c_str());
    return kExitOk;
}

struct AuditArgs {
    std::string mode, checkpoint, config;
    std::uint64_t seed = 0;
    int trials = 100;
    double tolerance = -1.0; // mode-dependent default
    ConfigFlags flags;
};

int cmd_audit(const AuditArgs& a) {
    RunConfig cfg;
    if (!a.config.empty()) cfg.load_file(a.config);
    a.flags.apply(cfg);
    std::string model_json = cfg.model_json();
    if (!a.checkpoint.empty()) {
        ModelPtr m(innpar_model_load(a.checkpoint.c_str()));
        if (!m) return fail(INNPAR_EINVAL);
        char* j = innpar_model_config_json(m.get());
        if (!j) return fail(INNPAR_EINVAL);
        model_json = j;
        innpar_string_free(j);
    }

    if (a.mode == "roundtrip") {
        const double tol = a.tolerance > 0 ? a.tolerance : 1e-3;
        double worst = 0.0;
        const innpar_status s = innpar_audit_roundtrip(model_json.c_str(), a.seed,
                                                       a.trials, tol, &worst);
        std::printf("roundtrip: worst |x - inverse(forward(x))| = %.3e over %d models "
                    "(tolerance %.1e): %s\n",
                    worst, a.trials, tol, s == INNPAR_OK ? "pass" : "FAIL");
        return s == INNPAR_OK ? kExitOk : fail(s);
    }
    if (a.mode == "gradcheck") {
        const double tol = a.tolerance > 0 ? a.tolerance : 1e-4;
        // compact geometry by default: exhaustive finite differences on the
        // full-size model are not a desk-scale operation
        if (a.config.empty() && a.checkpoint.empty() && a.flags.raw.empty())
            model_json = R"({"signal_length":32,"num_blocks":2,"mscm_filters":[4,8,16]})";
        double worst = 0.0;
        const innpar_status s =
            innpar_audit_gradcheck(model_json.c_str(), a.seed, tol, &worst);
        std::printf("gradcheck: max relative error = %.3e (tolerance %.1e): %s\n",
                    worst, tol, s == INNPAR_OK ? "pass" : "FAIL");
        return s == INNPAR_OK ? kExitOk : fail(s);
    }
    if (a.mode == "flops") {
        ModelPtr m(a.checkpoint.empty()
                       ? innpar_model_create(model_json.c_str(), a.seed)
                       : innpar_model_load(a.checkpoint.c_str()));
        if (!m) return fail(INNPAR_EINVAL);
        const size_t params = innpar_model_param_count(m.get());
        const uint64_t macs = innpar_model_mac_count(m.get());
        std::printf("parameters: %zu (reference implementation reports ~372K; "
                    "deviation stems from unstated sub-network internals)\n",
                    params);
        std::printf("MACs per forward pass at length %zu: %llu\n",
                    innpar_model_signal_length(m.get()),
                    static_cast<unsigned long long>(macs));
        return kExitOk;
    }
    return fail_input("--mode must be roundtrip, gradcheck, or flops");
}

struct ReconstructArgs {
    std::string checkpoint, in, out, direction = "forward", sidecar;
};

int cmd_reconstruct(const ReconstructArgs& a) {
    ModelPtr model(innpar_model_load(a.checkpoint.c_str()));
    if (!model) return fail(INNPAR_EINVAL);
    const std::size_t L = innpar_model_signal_length(model.get());
    const std::size_t C = innpar_model_channels(model.get());
    if (C != 2) return fail_input("reconstruct supports 2-channel models only");

    std::vector<std::vector<float>> rows;
    std::string err;
    if (!read_rows(a.in, rows, err)) return fail_input(err);
    if (rows.empty()) return fail_input("no data rows in " + a.in);

    std::ofstream out(a.out, std::ios::trunc);
    if (!out) return fail_input("cannot open output " + a.out);
    out.precision(9);
    json sidecar = json::array();

    std::vector<float> buf(2 * L), res(2 * L);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (a.direction == "forward") {
            // input: L PPG samples; emit L mmHg + L normalized + L gradient-channel
            if (row.size() != L)
                return fail_input("row " + std::to_string(r + 1) + " has " +
                                  std::to_string(row.size()) + " values, expected " +
                                  std::to_string(L));
            std::copy(row.begin(), row.end(), buf.begin());
            innpar_status s = innpar_grad_channel(row.data(), L, buf.data() + L);
            if (s != INNPAR_OK) return fail(s);
            s = innpar_model_forward(model.get(), buf.data(), 2, L, res.data());
            if (s != INNPAR_OK) return fail(s);
            for (std::size_t i = 0; i < L; ++i)
                out << (i ? "," : "") << innpar_denormalize_abp(res[i]);
            for (std::size_t i = 0; i < 2 * L; ++i) out << "," << res[i];
            out << "\n";
            std::vector<float> mmhg(L);
            for (std::size_t i = 0; i < L; ++i)
                mmhg[i] = static_cast<float>(innpar_denormalize_abp(res[i]));
            double sbp = 0, dbp = 0;
            s = innpar_extract_sbp_dbp(mmhg.data(), L,
                                       125.0, &sbp, &dbp);
            if (s != INNPAR_OK) return fail(s);
            sidecar.push_back({{"sbp", sbp}, {"dbp", dbp}});
        } else if (a.direction == "inverse") {
            // input: both normalized output channels (the last 2L columns of a
            // forward row); emit the recovered L PPG samples
            if (row.size() != 2 * L && row.size() != 3 * L)
                return fail_input("row " + std::to_string(r + 1) + " has " +
                                  std::to_string(row.size()) + " values, expected " +
                                  std::to_string(2 * L) + " or " +
                                  std::to_string(3 * L));
            std::copy(row.end() - static_cast<std::ptrdiff_t>(2 * L), row.end(),
                      buf.begin());
            const innpar_status s =
                innpar_model_inverse(model.get(), buf.data(), 2, L, res.data());
            if (s != INNPAR_OK) return fail(s);
            for (std::size_t i = 0; i < L; ++i) out << (i ? "," : "") << res[i];
            out << "\n";
        } else {
            return fail_input("--direction must be forward or inverse");
        }
    }
    if (a.direction == "forward") {
        const std::string side = a.sidecar.empty() ? a.out + ".sbp.json" : a.sidecar;
        write_json_file(side, sidecar);
    }
    return kExitOk;
}

struct SynthArgs {
    std::size_t n = 0;
    std::uint64_t seed = 0;
    std::size_t length = 625;
    std::string out;
};

int cmd_synth(const SynthArgs& a) {
    DatasetPtr d(innpar_dataset_synth(a.n, a.seed, a.length));
    if (!d) return fail(INNPAR_EINVAL);
    const innpar_status s = innpar_dataset_write(d.get(), a.out.c_str());
    if (s != INNPAR_OK) return fail(s);
    std::printf("wrote %zu segments of length %zu to %s\n", a.n, a.length,
                a.out.c_str());
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Invertible PPG-to-ABP reconstruction"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "train a model");
    train->add_option("--data", train_args.data, "segment file (.bin or .csv)");
    train->add_option("--synth", train_args.synth_n, "generate a synthetic corpus");
    train->add_option("--seed", train_args.seed, "corpus and training seed");
    train->add_option("--config", train_args.config, "JSON config file");
    train->add_option("--out", train_args.out, "output directory");
    train_args.flags.add_to(train);

    EvalArgs eval_args;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    eval->add_option("--checkpoint", eval_args.checkpoint)->required();
    eval->add_option("--data", eval_args.data, "segment file (.bin or .csv)");
    eval->add_option("--synth", eval_args.synth_n, "synthetic test corpus size");
    eval->add_option("--seed", eval_args.seed, "synthetic corpus seed");
    eval->add_option("--report", eval_args.report, "metrics JSON output path");
    eval->add_flag("--ae1", eval_args.ae1, "duplicate signal channel at input");

    AuditArgs audit_args;
    auto* audit = app.add_subcommand("audit", "invertibility / gradient / cost audits");
    audit->add_option("--mode", audit_args.mode, "roundtrip | gradcheck | flops")
        ->required();
    audit->add_option("--checkpoint", audit_args.checkpoint);
    audit->add_option("--config", audit_args.config, "JSON config file");
    audit->add_option("--seed", audit_args.seed);
    audit->add_option("--trials", audit_args.trials, "roundtrip model count");
    audit->add_option("--tolerance", audit_args.tolerance);
    audit_args.flags.add_to(audit);

    ReconstructArgs rec_args;
    auto* rec = app.add_subcommand("reconstruct", "map signals through the model");
    rec->add_option("--checkpoint", rec_args.checkpoint)->required();
    rec->add_option("--in", rec_args.in, "input CSV")->required();
    rec->add_option("--out", rec_args.out, "output CSV")->required();
    rec->add_option("--direction", rec_args.direction, "forward | inverse");
    rec->add_option("--sidecar", rec_args.sidecar, "SBP/DBP JSON path (forward)");

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "write a synthetic corpus");
    synth->add_option("--n", synth_args.n)->required();
    synth->add_option("--seed", synth_args.seed);
    synth->add_option("--length", synth_args.length);
    synth->add_option("--out", synth_args.out)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitInput;
    }

    try {
        if (app.got_subcommand(train)) return cmd_train(train_args);
        if (app.got_subcommand(eval)) return cmd_eval(eval_args);
        if (app.got_subcommand(audit)) return cmd_audit(audit_args);
        if (app.got_subcommand(rec)) return cmd_reconstruct(rec_args);
        if (app.got_subcommand(synth)) return cmd_synth(synth_args);
    } catch (const std::exception& e) {
        return fail_input(e.what());
    }
    return kExitInput;
}
