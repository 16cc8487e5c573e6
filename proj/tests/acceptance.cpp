// Acceptance gate: one line per criterion, nonzero exit if any fails.
// Training-based criteria run a scaled-down synthetic experiment; expect a
// total runtime in the tens of minutes on a single core.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "innpar/audit.hpp"
#include "innpar/checkpoint.hpp"

using namespace innpar;

namespace {

int g_failures = 0;

void report(int num, const char* name, bool pass, const std::string& detail) {
    std::printf("[%2d] %-22s %s  (%s)\n", num, name, pass ? "pass" : "FAIL",
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.signal_length = 32;
    cfg.num_blocks = 2;
    cfg.mscm_filters = {4, 8, 16};
    return cfg;
}

template <class T>
Tensor3<T> random_tensor(std::size_t b, std::size_t c, std::size_t l,
                         std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Tensor3<T> t(b, c, l);
    for (T& v : t.flat()) v = static_cast<T>(g(rng));
    return t;
}

template <class T>
bool bitwise_equal(const Tensor3<T>& a, const Tensor3<T>& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.data()[i] != b.data()[i]) return false;
    return true;
}

// independent correlation oracle (plain triple loop)
template <class T>
Tensor3<T> conv_oracle(const Tensor3<T>& x, const Tensor3<T>& w,
                       const std::vector<T>& bias) {
    const std::size_t B = x.batch(), C = x.channels(), L = x.length();
    const std::size_t O = w.batch(), k = w.length();
    const auto pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
    Tensor3<T> y(B, O, L);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < L; ++i) {
                T acc = bias[o];
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t j = 0; j < k; ++j) {
                        const auto src = static_cast<std::ptrdiff_t>(i) +
                                         static_cast<std::ptrdiff_t>(j) - pad;
                        if (src >= 0 && src < static_cast<std::ptrdiff_t>(L))
                            acc += w.at(o, c, j) * x.at(b, c, static_cast<std::size_t>(src));
                    }
                y.at(b, o, i) = acc;
            }
    return y;
}

struct SplitCorpus {
    SegmentSet train, val, test;
};

SplitCorpus make_corpus(std::uint64_t seed) {
    auto all = synth_corpus(384, seed, 625);
    SplitCorpus s{all, all, all};
    s.train.segments.assign(all.segments.begin(), all.segments.begin() + 256);
    s.val.segments.assign(all.segments.begin() + 256, all.segments.begin() + 320);
    s.test.segments.assign(all.segments.begin() + 320, all.segments.end());
    return s;
}

char fmtbuf[512];
template <class... A>
std::string fmt(const char* f, A... a) {
    std::snprintf(fmtbuf, sizeof(fmtbuf), f, a...);
    return fmtbuf;
}

// ---- criteria ---------------------------------------------------------------

void c1_invertibility() {
    const auto t0 = std::chrono::steady_clock::now();
    ModelConfig cfg;
    const double worst32 = roundtrip_audit<float>(cfg, 100, 100);
    const double worst64 = roundtrip_audit<double>(cfg, 200, 100);
    const double secs = seconds_since(t0);
    report(1, "invertibility", worst32 <= 1e-3 && worst64 <= 1e-8 && secs < 60.0,
           fmt("100 models each: worst f32 %.2e <= 1e-3, f64 %.2e <= 1e-8, %.1fs < 60s",
               worst32, worst64, secs));
}

void c2_identity_at_zero() {
    ModelConfig cfg;
    InnParModel<float> model(cfg);
    model.init_identity();
    auto corpus = synth_corpus(2, 1, 625);
    std::vector<std::vector<float>> rows{corpus.segments[0].ppg,
                                         corpus.segments[1].ppg};
    Tensor3<float> x = make_model_input<float>(rows);
    Tensor3<float> y = model.forward(x);
    const bool identical = bitwise_equal(x, y);

    Tape<float> tape;
    Var<float> loss =
        compute_loss(tape, tape.input(y), tape.input(x), 1.0f);
    const float lv = loss->value.at(0, 0, 0);
    report(2, "identity at zero", identical && lv == 0.0f,
           fmt("forward bitwise identity: %s, loss vs input: %g",
               identical ? "yes" : "no", static_cast<double>(lv)));
}

void c3_gradient_audit() {
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string worst_param;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        FdReport r = gradient_audit(tiny_config(), seed);
        if (r.max_rel_err > worst) {
            worst = r.max_rel_err;
            worst_param = r.worst_param;
        }
    }
    const double secs = seconds_since(t0);
    report(3, "gradient audit", worst <= 1e-4 && secs < 300.0,
           fmt("3 seeds, worst rel err %.2e <= 1e-4 (%s), %.1fs < 300s", worst,
               worst_param.c_str(), secs));
}

void c4_lossless_rescaling() {
    std::mt19937_64 rng(4);
    bool ok = true;
    for (int trial = 0; trial < 1000 && ok; ++trial) {
        for (std::size_t factor : {std::size_t{2}, std::size_t{5}}) {
            auto a = random_tensor<float>(1 + trial % 3, 2, 10 * factor, rng);
            ok = ok && bitwise_equal(unsqueeze(squeeze(a, factor), factor), a);
            auto b = random_tensor<float>(1 + trial % 2, 2 * factor, 12, rng);
            ok = ok && bitwise_equal(squeeze(unsqueeze(b, factor), factor), b);
        }
    }
    report(4, "lossless rescaling", ok,
           "squeeze/unsqueeze bitwise inverses, factors 2 and 5, 1000 tensors");
}

void c5_orthonormal_init() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
        InnParModel<float> model(ModelConfig{});
        model.init(seed);
        for (auto& ic : model.invconvs()) {
            const auto& w = ic.w.value; // (C, C, 1)
            const std::size_t C = w.batch();
            for (std::size_t i = 0; i < C; ++i)
                for (std::size_t j = 0; j < C; ++j) {
                    double dot = 0.0;
                    for (std::size_t r = 0; r < C; ++r)
                        dot += static_cast<double>(w.at(r, i, 0)) *
                               static_cast<double>(w.at(r, j, 0));
                    worst = std::max(worst, std::abs(dot - (i == j ? 1.0 : 0.0)));
                }
        }
    }
    report(5, "orthonormal init", worst <= 1e-6,
           fmt("max |W^T W - I| = %.2e <= 1e-6 over 25 seeded models", worst));
}

void c6_conv_oracle() {
    std::mt19937_64 rng(6);
    double worst = 0.0;
    for (int draw = 0; draw < 50; ++draw) {
        const std::size_t B = 1 + draw % 3, C = 1 + draw % 4, O = 1 + (draw / 2) % 4;
        const std::size_t k = 1 + 2 * (draw % 4), L = 8 + draw % 40;
        auto x = random_tensor<float>(B, C, L, rng, 0.5);
        auto w = random_tensor<float>(O, C, k, rng, 0.5);
        std::vector<float> bias(O);
        for (auto& v : bias) v = static_cast<float>(0.1 * (draw % 7));
        auto got = conv1d(x, w, bias);
        auto want = conv_oracle(x, w, bias);
        for (std::size_t i = 0; i < got.size(); ++i)
            worst = std::max(worst, std::abs(static_cast<double>(got.flat()[i]) -
                                             static_cast<double>(want.flat()[i])));
    }
    report(6, "conv oracle", worst <= 1e-6,
           fmt("max |gemm - loop| = %.2e <= 1e-6 over 50 shape draws", worst));
}

void c7_synthetic_training() {
    const auto t0 = std::chrono::steady_clock::now();
    auto corpus = make_corpus(7);
    ModelConfig cfg;
    InnParModel<float> model(cfg);
    model.init(7);
    const MetricsReport untrained = evaluate(model, corpus.test);

    TrainConfig tc;
    tc.epochs = 30;
    tc.batch_size = 16;
    tc.lr = 1e-4;
    tc.seed = 7;
    const RunLog log = fit(model, corpus.train, corpus.val, tc);
    const MetricsReport trained = evaluate(model, corpus.test);
    const double secs = seconds_since(t0);

    const double ratio = log.entries.back().train_loss / log.entries.front().train_loss;
    const bool pass = ratio <= 0.5 && trained.sbp_mae_mmhg < untrained.sbp_mae_mmhg &&
                      secs < 900.0;
    report(7, "synthetic training", pass,
           fmt("loss ratio %.3f <= 0.5, SBP MAE %.2f < %.2f untrained, %.0fs < 900s",
               ratio, trained.sbp_mae_mmhg, untrained.sbp_mae_mmhg, secs));
}

void c8_ablation_ordering() {
    int wins = 0;
    std::string detail;
    for (std::uint64_t seed : {7ull, 8ull, 9ull}) {
        auto corpus = make_corpus(seed);
        double mae[3] = {0, 0, 0}; // AE4, AE3, AE1
        for (int variant = 0; variant < 3; ++variant) {
            ModelConfig cfg;
            InnParModel<float> model(cfg);
            model.init(seed);
            TrainConfig tc;
            tc.epochs = 30;
            tc.batch_size = 16;
            tc.lr = 1e-4;
            tc.seed = seed;
            if (variant == 1) tc.ae3_alpha_zero = true;
            if (variant == 2) tc.ae1_duplicate_signal = true;
            fit(model, corpus.train, corpus.val, tc);
            mae[variant] =
                evaluate(model, corpus.test, tc.ae1_duplicate_signal).waveform_mae;
        }
        const bool ok = mae[0] <= mae[1] && mae[0] <= mae[2];
        if (ok) ++wins;
        detail += fmt("s%llu:%.4f/%.4f/%.4f%s ", static_cast<unsigned long long>(seed),
                      mae[0], mae[1], mae[2], ok ? "" : "(!)");
    }
    report(8, "ablation ordering", wins >= 2,
           fmt("AE4/AE3/AE1 waveform MAE, majority %d/3: %s", wins, detail.c_str()));
}

void c9_metric_correctness() {
    std::vector<double> pred{1, 1, 1, 1}, gt{0, 2, 0, 2};
    const double m = mae(pred, gt);
    const double n = nrmse(pred, gt);

    std::vector<float> abp(625);
    for (std::size_t i = 0; i < abp.size(); ++i)
        abp[i] = static_cast<float>(
            100.0 + 20.0 * std::sin(2.0 * M_PI * 1.2 * (static_cast<double>(i) / 125.0)));
    const auto [sbp, dbp] = extract_sbp_dbp(abp, 125.0);
    const bool pass = m == 1.0 && n == 0.5 && std::abs(sbp - 120.0) <= 0.1 &&
                      std::abs(dbp - 80.0) <= 0.1;
    report(9, "metric correctness", pass,
           fmt("MAE %g, NRMSE %g, sinusoid SBP %.3f DBP %.3f", m, n, sbp, dbp));
}

void c10_format_roundtrips() {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "innpar_acceptance";
    fs::create_directories(dir);

    // checkpoint: load(save(model)) bitwise, second save byte-identical
    InnParModel<float> model(tiny_config());
    model.init(10);
    const std::string ck = (dir / "m.ckpt").string();
    save_checkpoint(model, ck);
    auto loaded = load_checkpoint<float>(ck);
    bool ok = true;
    auto pa = model.params();
    auto pb = loaded.params();
    for (std::size_t i = 0; i < pa.size(); ++i)
        ok = ok && bitwise_equal(pa[i]->value, pb[i]->value);
    const std::string ck2 = (dir / "m2.ckpt").string();
    save_checkpoint(loaded, ck2);
    auto slurp = [](const std::string& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), {});
    };
    ok = ok && slurp(ck) == slurp(ck2);

    // segments: write/read bitwise
    auto set = synth_corpus(4, 10, 128);
    const std::string sg = (dir / "d.bin").string();
    write_segments(sg, set);
    auto back = read_segments(sg);
    for (std::size_t s = 0; s < set.segments.size(); ++s)
        ok = ok && back.segments[s].ppg == set.segments[s].ppg &&
             back.segments[s].abp_norm == set.segments[s].abp_norm;

    // corrupted magic is rejected by the CLI with exit code 2
    auto corrupt = [&](const std::string& src, const char* dst) {
        const std::string out = (dir / dst).string();
        fs::copy_file(src, out, fs::copy_options::overwrite_existing);
        std::fstream f(out, std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXXXXXX", 8);
        return out;
    };
    const std::string bad_ck = corrupt(ck, "bad.ckpt");
    const std::string bad_sg = corrupt(sg, "bad.bin");
    auto cli_exit = [&](const std::string& args) {
        const std::string cmd = std::string(INNPAR_CLI_PATH) + " " + args +
                                " >/dev/null 2>&1";
        const int rc = std::system(cmd.c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    };
    const int e1 = cli_exit("eval --checkpoint " + bad_ck + " --synth 4");
    const int e2 =
        cli_exit("train --data " + bad_sg + " --out " + (dir / "run").string());
    ok = ok && e1 == 2 && e2 == 2;

    report(10, "format round-trips", ok,
           fmt("bitwise checkpoint+segments, corrupt magic exits %d/%d (want 2/2)", e1,
               e2));
    fs::remove_all(dir);
}

void c11_config_fidelity() {
    ModelConfig cfg;
    TrainConfig tc;
    const bool pass = cfg.num_blocks == 4 &&
                      cfg.mscm_filters == std::vector<std::size_t>{16, 32, 64} &&
                      cfg.kernel == 5 && cfg.signal_length == 625 && tc.alpha == 1.0 &&
                      tc.lr == 1e-4 && tc.batch_size == 128 && tc.epochs == 500;
    InnParModel<float> model(cfg);
    const std::size_t params = model.param_count();
    report(11, "config fidelity", pass,
           fmt("4 blocks, [16,32,64], k5, alpha 1, lr 1e-4, batch 128, epochs 500, "
               "L625; %zu params vs 372K reference (+%.2f%%)",
               params, 100.0 * (static_cast<double>(params) - 372000.0) / 372000.0));
}

} // namespace

int main() {
    c1_invertibility();
    c2_identity_at_zero();
    c3_gradient_audit();
    c4_lossless_rescaling();
    c5_orthonormal_init();
    c6_conv_oracle();
    c7_synthetic_training();
    c8_ablation_ordering();
    c9_metric_correctness();
    c10_format_roundtrips();
    c11_config_fidelity();

    if (g_failures == 0) {
        std::printf("all 11 criteria passed\n");
        return 0;
    }
    std::printf("%d criteria FAILED\n", g_failures);
    return 1;
}
