#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

// Exercises the shared-library boundary strictly through the C header.
#include "innpar.h"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace {

const char* kTinyConfig =
    R"({"signal_length":64,"num_blocks":2,"mscm_filters":[4,8,16]})";

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("innpar_capi_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

} // namespace

TEST_CASE("model lifecycle, config echo, parameter counts") {
    innpar_model* m = innpar_model_create("{}", 1);
    REQUIRE(m != nullptr);
    CHECK(innpar_model_signal_length(m) == 625);
    CHECK(innpar_model_channels(m) == 2);
    CHECK(innpar_model_param_count(m) == 372316); // ~372K reference figure
    CHECK(innpar_model_mac_count(m) > 0);

    char* cfg = innpar_model_config_json(m);
    REQUIRE(cfg != nullptr);
    auto j = nlohmann::json::parse(cfg);
    innpar_string_free(cfg);
    CHECK(j["num_blocks"] == 4);
    CHECK(j["mscm_filters"] == nlohmann::json({16, 32, 64}));
    CHECK(j["kernel"] == 5);
    CHECK(j["signal_length"] == 625);
    innpar_model_free(m);
}

TEST_CASE("bad configs and missing files produce errors, not crashes") {
    CHECK(innpar_model_create("{\"num_blocks\":0}", 1) == nullptr);
    CHECK(std::strlen(innpar_last_error()) > 0);
    CHECK(innpar_model_create("{\"no_such_key\":3}", 1) == nullptr);
    CHECK(std::string(innpar_last_error()).find("no_such_key") != std::string::npos);
    CHECK(innpar_model_create("not json", 1) == nullptr);
    CHECK(innpar_model_load("/nonexistent/path.ckpt") == nullptr);
    CHECK(innpar_dataset_read("/nonexistent/data.bin") == nullptr);
    CHECK(innpar_dataset_synth(0, 1, 64) == nullptr);
}

TEST_CASE("identity model maps buffers to themselves") {
    innpar_model* m = innpar_model_create_identity(kTinyConfig);
    REQUIRE(m != nullptr);
    const size_t L = 64;
    std::vector<float> in(2 * L), out(2 * L, 0.0f);
    for (size_t i = 0; i < in.size(); ++i)
        in[i] = std::sin(0.1f * static_cast<float>(i));
    REQUIRE(innpar_model_forward(m, in.data(), 2, L, out.data()) == INNPAR_OK);
    CHECK(in == out);
    REQUIRE(innpar_model_inverse(m, in.data(), 2, L, out.data()) == INNPAR_OK);
    CHECK(in == out);
    innpar_model_free(m);
}

TEST_CASE("forward/inverse round trip through the C boundary") {
    innpar_model* m = innpar_model_create(kTinyConfig, 7);
    REQUIRE(m != nullptr);
    const size_t L = 64;
    std::vector<float> x(2 * L), y(2 * L), back(2 * L);
    for (size_t i = 0; i < x.size(); ++i)
        x[i] = std::sin(0.37f * static_cast<float>(i)) * 0.8f;
    REQUIRE(innpar_model_forward(m, x.data(), 2, L, y.data()) == INNPAR_OK);
    REQUIRE(innpar_model_inverse(m, y.data(), 2, L, back.data()) == INNPAR_OK);
    float worst = 0.0f;
    for (size_t i = 0; i < x.size(); ++i) worst = std::max(worst, std::abs(x[i] - back[i]));
    CHECK(worst <= 1e-3f);

    // shape violations are reported, not UB
    CHECK(innpar_model_forward(m, x.data(), 2, 32, y.data()) == INNPAR_EINVAL);
    CHECK(innpar_model_forward(m, x.data(), 3, L, y.data()) == INNPAR_EINVAL);
    innpar_model_free(m);
}

TEST_CASE("save and load reproduce the model bitwise") {
    TempDir dir;
    innpar_model* m = innpar_model_create(kTinyConfig, 11);
    REQUIRE(m != nullptr);
    REQUIRE(innpar_model_save(m, dir.file("m.ckpt").c_str()) == INNPAR_OK);
    innpar_model* m2 = innpar_model_load(dir.file("m.ckpt").c_str());
    REQUIRE(m2 != nullptr);

    const size_t L = 64;
    std::vector<float> x(2 * L), y1(2 * L), y2(2 * L);
    for (size_t i = 0; i < x.size(); ++i) x[i] = 0.01f * static_cast<float>(i % 37);
    REQUIRE(innpar_model_forward(m, x.data(), 2, L, y1.data()) == INNPAR_OK);
    REQUIRE(innpar_model_forward(m2, x.data(), 2, L, y2.data()) == INNPAR_OK);
    CHECK(y1 == y2);
    innpar_model_free(m);
    innpar_model_free(m2);
}

TEST_CASE("datasets: synth, io, slice, row access") {
    TempDir dir;
    innpar_dataset* d = innpar_dataset_synth(6, 42, 128);
    REQUIRE(d != nullptr);
    CHECK(innpar_dataset_size(d) == 6);
    CHECK(innpar_dataset_length(d) == 128);
    CHECK(innpar_dataset_sample_rate(d) == doctest::Approx(125.0));

    REQUIRE(innpar_dataset_write(d, dir.file("d.bin").c_str()) == INNPAR_OK);
    innpar_dataset* d2 = innpar_dataset_read(dir.file("d.bin").c_str());
    REQUIRE(d2 != nullptr);
    std::vector<float> a(128), b(128);
    REQUIRE(innpar_dataset_get(d, 3, a.data(), nullptr) == INNPAR_OK);
    REQUIRE(innpar_dataset_get(d2, 3, b.data(), nullptr) == INNPAR_OK);
    CHECK(a == b);

    innpar_dataset* s = innpar_dataset_slice(d, 2, 3);
    REQUIRE(s != nullptr);
    CHECK(innpar_dataset_size(s) == 3);
    REQUIRE(innpar_dataset_get(s, 0, b.data(), nullptr) == INNPAR_OK);
    REQUIRE(innpar_dataset_get(d, 2, a.data(), nullptr) == INNPAR_OK);
    CHECK(a == b);
    CHECK(innpar_dataset_slice(d, 5, 4) == nullptr);
    CHECK(innpar_dataset_get(d, 99, a.data(), nullptr) == INNPAR_EINVAL);

    innpar_dataset_free(s);
    innpar_dataset_free(d2);
    innpar_dataset_free(d);
}

TEST_CASE("signal helpers mirror the library semantics") {
    const float x[4] = {1, 3, 6, 10};
    float g[4];
    REQUIRE(innpar_grad_channel(x, 4, g) == INNPAR_OK);
    CHECK(g[0] == 2);
    CHECK(g[1] == 3);
    CHECK(g[2] == 4);
    CHECK(g[3] == 4);

    CHECK(innpar_normalize_abp(20.0) == doctest::Approx(0.0));
    CHECK(innpar_normalize_abp(200.0) == doctest::Approx(1.0));
    CHECK(innpar_denormalize_abp(0.5) == doctest::Approx(110.0));

    std::vector<float> abp(625);
    for (size_t i = 0; i < abp.size(); ++i)
        abp[i] = static_cast<float>(
            100.0 + 20.0 * std::sin(2.0 * M_PI * 1.2 * (static_cast<double>(i) / 125.0)));
    double sbp = 0, dbp = 0;
    REQUIRE(innpar_extract_sbp_dbp(abp.data(), abp.size(), 125.0, &sbp, &dbp) ==
            INNPAR_OK);
    CHECK(std::abs(sbp - 120.0) <= 0.1);
    CHECK(std::abs(dbp - 80.0) <= 0.1);
}

TEST_CASE("fit and evaluate through the C API") {
    TempDir dir;
    const char* cfg = R"({"signal_length":250,"num_blocks":2,"mscm_filters":[4,8,16]})";
    innpar_model* m = innpar_model_create(cfg, 3);
    REQUIRE(m != nullptr);
    innpar_dataset* all = innpar_dataset_synth(10, 5, 250);
    REQUIRE(all != nullptr);
    innpar_dataset* train = innpar_dataset_slice(all, 0, 8);
    innpar_dataset* val = innpar_dataset_slice(all, 8, 2);
    REQUIRE(train != nullptr);
    REQUIRE(val != nullptr);

    const char* tc = R"({"epochs":2,"batch_size":4,"lr":1e-4})";
    REQUIRE(innpar_fit(m, train, val, tc, dir.path.string().c_str(),
                       dir.file("log.jsonl").c_str()) == INNPAR_OK);
    CHECK(std::filesystem::exists(dir.file("final.ckpt")));
    CHECK(std::filesystem::exists(dir.file("log.jsonl")));

    char* rep = innpar_evaluate_json(m, val, 0);
    REQUIRE(rep != nullptr);
    auto j = nlohmann::json::parse(rep);
    innpar_string_free(rep);
    CHECK(j["n_segments"] == 2);
    CHECK(j["waveform"]["mae"].get<double>() > 0.0);
    CHECK(std::isfinite(j["sbp_mae"].get<double>()));

    innpar_dataset_free(val);
    innpar_dataset_free(train);
    innpar_dataset_free(all);
    innpar_model_free(m);
}

TEST_CASE("audits through the C API") {
    double worst = 0.0;
    CHECK(innpar_audit_roundtrip(kTinyConfig, 5, 5, 1e-3, &worst) == INNPAR_OK);
    CHECK(worst <= 1e-3);
    // impossible tolerance flags as audit failure, not success or crash
    CHECK(innpar_audit_roundtrip(kTinyConfig, 5, 2, 1e-18, &worst) ==
          INNPAR_AUDIT_FAIL);

    double rel = 0.0;
    const char* grad_cfg = R"({"signal_length":32,"num_blocks":2,"mscm_filters":[4,8,16]})";
    CHECK(innpar_audit_gradcheck(grad_cfg, 1, 1e-4, &rel) == INNPAR_OK);
    CHECK(rel <= 1e-4);
}
