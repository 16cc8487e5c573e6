#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "innpar/autodiff.hpp"
#include "test_support.hpp"

using namespace innpar;
using testsup::random_tensor;

TEST_CASE("backward: d/dw sum(w*w) = 2w") {
    Param<double> w("w", Tensor3<double>(1, 1, 1, {3.0}));
    Tape<double> tape;
    auto wv = tape.param(w);
    auto loss = tape.weighted_l1(tape.mul(wv, wv), tape.input(Tensor3<double>(1, 1, 1)),
                                 {1.0});
    // |w*w - 0| with w=3 gives 9; gradient through abs is sign * 2w = 6
    CHECK(loss->value.at(0, 0, 0) == doctest::Approx(9.0));
    tape.backward(loss);
    CHECK(w.grad.at(0, 0, 0) == doctest::Approx(6.0));
}

TEST_CASE("backward: relu subgradient") {
    Param<double> w("w", Tensor3<double>(1, 1, 2, {-1.0, 2.0}));
    Tape<double> tape;
    auto loss = tape.weighted_l1(tape.relu(tape.param(w)),
                                 tape.input(Tensor3<double>(1, 1, 2)), {2.0});
    // mean-reduced over length 2 with weight 2 -> per-element factor 1
    tape.backward(loss);
    CHECK(w.grad.at(0, 0, 0) == doctest::Approx(0.0));
    CHECK(w.grad.at(0, 0, 1) == doctest::Approx(1.0));
}

TEST_CASE("backward rejects non-scalar terminal") {
    Tape<double> tape;
    auto x = tape.input(Tensor3<double>(1, 1, 3));
    CHECK_THROWS_AS(tape.backward(x), UsageError);
}

TEST_CASE("finite differences: quadratic is exact") {
    Param<double> w("w", Tensor3<double>(1, 1, 1, {3.0}));
    auto f = [&]() { return w.value.at(0, 0, 0) * w.value.at(0, 0, 0); };
    w.grad.at(0, 0, 0) = 6.0; // analytic
    std::vector<Param<double>*> ps{&w};
    auto report = finite_diff_check<double>(f, ps, 1e-5);
    CHECK(report.max_rel_err <= 1e-9);
}

TEST_CASE("gradient audit: conv + relu + exp + squeeze chain") {
    std::mt19937_64 rng(17);
    for (std::uint64_t seedish = 0; seedish < 3; ++seedish) {
        Param<double> w("w", random_tensor<double>(2, 2, 3, rng, 0.4));
        Param<double> b("b", random_tensor<double>(1, 2, 1, rng, 0.1));
        auto x = random_tensor<double>(2, 2, 8, rng);
        auto gt = random_tensor<double>(2, 4, 4, rng);

        std::vector<Param<double>*> ps{&w, &b};
        auto run = [&](bool train) {
            Tape<double> tape;
            auto xin = tape.input(x);
            auto y = tape.conv1d(xin, train ? tape.param(w) : tape.input(w.value),
                                 train ? tape.param(b) : tape.input(b.value));
            y = tape.relu(y);
            y = tape.exp(tape.scale(tape.tanh(y), 0.5));
            y = tape.squeeze(y, 2);
            y = tape.pad_replicate_right(y, 2);
            y = tape.crop_right(y, 2);
            auto loss = tape.weighted_l1(y, tape.input(gt), {1.0, 0.5, 0.25, 0.125});
            if (train) tape.backward(loss);
            return loss->value.at(0, 0, 0);
        };
        w.zero_grad();
        b.zero_grad();
        run(true);
        auto report = finite_diff_check<double>([&]() { return run(false); }, ps, 1e-5);
        CHECK(report.max_rel_err <= 1e-4);
    }
}

TEST_CASE("gradient audit: div, forward_diff, concat and slice") {
    std::mt19937_64 rng(99);
    Param<double> a("a", random_tensor<double>(1, 2, 6, rng));
    Param<double> d("d", random_tensor<double>(1, 2, 6, rng, 0.3));
    auto gt = random_tensor<double>(1, 3, 6, rng);

    std::vector<Param<double>*> ps{&a, &d};
    auto run = [&](bool train) {
        Tape<double> tape;
        auto av = train ? tape.param(a) : tape.input(a.value);
        auto dv = train ? tape.param(d) : tape.input(d.value);
        auto q = tape.div(av, tape.exp(dv));
        auto top = tape.slice_channels(q, 0, 1);
        auto rest = tape.slice_channels(q, 1, 1);
        auto y = tape.concat_channels(tape.concat_channels(top, tape.forward_diff(rest)),
                                      tape.sub(top, rest));
        auto loss = tape.weighted_l1(y, tape.input(gt), {1.0, 1.0, 1.0});
        if (train) tape.backward(loss);
        return loss->value.at(0, 0, 0);
    };
    a.zero_grad();
    d.zero_grad();
    run(true);
    auto report = finite_diff_check<double>([&]() { return run(false); }, ps, 1e-5);
    CHECK(report.max_rel_err <= 1e-4);
}

TEST_CASE("adam single step with bias correction") {
    Param<double> w("w", Tensor3<double>(1, 1, 1, {0.0}));
    w.grad.at(0, 0, 0) = 1.0;
    Adam<double> opt(1e-4);
    std::vector<Param<double>*> ps{&w};
    opt.step(ps);
    // theta = -lr * 1 / (1 + eps)
    CHECK(w.value.at(0, 0, 0) == doctest::Approx(-9.99999995e-5).epsilon(1e-9));
    CHECK(w.grad.at(0, 0, 0) == 0.0);

    // constant gradient keeps driving theta down
    w.grad.at(0, 0, 0) = 1.0;
    opt.step(ps);
    CHECK(w.value.at(0, 0, 0) < -9.99999995e-5);
}

TEST_CASE("adam: zero gradient and zero lr are identities") {
    Param<double> w("w", Tensor3<double>(1, 1, 2, {1.5, -0.5}));
    std::vector<Param<double>*> ps{&w};
    Adam<double> opt(1e-4);
    opt.step(ps); // g = 0
    CHECK(w.value.at(0, 0, 0) == 1.5);
    CHECK(w.value.at(0, 0, 1) == -0.5);

    Adam<double> frozen(0.0);
    w.grad.at(0, 0, 0) = 2.0;
    frozen.step(ps);
    CHECK(w.value.at(0, 0, 0) == 1.5);
}

TEST_CASE("backward accumulates across shared uses") {
    // loss touches w twice: grad must be the sum of both contributions
    Param<double> w("w", Tensor3<double>(1, 1, 1, {2.0}));
    Tape<double> tape;
    auto wv = tape.param(w);
    auto y = tape.add(tape.mul(wv, wv), wv); // w^2 + w = 6 > 0
    auto loss = tape.weighted_l1(y, tape.input(Tensor3<double>(1, 1, 1)), {1.0});
    tape.backward(loss);
    CHECK(w.grad.at(0, 0, 0) == doctest::Approx(5.0)); // 2w + 1
}

TEST_CASE("backward is deterministic for a fixed tape") {
    std::mt19937_64 rng(4);
    Param<double> w("w", random_tensor<double>(2, 2, 3, rng));
    auto x = random_tensor<double>(1, 2, 10, rng);
    auto gt = random_tensor<double>(1, 2, 10, rng);
    Tensor3<double> first(1, 1, 1);
    for (int rep = 0; rep < 2; ++rep) {
        w.zero_grad();
        Tape<double> tape;
        auto y = tape.conv1d(tape.input(x), tape.param(w),
                             tape.input(Tensor3<double>(1, 2, 1)));
        auto loss = tape.weighted_l1(y, tape.input(gt), {1.0, 1.0});
        tape.backward(loss);
        if (rep == 0)
            first = w.grad;
        else
            CHECK(testsup::bitwise_equal(first, w.grad));
    }
}
