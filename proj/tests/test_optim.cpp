#include <doctest.h>

#include <cmath>
#include <vector>

#include "dsa/optim.hpp"
#include "test_support.hpp"

using dsa::Index;
using dsa::Tensor;

TEST_SUITE("optim") {

TEST_CASE("adam null update and first-step magnitude") {
    auto theta = Tensor<double>::vector({1.0}, true);
    dsa::Adam<double> opt({theta});

    theta.grad()[0] = 0.0;
    opt.step();
    CHECK(theta.vec()(0) == 1.0);

    // hand-executed first step with g=1: mhat=1, vhat=1, delta ~= -lr
    auto t2 = Tensor<double>::vector({1.0}, true);
    dsa::Adam<double> opt2({t2});
    t2.grad()[0] = 1.0;
    opt2.step();
    const double m = 0.1, v = 0.001;
    const double mhat = m / (1 - 0.9), vhat = v / (1 - 0.999);
    const double want = 1.0 - 0.001 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(t2.vec()(0) == doctest::Approx(want).epsilon(1e-15));
    CHECK(std::abs((t2.vec()(0) - 1.0) + 0.001) < 1e-9);

    // two identical steps do not grow the step size
    const double delta1 = 1.0 - t2.vec()(0);
    t2.grad()[0] = 1.0;
    opt2.step();
    const double delta2 = (1.0 - delta1) - t2.vec()(0);
    CHECK(std::abs(delta2) <= std::abs(delta1) * (1.0 + 1e-6));
}

TEST_CASE("adam rejects non-finite gradients without touching parameters") {
    auto theta = Tensor<double>::vector({2.0, 3.0}, true);
    dsa::Adam<double> opt({theta});
    theta.grad()[0] = 1.0;
    theta.grad()[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(opt.step(), dsa::NumericError);
    CHECK(theta.vec()(0) == 2.0);
    CHECK(theta.vec()(1) == 3.0);
}

TEST_CASE("adam applies l2 as gradient decay") {
    auto theta = Tensor<double>::vector({10.0}, true);
    dsa::AdamOptions<double> opts;
    opts.l2 = 1e-5;
    dsa::Adam<double> opt({theta}, opts);
    theta.grad()[0] = 0.0;  // pure decay: effective gradient = l2 * theta > 0
    opt.step();
    CHECK(theta.vec()(0) < 10.0);
}

TEST_CASE("adadelta null update and first-step magnitude") {
    auto theta = Tensor<double>::vector({1.0}, true);
    dsa::Adadelta<double> opt({theta});
    theta.grad()[0] = 0.0;
    opt.step();
    CHECK(theta.vec()(0) == 1.0);

    auto t2 = Tensor<double>::vector({1.0}, true);
    dsa::Adadelta<double> opt2({t2});
    t2.grad()[0] = 1.0;
    opt2.step();
    const double want_delta = -std::sqrt(1e-6 / (0.1 + 1e-6));
    CHECK(t2.vec()(0) == doctest::Approx(1.0 + want_delta).epsilon(1e-12));
}

TEST_CASE("adadelta steady-state step is insensitive to gradient rescaling") {
    auto run = [](double g) {
        auto theta = Tensor<double>::vector({0.0}, true);
        dsa::Adadelta<double> opt({theta});
        double prev = 0.0, last_step = 0.0;
        for (int i = 0; i < 100; ++i) {
            theta.grad()[0] = g;
            opt.step();
            last_step = std::abs(theta.vec()(0) - prev);
            prev = theta.vec()(0);
        }
        return last_step;
    };
    const double a = run(1.0);
    const double b = run(100.0);
    CHECK(std::abs(a / b - 1.0) < 0.05);
}

TEST_CASE("he_init_scaled statistics and determinism") {
    dsa::Rng rng(5);
    // factor 1 when the layer has no dropout
    auto plain = dsa::he_init_scaled<double>({200, 50}, 50, 1.0, rng);
    double sum = 0, sum2 = 0;
    for (Index i = 0; i < plain.numel(); ++i) {
        sum += plain.data()[i];
        sum2 += plain.data()[i] * plain.data()[i];
    }
    const double n = static_cast<double>(plain.numel());
    const double std_plain = std::sqrt(sum2 / n - (sum / n) * (sum / n));
    CHECK(std::abs(std_plain - std::sqrt(2.0 / 50.0)) < 0.03 * std::sqrt(2.0 / 50.0));

    // scaled by sqrt(dropout rate): sqrt(2/50)*sqrt(0.2) = 0.08944
    dsa::Rng rng2(6);
    auto scaled = dsa::he_init_scaled<double>({1000, 100}, 50, 0.2, rng2);
    sum = sum2 = 0;
    for (Index i = 0; i < scaled.numel(); ++i) {
        sum += scaled.data()[i];
        sum2 += scaled.data()[i] * scaled.data()[i];
    }
    const double m = static_cast<double>(scaled.numel());
    const double std_scaled = std::sqrt(sum2 / m - (sum / m) * (sum / m));
    CHECK(std::abs(std_scaled - 0.08944) < 0.03 * 0.08944);

    // fixed seed reproduces the tensor exactly
    dsa::Rng ra(99), rb(99);
    auto one = dsa::he_init_scaled<double>({3, 4}, 4, 0.5, ra);
    auto two = dsa::he_init_scaled<double>({3, 4}, 4, 0.5, rb);
    CHECK(one.values() == two.values());

    dsa::Rng rc(1);
    CHECK_THROWS_AS(dsa::he_init_scaled<double>({2}, 0, 1.0, rc), dsa::ConfigError);
    CHECK_THROWS_AS(dsa::he_init_scaled<double>({2}, 2, 0.0, rc), dsa::ConfigError);
}

TEST_CASE("lr halving follows the hand-traced counter rules") {
    // monotone improvement never halves
    dsa::ScheduleState sched;
    sched.trigger = 2;
    for (double loss : {1.0, 0.9, 0.8}) dsa::lr_halving_update(sched, loss);
    CHECK(sched.lr_multiplier == 1.0);
    CHECK(sched.stall_count == 0);

    // flat losses halve after the trigger count of stalls
    dsa::ScheduleState flat;
    flat.trigger = 2;
    dsa::lr_halving_update(flat, 1.0);  // establishes best
    CHECK(flat.lr_multiplier == 1.0);
    dsa::lr_halving_update(flat, 1.0);  // stall 1
    CHECK(flat.lr_multiplier == 1.0);
    dsa::lr_halving_update(flat, 1.0);  // stall 2 -> halve
    CHECK(flat.lr_multiplier == 0.5);
    CHECK(flat.stall_count == 0);

    // an improvement of exactly the patience margin is a stall
    dsa::ScheduleState edge;
    edge.trigger = 1;
    dsa::lr_halving_update(edge, 1.0);
    dsa::lr_halving_update(edge, 1.0 - 0.001);
    CHECK(edge.lr_multiplier == 0.5);

    CHECK_THROWS_AS(dsa::lr_halving_update(edge, std::numeric_limits<double>::infinity()), dsa::NumericError);
}

TEST_CASE("lr multiplier stays a non-increasing power of two") {
    dsa::ScheduleState sched;
    sched.trigger = 3;
    dsa::Rng rng(7);
    std::uniform_real_distribution<double> dist(0.5, 1.5);
    double prev = 1.0;
    for (int i = 0; i < 200; ++i) {
        const double mult = dsa::lr_halving_update(sched, dist(rng));
        CHECK(mult <= prev);
        const double log2m = std::log2(mult);
        CHECK(log2m == std::round(log2m));
        prev = mult;
    }
}

TEST_CASE("both optimizers descend a convex quadratic") {
    // f(theta) = |theta - c|^2, grad = 2 (theta - c)
    const std::vector<double> target = {1.0, -2.0, 0.5};
    auto loss_of = [&](const Tensor<double>& t) {
        double acc = 0;
        for (Index i = 0; i < 3; ++i) {
            const double d = t.vec()(i) - target[static_cast<std::size_t>(i)];
            acc += d * d;
        }
        return acc;
    };
    auto fill_grad = [&](Tensor<double>& t) {
        for (Index i = 0; i < 3; ++i)
            t.grad()[static_cast<std::size_t>(i)] = 2.0 * (t.vec()(i) - target[static_cast<std::size_t>(i)]);
    };

    {
        auto theta = Tensor<double>::vector({5.0, 5.0, 5.0}, true);
        dsa::AdamOptions<double> opts;
        opts.lr = 0.05;
        dsa::Adam<double> opt({theta}, opts);
        double prev = loss_of(theta);
        for (int i = 0; i < 1000; ++i) {
            fill_grad(theta);
            opt.step();
            const double cur = loss_of(theta);
            if (i >= 10) CHECK(cur <= prev + 1e-12);
            prev = cur;
        }
        CHECK(prev < 1e-2);
    }
    {
        auto theta = Tensor<double>::vector({5.0, 5.0, 5.0}, true);
        dsa::Adadelta<double> opt({theta});
        const double initial = loss_of(theta);
        double prev = initial;
        for (int i = 0; i < 1000; ++i) {
            fill_grad(theta);
            opt.step();
            const double cur = loss_of(theta);
            if (i >= 10) CHECK(cur <= prev + 1e-12);
            prev = cur;
        }
        CHECK(prev < 0.5 * initial);  // adadelta's unit-free steps move slower here
    }
}

}  // TEST_SUITE
