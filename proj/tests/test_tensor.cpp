#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "dsa/grad_check.hpp"
#include "dsa/ops.hpp"
#include "dsa/tensor.hpp"
#include "reference_kernels.hpp"
#include "test_support.hpp"

using dsa::BoolVec;
using dsa::Index;
using dsa::Mode;
using dsa::Tape;
using dsa::Tensor;

namespace {

Tensor<double> mat2(std::vector<double> vals, Index rows, Index cols) {
    return Tensor<double>::from({rows, cols}, std::move(vals));
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("tensor shape and data invariants") {
    auto t = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.numel() == 6);
    CHECK(t.mat()(1, 2) == 6);
    CHECK_THROWS_AS(Tensor<double>::from({2, 2}, {1, 2, 3}), dsa::ShapeError);
    CHECK_THROWS_AS(Tensor<double>::zeros({0, 3}), dsa::ShapeError);
    auto g = Tensor<double>::zeros({2, 2}, true);
    CHECK(g.requires_grad());
    CHECK(g.grad().size() == 4);
}

TEST_CASE("affine examples") {
    // identity weights pass the input through
    auto x = mat2({1, 2}, 2, 1);
    auto eye = mat2({1, 0, 0, 1}, 2, 2);
    auto zero_b = Tensor<double>::vector({0, 0});
    auto y = dsa::affine(x, eye, zero_b);
    CHECK(y.mat()(0, 0) == 1);
    CHECK(y.mat()(1, 0) == 2);

    // zero weights expose the bias
    auto zero_w = mat2({0, 0, 0, 0}, 2, 2);
    auto b = Tensor<double>::vector({3, 4});
    auto yb = dsa::affine(x, zero_w, b);
    CHECK(yb.mat()(0, 0) == 3);
    CHECK(yb.mat()(1, 0) == 4);

    // hand matrix-vector arithmetic: [[1,2],[3,4]].[1,1] = [3,7]
    auto w = mat2({1, 2, 3, 4}, 2, 2);
    auto ones = mat2({1, 1}, 2, 1);
    auto yw = dsa::affine(ones, w, zero_b);
    CHECK(yw.mat()(0, 0) == doctest::Approx(3).epsilon(1e-12));
    CHECK(yw.mat()(1, 0) == doctest::Approx(7).epsilon(1e-12));

    CHECK_THROWS_AS(dsa::affine(x, mat2({1, 0, 0, 1, 0, 0}, 2, 3), zero_b), dsa::ShapeError);
}

TEST_CASE("conv1d_same examples and oracle equivalence") {
    // k=1 kernel acting as identity
    auto x = mat2({5, 6, 7}, 1, 3);
    auto k1 = Tensor<double>::from({1, 1, 1}, {1});
    auto b0 = Tensor<double>::vector({0});
    auto id = dsa::conv1d_same(x, k1, b0);
    CHECK(id.mat()(0, 2) == 7);

    // centered delta kernel
    auto kdelta = Tensor<double>::from({1, 1, 3}, {0, 1, 0});
    auto ydelta = dsa::conv1d_same(x, kdelta, b0);
    for (Index i = 0; i < 3; ++i) CHECK(ydelta.mat()(0, i) == x.mat()(0, i));

    // box kernel against the direct sliding-window oracle
    auto xb = mat2({1, 2, 3}, 1, 3);
    auto kbox = Tensor<double>::from({1, 1, 3}, {1, 1, 1});
    auto ybox = dsa::conv1d_same(xb, kbox, b0);
    const auto expect = refk::conv1d_same({{1, 2, 3}}, {{{1, 1, 1}}}, {0});
    CHECK(ybox.mat()(0, 0) == doctest::Approx(expect[0][0]).epsilon(1e-12));
    CHECK(ybox.mat()(0, 1) == doctest::Approx(expect[0][1]).epsilon(1e-12));
    CHECK(ybox.mat()(0, 2) == doctest::Approx(expect[0][2]).epsilon(1e-12));
    CHECK(expect[0] == std::vector<double>{3, 6, 5});

    auto keven = Tensor<double>::from({1, 1, 2}, {1, 1});
    CHECK_THROWS_AS(dsa::conv1d_same(x, keven, b0), dsa::ConfigError);
}

TEST_CASE("conv1d_same equals triple-loop oracle on a random grid") {
    dsa::Rng rng(11);
    for (Index p : {1, 3, 8}) {
        for (Index q : {1, 2, 8}) {
            for (Index k : {1, 3, 5}) {
                for (Index n : {1, 2, 7, 32}) {
                    auto x = testsup::random_tensor({p, n}, rng);
                    auto kern = testsup::random_tensor({q, p, k}, rng);
                    auto bias = testsup::random_tensor({q}, rng);
                    auto y = dsa::conv1d_same(x, kern, bias);

                    std::vector<refk::Grid> kgrids(static_cast<std::size_t>(q));
                    for (Index o = 0; o < q; ++o) {
                        kgrids[static_cast<std::size_t>(o)] = refk::zeros(static_cast<std::size_t>(p),
                                                                          static_cast<std::size_t>(k));
                        for (Index i = 0; i < p; ++i)
                            for (Index t = 0; t < k; ++t)
                                kgrids[static_cast<std::size_t>(o)][static_cast<std::size_t>(i)]
                                      [static_cast<std::size_t>(t)] = kern.data()[(o * p + i) * k + t];
                    }
                    std::vector<double> bvec(bias.data(), bias.data() + q);
                    const auto want = refk::conv1d_same(testsup::to_grid(x), kgrids, bvec);
                    for (Index o = 0; o < q; ++o)
                        for (Index i = 0; i < n; ++i)
                            CHECK(y.mat()(o, i) ==
                                  doctest::Approx(want[static_cast<std::size_t>(o)][static_cast<std::size_t>(i)])
                                      .epsilon(1e-10));
                }
            }
        }
    }
}

TEST_CASE("leaky_relu examples") {
    auto x = Tensor<double>::vector({0, 3, -2});
    auto y = dsa::leaky_relu(x, 0.01);
    CHECK(y.vec()(0) == 0);
    CHECK(y.vec()(1) == 3);
    CHECK(y.vec()(2) == doctest::Approx(-0.02).epsilon(1e-12));
    CHECK_THROWS_AS(dsa::leaky_relu(x, 0.0), dsa::ConfigError);
    CHECK_THROWS_AS(dsa::leaky_relu(x, 1.0), dsa::ConfigError);
}

TEST_CASE("tanh_op examples and open-interval range") {
    auto z = dsa::tanh_op(Tensor<double>::vector({0.0}));
    CHECK(z.vec()(0) == 0.0);

    auto sat = dsa::tanh_op(Tensor<double>::vector({100.0}));
    CHECK(std::abs(sat.vec()(0) - 1.0) < 1e-12);
    CHECK(sat.vec()(0) < 1.0);

    auto mid = dsa::tanh_op(Tensor<double>::vector({1.5}));
    CHECK(mid.vec()(0) == doctest::Approx(std::tanh(1.5)).epsilon(1e-14));

    dsa::Rng rng(3);
    std::uniform_real_distribution<double> wide(-1e6, 1e6);
    for (int i = 0; i < 2000; ++i) {
        const double v = wide(rng);
        auto out = dsa::tanh_op(Tensor<double>::vector({v}));
        CHECK(out.vec()(0) > -1.0);
        CHECK(out.vec()(0) < 1.0);
    }
}

TEST_CASE("softmax_over_positions examples") {
    // equal logits spread weight uniformly
    auto q = Tensor<double>::zeros({4, 2});
    auto a = dsa::softmax_over_positions(q, dsa::all_valid(4));
    for (Index i = 0; i < 4; ++i)
        for (Index j = 0; j < 2; ++j) CHECK(a.mat()(i, j) == doctest::Approx(0.25).epsilon(1e-12));

    // a singleton position takes all the weight
    auto one = dsa::softmax_over_positions(Tensor<double>::from({1, 1}, {13.7}), dsa::all_valid(1));
    CHECK(one.mat()(0, 0) == 1.0);

    // closed-form exp ratio: [ln 1, ln 3] -> [1/4, 3/4]
    auto logs = Tensor<double>::from({2, 1}, {std::log(1.0), std::log(3.0)});
    auto ratio = dsa::softmax_over_positions(logs, dsa::all_valid(2));
    CHECK(ratio.mat()(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(ratio.mat()(1, 0) == doctest::Approx(0.75).epsilon(1e-12));

    BoolVec none = BoolVec::Constant(3, false);
    CHECK_THROWS_AS(dsa::softmax_over_positions(Tensor<double>::zeros({3, 1}), none), dsa::EmptySequenceError);
}

TEST_CASE("softmax columns sum to one for wild logits, masked entries get zero") {
    dsa::Rng rng(17);
    std::uniform_real_distribution<double> logit(-50.0, 50.0);
    for (int trial = 0; trial < 50; ++trial) {
        const Index n = 1 + static_cast<Index>(rng() % 64);
        const Index m = 1 + static_cast<Index>(rng() % 4);
        auto q = Tensor<double>::zeros({n, m});
        for (Index i = 0; i < q.numel(); ++i) q.data()[i] = logit(rng);
        BoolVec mask = dsa::all_valid(n);
        for (Index i = 0; i < n; ++i) mask[i] = (rng() % 4) != 0;
        if (dsa::count_valid(mask) == 0) mask[0] = true;
        auto a = dsa::softmax_over_positions(q, mask);
        for (Index j = 0; j < m; ++j) {
            double sum = 0.0;
            for (Index i = 0; i < n; ++i) {
                if (!mask[i]) CHECK(a.mat()(i, j) == 0.0);
                else {
                    CHECK(a.mat()(i, j) > 0.0);
                    sum += a.mat()(i, j);
                }
            }
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("dropout semantics") {
    dsa::Rng rng(5);
    auto x = testsup::random_tensor({4, 5}, rng);

    auto same = dsa::dropout(x, 0.0, Mode::kTrain, &rng);
    CHECK(same.node() == x.node());
    auto eval_same = dsa::dropout(x, 0.9, Mode::kEval, nullptr);
    CHECK(eval_same.node() == x.node());

    // empirical zero fraction at rate 0.5
    auto big = Tensor<double>::full({100000}, 1.0);
    dsa::Rng seeded(123);
    auto dropped = dsa::dropout(big, 0.5, Mode::kTrain, &seeded);
    Index zeros = 0;
    for (Index i = 0; i < dropped.numel(); ++i) {
        if (dropped.data()[i] == 0.0) ++zeros;
        else CHECK(dropped.data()[i] == doctest::Approx(2.0).epsilon(1e-12));
    }
    const double frac = static_cast<double>(zeros) / 100000.0;
    CHECK(std::abs(frac - 0.5) < 0.05);

    CHECK_THROWS_AS(dsa::dropout(x, 1.0, Mode::kTrain, &rng), dsa::ConfigError);
    CHECK_THROWS_AS(dsa::dropout(x, -0.1, Mode::kTrain, &rng), dsa::ConfigError);
}

TEST_CASE("l2_normalize_columns examples and idempotence") {
    auto x = mat2({3, 1, 0, 4, 0, 0}, 2, 3);  // cols: [3,4], [1,0], [0,0]
    auto y = dsa::l2_normalize_columns(x, 1e-12);
    CHECK(y.mat()(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(y.mat()(1, 0) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(y.mat()(0, 1) == 1.0);  // unit column unchanged
    CHECK(y.mat()(0, 2) == 0.0);  // zero column passes through
    CHECK(y.mat()(1, 2) == 0.0);

    dsa::Rng rng(29);
    auto r = testsup::random_tensor({5, 9}, rng, -3.0, 3.0);
    auto once = dsa::l2_normalize_columns(r, 1e-12);
    auto twice = dsa::l2_normalize_columns(once, 1e-12);
    for (Index i = 0; i < once.numel(); ++i)
        CHECK(std::abs(once.data()[i] - twice.data()[i]) < 1e-12);
}

TEST_CASE("batch_norm_1d examples") {
    auto gamma = Tensor<double>::vector({1.0});
    auto beta = Tensor<double>::vector({0.0});

    // hand mean/variance: x=[1,3] -> mean 2, var 1 -> +-1/sqrt(1+eps)
    dsa::BatchNormState<double> state(1);
    auto x = mat2({1, 3}, 1, 2);
    auto y = dsa::batch_norm_1d(x, gamma, beta, state, Mode::kTrain, 0.1, 1e-5);
    const double want = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y.mat()(0, 0) == doctest::Approx(-want).epsilon(1e-12));
    CHECK(y.mat()(0, 1) == doctest::Approx(want).epsilon(1e-12));

    // standardized input is (nearly) a fixed point
    dsa::Rng rng(31);
    dsa::BatchNormState<double> st2(3);
    auto g3 = Tensor<double>::full({3}, 1.0);
    auto b3 = Tensor<double>::zeros({3});
    auto xs = testsup::random_tensor({3, 16}, rng);
    for (Index f = 0; f < 3; ++f) {
        const double mu = xs.mat().row(f).mean();
        const double sd = std::sqrt((xs.mat().row(f).array() - mu).square().mean());
        xs.mat().row(f) = (xs.mat().row(f).array() - mu) / sd;
    }
    auto ys = dsa::batch_norm_1d(xs, g3, b3, st2, Mode::kTrain, 0.1, 1e-5);
    for (Index i = 0; i < ys.numel(); ++i) CHECK(std::abs(ys.data()[i] - xs.data()[i]) < 1e-4);

    // zero scale collapses to the shift
    dsa::BatchNormState<double> st3(1);
    auto yz = dsa::batch_norm_1d(x, Tensor<double>::vector({0.0}), Tensor<double>::vector({2.5}), st3,
                                 Mode::kTrain, 0.1, 1e-5);
    CHECK(yz.mat()(0, 0) == 2.5);
    CHECK(yz.mat()(0, 1) == 2.5);

    dsa::BatchNormState<double> st4(1);
    CHECK_THROWS_AS(dsa::batch_norm_1d(mat2({1}, 1, 1), gamma, beta, st4, Mode::kTrain, 0.1, 1e-5),
                    dsa::BatchSizeError);
}

TEST_CASE("batch_norm_1d eval mode uses running statistics") {
    dsa::BatchNormState<double> state(1);
    auto gamma = Tensor<double>::vector({1.0});
    auto beta = Tensor<double>::vector({0.0});
    dsa::Rng rng(41);
    for (int step = 0; step < 200; ++step) {
        auto x = testsup::random_tensor({1, 8}, rng, 4.0, 6.0);
        dsa::batch_norm_1d(x, gamma, beta, state, Mode::kTrain, 0.1, 1e-5);
    }
    // running mean converges near 5; eval standardizes a value of 5 near 0
    auto y = dsa::batch_norm_1d(mat2({5.0}, 1, 1), gamma, beta, state, Mode::kEval, 0.1, 1e-5);
    CHECK(std::abs(y.mat()(0, 0)) < 0.5);
}

TEST_CASE("backward on simple functionals") {
    // loss = sum(x) has unit gradients
    auto x = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tape<double> tape;
    auto loss = dsa::sum_all(x, &tape);
    dsa::backward(loss, tape);
    for (Index i = 0; i < 6; ++i) CHECK(x.grad()[static_cast<std::size_t>(i)] == 1.0);

    // loss = sum(x.x) has gradient 2x
    auto x2 = Tensor<double>::vector({1, 2}, true);
    Tape<double> tape2;
    auto loss2 = dsa::sum_all(dsa::hadamard(x2, x2, &tape2), &tape2);
    dsa::backward(loss2, tape2);
    CHECK(x2.grad()[0] == doctest::Approx(2.0).epsilon(1e-14));
    CHECK(x2.grad()[1] == doctest::Approx(4.0).epsilon(1e-14));

    Tape<double> tape3;
    auto nonscalar = dsa::add(x2, x2, &tape3);
    CHECK_THROWS_AS(dsa::backward(nonscalar, tape3), dsa::ContractError);
}

TEST_CASE("grad_check on an exact quadratic") {
    auto theta = Tensor<double>::vector({0.3, -1.2, 2.0}, true);
    const double err = dsa::grad_check<double>(
        [&](Tape<double>* tape) { return dsa::sum_all(dsa::hadamard(theta, theta, tape), tape); }, {theta});
    CHECK(err < 1e-8);
}

TEST_CASE("every primitive passes a gradient check at random points") {
    dsa::Rng rng(101);
    dsa::GradCheckOptions opts;

    auto weighted_sum = [&](const Tensor<double>& out, Tape<double>* tape, const Tensor<double>& w) {
        return dsa::sum_all(dsa::hadamard(out, w, tape), tape);
    };

    SUBCASE("affine") {
        auto x = testsup::random_tensor({3, 4}, rng, -1, 1, true);
        auto w = testsup::random_tensor({2, 3}, rng, -1, 1, true);
        auto b = testsup::random_tensor({2}, rng, -1, 1, true);
        auto probe = testsup::random_tensor({2, 4}, rng);
        const double err = dsa::grad_check<double>(
            [&](Tape<double>* t) { return weighted_sum(dsa::affine(x, w, b, t), t, probe); }, {x, w, b}, opts);
        CHECK(err < 1e-6);
    }
    SUBCASE("conv1d_same") {
        for (Index k : {1, 3, 5}) {
            auto x = testsup::random_tensor({2, 6}, rng, -1, 1, true);
            auto kern = testsup::random_tensor({3, 2, k}, rng, -1, 1, true);
            auto b = testsup::random_tensor({3}, rng, -1, 1, true);
            auto probe = testsup::random_tensor({3, 6}, rng);
            const double err = dsa::grad_check<double>(
                [&](Tape<double>* t) { return weighted_sum(dsa::conv1d_same(x, kern, b, t), t, probe); },
                {x, kern, b}, opts);
            CHECK(err < 1e-6);
        }
    }
    SUBCASE("leaky_relu") {
        auto x = testsup::random_tensor_off_zero({4, 4}, rng, true);
        auto probe = testsup::random_tensor({4, 4}, rng);
        const double err = dsa::grad_check<double>(
            [&](Tape<double>* t) { return weighted_sum(dsa::leaky_relu(x, 0.01, t), t, probe); }, {x}, opts);
        CHECK(err < 1e-6);
    }
    SUBCASE("tanh_op") {
        auto x = testsup::random_tensor({5}, rng, -2, 2, true);
        auto probe = testsup::random_tensor({5}, rng);
        const double err = dsa::grad_check<double>(
            [&](Tape<double>* t) { return weighted_sum(dsa::tanh_op(x, t), t, probe); }, {x}, opts);
        CHECK(err < 1e-6);
    }
    SUBCASE("softmax_over_positions") {
        auto q = testsup::random_tensor({6, 3}, rng, -2, 2, true);
        BoolVec mask = dsa::all_valid(6);
        mask[2] = false;
        auto probe = testsup::random_tensor({6, 3}, rng);
        const double err = dsa::grad_check<double>(
            [&](Tape<double>* t) { return weighted_sum(dsa::softmax_over_positions(q, mask, t), t, probe); },
            {q}, opts);
        CHECK(err < 1e-6);
    }
    SUBCASE("dropout") {
        auto x = testsup::random_tensor({4, 4}, rng, -1, 1, true);
        auto probe = testsup::random_tensor({4, 4}, rng);
        const double err = dsa::grad_check<double>(
            [&](Tape<double>* t) {
                dsa::Rng fixed(999);  // identical keep pattern on every call
                return weighted_sum(dsa::dropout(x, 0.4, Mode::kTrain, &fixed, t), t, probe);
            },
            {x}, opts);
        CHECK(err < 1e-6);
    }
    SUBCASE("l2_normalize_columns") {
        auto x = testsup::random_tensor({3, 5}, rng, 0.5, 2.0, true);
        auto probe = testsup::random_tensor({3, 5}, rng);
        const double err = dsa::grad_check<double>(
            [&](Tape<double>* t) { return weighted_sum(dsa::l2_normalize_columns(x, 1e-12, t), t, probe); },
            {x}, opts);
        CHECK(err < 1e-6);
    }
    SUBCASE("batch_norm_1d train and eval") {
        auto x = testsup::random_tensor({3, 6}, rng, -1, 1, true);
        auto gamma = testsup::random_tensor({3}, rng, 0.5, 1.5, true);
        auto beta = testsup::random_tensor({3}, rng, -0.5, 0.5, true);
        auto probe = testsup::random_tensor({3, 6}, rng);
        for (Mode mode : {Mode::kTrain, Mode::kEval}) {
            const double err = dsa::grad_check<double>(
                [&](Tape<double>* t) {
                    dsa::BatchNormState<double> state(3);  // fresh stats per call
                    return weighted_sum(dsa::batch_norm_1d(x, gamma, beta, state, mode, 0.1, 1e-5, t), t, probe);
                },
                {x, gamma, beta}, opts);
            CHECK(err < 1e-6);
        }
    }
    SUBCASE("elementwise and shape ops") {
        auto a = testsup::random_tensor_off_zero({3, 3}, rng, true);
        auto b = testsup::random_tensor({3, 3}, rng, -1, 1, true);
        auto probe = testsup::random_tensor({3, 3}, rng);
        auto probe_tall = testsup::random_tensor({6, 3}, rng);
        double err = dsa::grad_check<double>(
            [&](Tape<double>* t) { return weighted_sum(dsa::add(a, b, t), t, probe); }, {a, b}, opts);
        CHECK(err < 1e-6);
        err = dsa::grad_check<double>(
            [&](Tape<double>* t) { return weighted_sum(dsa::sub(a, b, t), t, probe); }, {a, b}, opts);
        CHECK(err < 1e-6);
        err = dsa::grad_check<double>(
            [&](Tape<double>* t) { return weighted_sum(dsa::hadamard(a, b, t), t, probe); }, {a, b}, opts);
        CHECK(err < 1e-6);
        err = dsa::grad_check<double>(
            [&](Tape<double>* t) { return weighted_sum(dsa::abs_op(a, t), t, probe); }, {a}, opts);
        CHECK(err < 1e-6);
        err = dsa::grad_check<double>(
            [&](Tape<double>* t) { return weighted_sum(dsa::scale(a, 2.5, t), t, probe); }, {a}, opts);
        CHECK(err < 1e-6);
        err = dsa::grad_check<double>(
            [&](Tape<double>* t) { return weighted_sum(dsa::concat_rows({a, b}, t), t, probe_tall); }, {a, b},
            opts);
        CHECK(err < 1e-6);
        err = dsa::grad_check<double>(
            [&](Tape<double>* t) {
                return weighted_sum(dsa::reshape(a, {9}, t), t, dsa::reshape(probe, {9}));
            },
            {a}, opts);
        CHECK(err < 1e-6);
        err = dsa::grad_check<double>([&](Tape<double>* t) { return dsa::mean_all(dsa::hadamard(a, b, t), t); },
                                      {a, b}, opts);
        CHECK(err < 1e-6);
    }
    SUBCASE("hstack and head contractions") {
        auto v1 = testsup::random_tensor({4}, rng, -1, 1, true);
        auto v2 = testsup::random_tensor({4}, rng, -1, 1, true);
        auto probe = testsup::random_tensor({4, 2}, rng);
        std::vector<Tensor<double>> cols = {v1, v2};
        double err = dsa::grad_check<double>(
            [&](Tape<double>* t) {
                return weighted_sum(dsa::hstack_columns(std::span<const Tensor<double>>(cols), t), t, probe);
            },
            {v1, v2}, opts);
        CHECK(err < 1e-6);

        auto h1 = testsup::random_tensor({3, 5}, rng, -1, 1, true);
        auto h2 = testsup::random_tensor({3, 5}, rng, -1, 1, true);
        auto attn = testsup::random_tensor({5, 2}, rng, 0.0, 1.0, true);
        auto z = testsup::random_tensor({2, 3}, rng, -1, 1, true);
        std::vector<Tensor<double>> heads = {h1, h2};
        auto probe_s = testsup::random_tensor({2, 3}, rng);
        err = dsa::grad_check<double>(
            [&](Tape<double>* t) {
                auto xhat = dsa::stack_heads(std::span<const Tensor<double>>(heads), t);
                return weighted_sum(dsa::head_weighted_sum(xhat, attn, t), t, probe_s);
            },
            {h1, h2, attn}, opts);
        CHECK(err < 1e-6);

        auto probe_q = testsup::random_tensor({5, 2}, rng);
        err = dsa::grad_check<double>(
            [&](Tape<double>* t) {
                auto xhat = dsa::stack_heads(std::span<const Tensor<double>>(heads), t);
                return weighted_sum(dsa::head_scores(xhat, z, t), t, probe_q);
            },
            {h1, h2, z}, opts);
        CHECK(err < 1e-6);
    }
    SUBCASE("cross_entropy_loss") {
        auto logits = testsup::random_tensor({3, 4}, rng, -2, 2, true);
        const std::vector<int> labels = {0, 2, 1, 1};
        const double err = dsa::grad_check<double>(
            [&](Tape<double>* t) { return dsa::cross_entropy_loss(logits, labels, t); }, {logits}, opts);
        CHECK(err < 1e-6);
    }
}

TEST_CASE("cross_entropy_loss examples") {
    auto equal = Tensor<double>::zeros({3, 1});
    CHECK(dsa::cross_entropy_loss(equal, {1}).item() == doctest::Approx(std::log(3.0)).epsilon(1e-12));

    auto confident = Tensor<double>::from({2, 1}, {1000.0, 0.0});
    CHECK(dsa::cross_entropy_loss(confident, {0}).item() == doctest::Approx(0.0).epsilon(1e-12));

    // closed-form binary case: loss = ln(1 + e^-1)
    auto bin = Tensor<double>::from({2, 1}, {1.0, 0.0});
    CHECK(dsa::cross_entropy_loss(bin, {0}).item() ==
          doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));

    CHECK_THROWS_AS(dsa::cross_entropy_loss(bin, {2}), dsa::ContractError);
    CHECK_THROWS_AS(dsa::cross_entropy_loss(bin, {-1}), dsa::ContractError);

    // non-negativity over random logits
    dsa::Rng rng(59);
    for (int i = 0; i < 200; ++i) {
        auto l = testsup::random_tensor({4, 3}, rng, -5, 5);
        CHECK(dsa::cross_entropy_loss(l, {0, 3, 2}).item() >= 0.0);
    }
}

TEST_CASE("gradients accumulate across repeated use of a parameter") {
    auto x = Tensor<double>::vector({2.0}, true);
    Tape<double> tape;
    auto y = dsa::add(dsa::hadamard(x, x, &tape), x, &tape);  // x^2 + x
    dsa::backward(dsa::sum_all(y, &tape), tape);
    CHECK(x.grad()[0] == doctest::Approx(5.0).epsilon(1e-14));  // 2x + 1 at x=2
}

}  // TEST_SUITE
