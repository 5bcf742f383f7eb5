#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "cmr/autodiff.hpp"

using namespace cmr;

namespace {

// Central finite differences against the recorded backward pass. The closure
// must read every parameter's current value on each call.
void fd_check(ParamStore& store, const std::function<Tensor(Tape*)>& loss_fn,
              double h = 1e-5, double tol = 1e-5) {
    Tape tape;
    Tensor loss = loss_fn(&tape);
    store.zero_grads();
    tape.backward(loss);
    for (const auto& name : store.names()) {
        Parameter& p = store.get(name);
        if (!p.trainable) continue;
        REQUIRE_MESSAGE(p.has_grad(), name.c_str());
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            double keep = p.value.data[i];
            p.value.data[i] = keep + h;
            double up = loss_fn(nullptr).scalar();
            p.value.data[i] = keep - h;
            double dn = loss_fn(nullptr).scalar();
            p.value.data[i] = keep;
            double numeric = (up - dn) / (2 * h);
            double analytic = p.grad[i];
            double rel = std::abs(numeric - analytic) /
                         std::max({std::abs(numeric), std::abs(analytic), 1e-8});
            CAPTURE(name);
            CAPTURE(i);
            CHECK(rel < tol);
        }
    }
}

Tensor randmat(Rng& rng, std::size_t r, std::size_t c, double scale = 1.0) {
    Tensor t = Tensor::zeros({r, c});
    for (auto& x : t.data) x = rng.normal(0.0, scale);
    return t;
}

Tensor randvec(Rng& rng, std::size_t n, double scale = 1.0) {
    Tensor t = Tensor::zeros({n});
    for (auto& x : t.data) x = rng.normal(0.0, scale);
    return t;
}

}  // namespace

TEST_CASE("backward of sum gives ones") {
    ParamStore s;
    Parameter& p = s.add("x", Tensor::vec({1, 2, 3}));
    Tape t;
    Tensor loss = ops::sum(&t, ops::param(&t, p));
    t.backward(loss);
    CHECK(p.grad == std::vector<double>{1, 1, 1});
}

TEST_CASE("backward of x dot x is 2x") {
    ParamStore s;
    Parameter& p = s.add("x", Tensor::vec({2.0}));
    Tape t;
    Tensor x = ops::param(&t, p);
    t.backward(ops::dot(&t, x, x));
    CHECK(p.grad[0] == doctest::Approx(4.0));
}

TEST_CASE("gradient accumulation: using a tensor twice doubles its gradient") {
    ParamStore s;
    Parameter& p = s.add("x", Tensor::vec({1.5, -0.5}));
    Tape t1;
    Tensor once = ops::sum(&t1, ops::param(&t1, p));
    t1.backward(once);
    std::vector<double> g_once = p.grad;
    s.zero_grads();
    Tape t2;
    Tensor x = ops::param(&t2, p);
    t2.backward(ops::add(&t2, ops::sum(&t2, x), ops::sum(&t2, x)));
    for (std::size_t i = 0; i < g_once.size(); ++i)
        CHECK(p.grad[i] == doctest::Approx(2 * g_once[i]));
}

TEST_CASE("backward rejects a non-scalar loss") {
    ParamStore s;
    Parameter& p = s.add("x", Tensor::vec({1, 2}));
    Tape t;
    Tensor x = ops::param(&t, p);
    CHECK_THROWS_AS(t.backward(x), TensorError);
}

TEST_CASE("l2_normalize oracles") {
    Tensor out = ops::l2_normalize(nullptr, Tensor::vec({3, 4}));
    CHECK(out.data[0] == doctest::Approx(0.6));
    CHECK(out.data[1] == doctest::Approx(0.8));
    Tensor unit = ops::l2_normalize(nullptr, Tensor::vec({0, 1}));
    CHECK(unit.data[1] == doctest::Approx(1.0));
    CHECK_THROWS_AS(ops::l2_normalize(nullptr, Tensor::vec({0, 0})), TensorError);
}

TEST_CASE("softmax rows sum to one and are positive") {
    Rng rng(3);
    Tensor x = randmat(rng, 4, 6, 3.0);
    Tensor sm = ops::softmax_rows(nullptr, x);
    for (std::size_t i = 0; i < 4; ++i) {
        double row = 0;
        for (std::size_t j = 0; j < 6; ++j) {
            CHECK(sm.at(i, j) > 0.0);
            row += sm.at(i, j);
        }
        CHECK(std::abs(row - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax column mask zeroes masked weights exactly") {
    Tensor x = Tensor::mat(1, 3, {5.0, 1.0, 2.0});
    Tensor sm = ops::softmax_rows(nullptr, x, {1.0, 0.0, 1.0});
    CHECK(sm.at(0, 1) == 0.0);
    CHECK(sm.at(0, 0) + sm.at(0, 2) == doctest::Approx(1.0));
}

TEST_CASE("layer_norm rows have zero mean and unit variance pre-affine") {
    Rng rng(5);
    Tensor x = randmat(rng, 3, 8, 2.0);
    Tensor g = Tensor::full({8}, 1.0), b = Tensor::zeros({8});
    Tensor y = ops::layer_norm(nullptr, x, g, b);
    for (std::size_t i = 0; i < 3; ++i) {
        double mean = 0, var = 0;
        for (std::size_t j = 0; j < 8; ++j) mean += y.at(i, j);
        mean /= 8;
        for (std::size_t j = 0; j < 8; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
        var /= 8;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-6);
    }
}

TEST_CASE("masked mean pool oracles") {
    Tensor rows = Tensor::mat(2, 2, {2, 0, 4, 0});
    Tensor m = ops::masked_mean_pool(nullptr, rows, {1, 1});
    CHECK(m.data == std::vector<double>{3, 0});
    Tensor rows2 = Tensor::mat(2, 2, {2, 0, 999, 999});
    Tensor m2 = ops::masked_mean_pool(nullptr, rows2, {1, 0});
    CHECK(m2.data == std::vector<double>{2, 0});
    Tensor single = ops::masked_mean_pool(nullptr, Tensor::mat(1, 2, {5, 6}), {1});
    CHECK(single.data == std::vector<double>{5, 6});
    CHECK_THROWS_AS(ops::masked_mean_pool(nullptr, rows, {0, 0}), TensorError);
}

TEST_CASE("masked max pool oracle") {
    Tensor rows = Tensor::mat(2, 2, {1, 5, 3, 2});
    Tensor m = ops::masked_max_pool(nullptr, rows, {1, 1});
    CHECK(m.data == std::vector<double>{3, 5});
    Tensor m2 = ops::masked_max_pool(nullptr, rows, {1, 0});
    CHECK(m2.data == std::vector<double>{1, 5});
}

TEST_CASE("infonce oracles") {
    // no negatives -> exactly zero
    CHECK(ops::infonce(nullptr, Tensor::vec({0.3}), 0.07).scalar() == 0.0);
    // s+ = 1, two zero negatives, gamma 1: -log(e / (e + 2))
    double v = ops::infonce(nullptr, Tensor::vec({1, 0, 0}), 1.0).scalar();
    CHECK(v == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + 2.0))));
    CHECK(v == doctest::Approx(0.55144).epsilon(1e-4));
    // sharp temperature stays finite
    double sharp = ops::infonce(nullptr, Tensor::vec({1, 0}), 0.07).scalar();
    CHECK(std::isfinite(sharp));
    CHECK(sharp >= 0.0);
    // large temperature limit: loss -> log(1+K)
    double flat = ops::infonce(nullptr, Tensor::vec({1, 0, 0, 0}), 1e6).scalar();
    CHECK(std::abs(flat - std::log(4.0)) < 1e-3);
}

TEST_CASE("infonce monotonicity in positive and negative similarities") {
    double base = ops::infonce(nullptr, Tensor::vec({0.5, 0.1, 0.2}), 0.5).scalar();
    double pos_up = ops::infonce(nullptr, Tensor::vec({0.6, 0.1, 0.2}), 0.5).scalar();
    double neg_up = ops::infonce(nullptr, Tensor::vec({0.5, 0.3, 0.2}), 0.5).scalar();
    CHECK(pos_up < base);
    CHECK(neg_up > base);
}

TEST_CASE("triplet hinge oracles") {
    // diagonal dominant by more than the margin -> zero
    Tensor good = Tensor::mat(2, 2, {1.0, 0.1, 0.1, 1.0});
    CHECK(ops::triplet_hinge(nullptr, good, 0.2).scalar() == 0.0);
    // [[1,.9],[.9,1]] margin 0.2: violation 0.1 in each direction, mean over 2
    Tensor close = Tensor::mat(2, 2, {1.0, 0.9, 0.9, 1.0});
    CHECK(ops::triplet_hinge(nullptr, close, 0.2).scalar() == doctest::Approx(0.2));
    // identity with margin 0 -> zero
    Tensor eye = Tensor::mat(2, 2, {1, 0, 0, 1});
    CHECK(ops::triplet_hinge(nullptr, eye, 0.0).scalar() == 0.0);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(7);
    ParamStore s;
    Parameter& a = s.add("a", randmat(rng, 3, 4));
    Parameter& b = s.add("b", randmat(rng, 4, 2));
    fd_check(s, [&](Tape* t) {
        return ops::sum(t, ops::mul(t, ops::matmul(t, ops::param(t, a), ops::param(t, b)),
                                    ops::matmul(t, ops::param(t, a), ops::param(t, b))));
    });
}

TEST_CASE("elementwise and structural op gradients match finite differences") {
    Rng rng(11);
    ParamStore s;
    Parameter& a = s.add("a", randmat(rng, 2, 5));
    Parameter& b = s.add("b", randmat(rng, 2, 5));
    Parameter& v = s.add("v", randvec(rng, 5));
    fd_check(s, [&](Tape* t) {
        Tensor x = ops::add(t, ops::param(t, a), ops::param(t, b));
        x = ops::add_rowvec(t, x, ops::param(t, v));
        x = ops::mul(t, x, ops::param(t, a));
        x = ops::scale(t, x, 0.7);
        Tensor left = ops::slice_cols(t, x, 0, 3);
        Tensor right = ops::slice_cols(t, x, 3, 5);
        Tensor joined = ops::concat_cols(t, {left, right});
        return ops::sum(t, ops::mul(t, joined, joined));
    });
}

TEST_CASE("relu gradient matches finite differences away from the kink") {
    ParamStore s;
    Parameter& a = s.add("a", Tensor::mat(2, 3, {0.5, -0.7, 1.2, -0.3, 2.0, -1.5}));
    fd_check(s, [&](Tape* t) {
        Tensor r = ops::relu(t, ops::param(t, a));
        return ops::sum(t, ops::mul(t, r, r));
    });
}

TEST_CASE("softmax and layer_norm gradients match finite differences") {
    Rng rng(13);
    ParamStore s;
    Parameter& a = s.add("a", randmat(rng, 3, 4));
    Parameter& g = s.add("g", Tensor::full({4}, 1.1));
    Parameter& b = s.add("b", randvec(rng, 4, 0.1));
    Parameter& w = s.add("w", randmat(rng, 3, 4));
    fd_check(s, [&](Tape* t) {
        Tensor sm = ops::softmax_rows(t, ops::param(t, a), {1, 1, 0, 1});
        Tensor ln = ops::layer_norm(t, sm, ops::param(t, g), ops::param(t, b));
        return ops::sum(t, ops::mul(t, ln, ops::param(t, w)));
    });
}

TEST_CASE("pooling, gather and normalize gradients match finite differences") {
    Rng rng(17);
    ParamStore s;
    Parameter& table = s.add("table", randmat(rng, 6, 4));
    Parameter& w = s.add("w", randvec(rng, 4));
    fd_check(s, [&](Tape* t) {
        Tensor rows = ops::gather_rows(t, ops::param(t, table), {1, 4, 2, 4});
        Tensor mean = ops::masked_mean_pool(t, rows, {1, 1, 0, 1});
        Tensor mx = ops::masked_max_pool(t, rows, {1, 1, 1, 0});
        Tensor n = ops::l2_normalize(t, ops::add(t, mean, mx));
        return ops::dot(t, n, ops::param(t, w));
    });
}

TEST_CASE("row, concat and matvec_const gradients match finite differences") {
    Rng rng(19);
    ParamStore s;
    Parameter& m = s.add("m", randmat(rng, 3, 4));
    Parameter& v = s.add("v", randvec(rng, 4));
    Tensor bank = randmat(rng, 5, 4);  // constant block, no gradient expected
    fd_check(s, [&](Tape* t) {
        Tensor r0 = ops::row(t, ops::param(t, m), 0);
        Tensor r2 = ops::row(t, ops::param(t, m), 2);
        Tensor joined = ops::concat(t, {r0, r2, ops::param(t, v)});
        Tensor through_bank = ops::matvec_const(t, bank, ops::param(t, v));
        return ops::add(t, ops::sum(t, ops::mul(t, joined, joined)),
                        ops::sum(t, through_bank));
    });
}

TEST_CASE("infonce and triplet gradients match finite differences") {
    Rng rng(23);
    ParamStore s;
    Parameter& row = s.add("row", randvec(rng, 6, 0.3));
    Parameter& sim = s.add("sim", randmat(rng, 3, 3, 0.3));
    fd_check(s, [&](Tape* t) {
        Tensor a = ops::infonce(t, ops::param(t, row), 0.07);
        Tensor b = ops::triplet_hinge(t, ops::param(t, sim), 0.4);
        return ops::add(t, a, b);
    });
}

TEST_CASE("batch_norm training-mode gradient matches finite differences") {
    Rng rng(29);
    ParamStore s;
    Parameter& x = s.add("x", randmat(rng, 4, 3));
    Parameter& g = s.add("g", Tensor::full({3}, 0.9));
    Parameter& b = s.add("b", randvec(rng, 3, 0.1));
    // fixed per-element weights: sum(y*y) would be constant in x because the
    // normalized columns have exactly zero mean and unit second moment
    Tensor w = randmat(rng, 4, 3);
    fd_check(s, [&](Tape* t) {
        // fresh running buffers per call so repeated evaluation is pure
        std::vector<double> rm(3, 0.0), rv(3, 1.0);
        Tensor y = ops::batch_norm(t, ops::param(t, x), ops::param(t, g), ops::param(t, b),
                                   &rm, &rv, /*training=*/true);
        return ops::sum(t, ops::mul(t, ops::relu(t, y), w));
    });
}

TEST_CASE("batch_norm eval mode uses the frozen running buffers") {
    Tensor x = Tensor::mat(2, 2, {1, 2, 3, 4});
    Tensor g = Tensor::full({2}, 1.0), b = Tensor::zeros({2});
    std::vector<double> rm = {1.0, 2.0}, rv = {4.0, 9.0};
    Tensor y = ops::batch_norm(nullptr, x, g, b, &rm, &rv, /*training=*/false);
    CHECK(y.at(0, 0) == doctest::Approx((1.0 - 1.0) / std::sqrt(4.0 + 1e-8)));
    CHECK(y.at(1, 1) == doctest::Approx((4.0 - 2.0) / std::sqrt(9.0 + 1e-8)));
    // buffers untouched in eval mode
    CHECK(rm == std::vector<double>{1.0, 2.0});
}

TEST_CASE("no-record mode leaves outputs untracked") {
    ParamStore s;
    Parameter& a = s.add("a", Tensor::mat(2, 2, {1, 2, 3, 4}));
    Tensor out = ops::relu(nullptr, ops::param(nullptr, a));
    CHECK_FALSE(out.tracked());
}
