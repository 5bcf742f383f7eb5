#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "cmr/optim.hpp"

using namespace cmr;

TEST_CASE("single adamw step matches the closed-form update") {
    AdamW::Config c;
    c.lr = 0.01;
    c.weight_decay = 0.1;
    AdamW opt(c);
    ParamStore s;
    Parameter& p = s.add("w", Tensor::vec({2.0, -1.0}));
    p.grad = {0.5, -0.25};
    opt.step(s);
    for (std::size_t i = 0; i < 2; ++i) {
        double g = std::vector<double>{0.5, -0.25}[i];
        double init = std::vector<double>{2.0, -1.0}[i];
        double m = (1 - c.beta1) * g, v = (1 - c.beta2) * g * g;
        double mhat = m / (1 - c.beta1);  // step 1 bias correction
        double vhat = v / (1 - c.beta2);
        double expect = init - c.lr * (mhat / (std::sqrt(vhat) + c.eps) + c.weight_decay * init);
        CHECK(p.value.data[i] == doctest::Approx(expect).epsilon(1e-14));
    }
    CHECK(opt.step_count() == 1);
}

TEST_CASE("zero gradients and zero weight decay leave parameters unchanged") {
    AdamW opt({});
    ParamStore s;
    Parameter& p = s.add("w", Tensor::vec({1.5, -2.5}));
    p.grad = {0.0, 0.0};
    opt.step(s);
    CHECK(p.value.data == std::vector<double>{1.5, -2.5});
}

TEST_CASE("identical parameters with identical gradients get identical updates") {
    AdamW opt({});
    ParamStore s;
    Parameter& a = s.add("a", Tensor::vec({0.7}));
    Parameter& b = s.add("b", Tensor::vec({0.7}));
    for (int i = 0; i < 5; ++i) {
        a.grad = {0.3};
        b.grad = {0.3};
        opt.step(s);
        CHECK(a.value.data[0] == b.value.data[0]);
    }
}

TEST_CASE("missing gradient is a contract error naming the parameter") {
    AdamW opt({});
    ParamStore s;
    s.add("encoder.w", Tensor::vec({1.0}));
    try {
        opt.step(s);
        FAIL("expected a throw");
    } catch (const TensorError& e) {
        CHECK(std::string(e.what()).find("encoder.w") != std::string::npos);
    }
}

TEST_CASE("non-trainable buffers are skipped") {
    AdamW opt({});
    ParamStore s;
    Parameter& buf = s.add("bn.running_mean", Tensor::vec({0.25}), /*trainable=*/false);
    Parameter& w = s.add("w", Tensor::vec({1.0}));
    w.grad = {1.0};
    opt.step(s);  // must not demand a gradient for the buffer
    CHECK(buf.value.data[0] == 0.25);
    CHECK(w.value.data[0] != 1.0);
}

TEST_CASE("weight decay is decoupled from the gradient") {
    AdamW::Config c;
    c.lr = 0.1;
    c.weight_decay = 0.5;
    AdamW opt(c);
    ParamStore s;
    Parameter& p = s.add("w", Tensor::vec({2.0}));
    p.grad = {0.0};
    opt.step(s);
    // zero gradient: only the decay term p -= lr * wd * p acts
    CHECK(p.value.data[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
}

TEST_CASE("moment state persists across steps") {
    AdamW opt({});
    ParamStore s;
    Parameter& p = s.add("w", Tensor::vec({0.0}));
    p.grad = {1.0};
    opt.step(s);
    double after_one = p.value.data[0];
    p.grad = {1.0};
    opt.step(s);
    CHECK(opt.step_count() == 2);
    CHECK(p.value.data[0] < after_one);  // keeps moving along the same slope
    CHECK(opt.slots().count("w") == 1);
}
