#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "shill/diffcore.hpp"

using namespace shill;

TEST_CASE("dense forward: identity, bias, hand product") {
    Rng rng(1);
    Dense d(2, 2, rng, 0.0);  // zero weights
    d.w.at(0, 0) = 1.0;
    d.w.at(1, 1) = 1.0;
    Tensor x = Tensor::row({3.0, -2.0});
    Tensor y = d.forward(x);
    CHECK(y.v == std::vector<double>{3.0, -2.0});

    Dense zb(2, 2, rng, 0.0);
    zb.b.v = {0.5, -1.5};
    Tensor yb = zb.forward(x);
    CHECK(yb.v == std::vector<double>{0.5, -1.5});

    // W = [[1,2],[3,4]] applied to [5,6]
    Dense h(2, 2, rng, 0.0);
    h.w.v = {1, 2, 3, 4};
    Tensor yh = h.forward(Tensor::row({5, 6}));
    CHECK(yh.v == std::vector<double>{17.0, 39.0});

    CHECK_THROWS_AS(d.forward(Tensor::row({1, 2, 3})), ValidationError);
}

TEST_CASE("activation values") {
    TanhLayer th;
    SigmoidLayer sg;
    Relu re;
    CHECK(th.forward(Tensor::row({0})).v[0] == 0.0);
    CHECK(sg.forward(Tensor::row({0})).v[0] == 0.5);
    CHECK(re.forward(Tensor::row({-1})).v[0] == 0.0);
    CHECK(re.forward(Tensor::row({2})).v[0] == 2.0);

    Tensor uni = softmax_rows(Tensor::row({1, 1, 1, 1}));
    for (double p : uni.v) CHECK(p == doctest::Approx(0.25));

    Tensor sm = softmax_rows(Tensor::row({1, 2, 3}));
    double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(std::fabs(sm.v[0] - std::exp(1.0) / z) < 1e-12);
    CHECK(std::fabs(sm.v[1] - std::exp(2.0) / z) < 1e-12);
    CHECK(std::fabs(sm.v[2] - std::exp(3.0) / z) < 1e-12);
}

TEST_CASE("softmax rows sum to one within 1e-12") {
    Rng rng(5);
    for (int rep = 0; rep < 50; ++rep) {
        Tensor x(3, 8);
        for (auto& v : x.v) v = rng.gaussian(0, 30.0);  // wide range, stability check
        Tensor p = softmax_rows(x);
        for (std::size_t r = 0; r < p.rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < p.cols; ++c) s += p.at(r, c);
            CHECK(std::fabs(s - 1.0) < 1e-12);
        }
    }
}

TEST_CASE("loss values") {
    Tensor x = Tensor::row({1, 2, 3});
    CHECK(mse(x, x) == 0.0);
    CHECK(bce(0.5, 1.0) == doctest::Approx(std::log(2.0)));
    CHECK(softmax_nll(Tensor::row({0, 0}), 0) == doctest::Approx(std::log(2.0)));

    Tensor mask = Tensor::row({1, 0, 1});
    Tensor target = Tensor::row({0, 0, 0});
    CHECK(masked_sse(x, target, mask) == doctest::Approx(1.0 + 9.0));
}

TEST_CASE("grad_check on elementary functions") {
    ScalarFn square{
        [](const Tensor& t) { return t.v[0] * t.v[0]; },
        [](const Tensor& t) {
            Tensor g(1, 1);
            g.v[0] = 2.0 * t.v[0];
            return g;
        },
    };
    CHECK(grad_check(square, Tensor::row({3.0}), 1e-5) <= 1e-8);

    ScalarFn relu_fn{
        [](const Tensor& t) { return t.v[0] > 0.0 ? t.v[0] : 0.0; },
        [](const Tensor& t) {
            Tensor g(1, 1);
            g.v[0] = t.v[0] > 0.0 ? 1.0 : 0.0;
            return g;
        },
    };
    CHECK(grad_check(relu_fn, Tensor::row({0.5}), 1e-5) <= 1e-8);

    ScalarFn bad{[](const Tensor& t) { return std::log(t.v[0]); },
                 [](const Tensor& t) {
                     Tensor g(1, 1);
                     g.v[0] = 1.0 / t.v[0];
                     return g;
                 }};
    CHECK_THROWS_AS(grad_check(bad, Tensor::row({1e-9}), 1e-5), DivergenceError);
}

TEST_CASE("grad_check on a dense+tanh+mse composite") {
    Rng rng(11);
    Dense layer(4, 3, rng, 0.5);
    Tensor target(1, 3);
    for (auto& v : target.v) v = rng.gaussian();

    ScalarFn fn{
        [&](const Tensor& x) {
            Dense d = layer;  // fresh caches per evaluation
            TanhLayer th;
            return mse(th.forward(d.forward(x)), target);
        },
        [&](const Tensor& x) {
            Dense d = layer;
            TanhLayer th;
            Tensor y = th.forward(d.forward(x));
            return d.backward(th.backward(mse_grad(y, target)));
        },
    };
    for (int rep = 0; rep < 5; ++rep) {
        Tensor x(1, 4);
        for (auto& v : x.v) v = rng.gaussian();
        CHECK(grad_check(fn, x, 1e-6) <= 1e-4);
    }
}

TEST_CASE("dense parameter gradients match finite differences") {
    Rng rng(17);
    Tensor x(2, 3);
    for (auto& v : x.v) v = rng.gaussian();
    Tensor target(2, 2);
    for (auto& v : target.v) v = rng.gaussian();
    Dense base(3, 2, rng, 0.5);

    ScalarFn wrt_w{
        [&](const Tensor& w) {
            Dense d = base;
            d.w = w;
            return mse(d.forward(x), target);
        },
        [&](const Tensor& w) {
            Dense d = base;
            d.w = w;
            d.w.ensure_grad();
            Tensor y = d.forward(x);
            d.backward(mse_grad(y, target));
            Tensor g(w.rows, w.cols);
            g.v = d.w.g;
            return g;
        },
    };
    CHECK(grad_check(wrt_w, base.w, 1e-6) <= 1e-6);
}

TEST_CASE("optimizer validates hyperparameters") {
    CHECK_THROWS_AS(Optimizer(OptKind::sgd, 0.0), ValidationError);
    CHECK_THROWS_AS(Optimizer(OptKind::adam, 0.1, 1.0, 0.999, 1e-8), ValidationError);
    CHECK_THROWS_AS(Optimizer(OptKind::adam, 0.1, 0.9, 1.0, 1e-8), ValidationError);
}

TEST_CASE("sgd step descends along the gradient") {
    Tensor p = Tensor::row({1.0, -2.0});
    p.ensure_grad();
    p.g = {0.5, -0.5};
    Optimizer opt(OptKind::sgd, 0.1);
    opt.step({&p});
    CHECK(p.v[0] == doctest::Approx(0.95));
    CHECK(p.v[1] == doctest::Approx(-1.95));
}

TEST_CASE("adam is bit-reproducible for fixed gradients") {
    auto run = [] {
        Tensor p = Tensor::row({0.3, 0.7, -1.1});
        p.ensure_grad();
        Optimizer opt(OptKind::adam, 0.01);
        Rng rng(99);
        for (int step = 0; step < 200; ++step) {
            for (auto& g : p.g) g = rng.gaussian();
            opt.step({&p});
        }
        return p.v;
    };
    auto a = run(), b = run();
    CHECK(a == b);  // bitwise
}

TEST_CASE("optimizer requires gradients") {
    Tensor p = Tensor::row({1.0});
    Optimizer opt(OptKind::sgd, 0.1);
    CHECK_THROWS_AS(opt.step({&p}), ValidationError);
}

TEST_CASE("non-finite tensors are reported") {
    Tensor t = Tensor::row({1.0, std::nan("")});
    CHECK_THROWS_AS(t.check_finite("test"), DivergenceError);
}
