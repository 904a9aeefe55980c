#include "centrifuge/error.hpp"
#include "centrifuge/rng.hpp"
#include "centrifuge/tensor.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace centrifuge;

TEST_CASE("tensor shape and row-major indexing") {
    Tensor t = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t(1, 0) == 4.0);
    CHECK(t[5] == 6.0);
    CHECK(t.shape_str() == "[2x3]");
    CHECK_THROWS_AS(Tensor::from_rows({{1, 2}, {3}}), DimensionError);
    CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), DimensionError);
    Tensor v = Tensor::vector({1, 2});
    CHECK(v.rows() == 1);
    CHECK(v.cols() == 2);
}

TEST_CASE("linear_forward matches a hand-computed product") {
    Tensor x = Tensor::from_rows({{1, 2, 3}, {-1, 0, 2}});
    Parameter w("w", Tensor::from_rows({{1, 0}, {2, -1}, {0.5, 3}}));
    Parameter b("b", Tensor::vector({0.25, -0.5}));
    Tensor y = linear_forward(x, w, &b);
    // [1+4+1.5, 0-2+9] and [-1+0+1, 0+0+6]
    CHECK(y(0, 0) == doctest::Approx(6.75).epsilon(1e-15));
    CHECK(y(0, 1) == doctest::Approx(6.5).epsilon(1e-15));
    CHECK(y(1, 0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(y(1, 1) == doctest::Approx(5.5).epsilon(1e-15));
    Parameter bad("bad", Tensor::matrix(2, 2));
    CHECK_THROWS_AS(linear_forward(x, bad), DimensionError);
}

TEST_CASE("softmax matches high-precision reference values") {
    const double ref[] = {0.090030573170380457998, 0.24472847105479765247, 0.66524095577482188953};
    Tensor a = softmax(Tensor::vector({1, 2, 3}));
    Tensor b = softmax(Tensor::vector({1000, 1001, 1002}));
    for (int i = 0; i < 3; ++i) {
        CHECK(std::abs(a[i] - ref[i]) < 1e-15);
        CHECK(std::abs(b[i] - ref[i]) < 1e-15);
    }
    const double mixed[] = {0.01028534043089268857, 0.027958453992810721676, 0.9258568400382327532,
                            0.035899365538063836551};
    Tensor c = softmax(Tensor::vector({-1, 0, 3.5, 0.25}));
    for (int i = 0; i < 4; ++i) CHECK(std::abs(c[i] - mixed[i]) < 1e-15);
}

TEST_CASE("softmax rejects non-finite logits") {
    CHECK_THROWS_AS(softmax(Tensor::vector({1, NAN, 0})), InputError);
    CHECK_THROWS_AS(softmax(Tensor::vector({INFINITY, 0})), InputError);
}

TEST_CASE("label-smoothed cross-entropy reference values") {
    Tensor p = softmax(Tensor::vector({0.5, -1, 2}));
    CHECK(std::abs(ce_label_smoothed(p, 2, 0.1) - 0.39131129665715706021) < 1e-14);
    CHECK(std::abs(ce_label_smoothed(p, 0, 0.1) - 1.7413112966571570602) < 1e-14);
    CHECK(std::abs(ce_label_smoothed(p, 2, 0.0) + std::log(p[2])) < 1e-15);
    CHECK_THROWS_AS(ce_label_smoothed(p, 3, 0.1), DimensionError);
    CHECK_THROWS_AS(ce_label_smoothed(p, 0, 1.0), ConfigError);
    CHECK_THROWS_AS(ce_label_smoothed(p, 0, -0.1), ConfigError);
}

TEST_CASE("uniform prediction costs ln(C) for any smoothing") {
    for (std::size_t c : {2u, 3u, 9u, 51u}) {
        Tensor p = Tensor::vector(std::vector<double>(c, 1.0 / static_cast<double>(c)));
        for (double eps : {0.0, 0.1, 0.5}) {
            CHECK(std::abs(ce_label_smoothed(p, c - 1, eps) - std::log(static_cast<double>(c))) <= 1e-9);
        }
    }
}

TEST_CASE("cosine schedule endpoints and midpoints") {
    LRSchedule s{0.025, 400};
    CHECK(cosine_lr(0, s) == 0.025);
    CHECK(cosine_lr(400, s) == 0.0);
    CHECK(cosine_lr(10000, s) == 0.0);
    CHECK(std::abs(cosine_lr(200, s) - 0.0125) < 1e-17);
    CHECK(std::abs(cosine_lr(100, s) - 0.021338834764831844055) < 1e-17);
    for (std::size_t t = 1; t <= 400; ++t) CHECK(cosine_lr(t, s) <= cosine_lr(t - 1, s));
    CHECK_THROWS_AS((LRSchedule{0.025, 0}.validate()), ConfigError);
}

TEST_CASE("SGD with momentum follows the scalar recurrence") {
    // Loss w^2, so the gradient is 2w.
    const double plain[] = {0.9499975, 0.85749300000625, 0.73136215627906248437};
    const double nesterov[] = {0.90499525, 0.7785143775225625, 0.63144585097424458033};
    for (bool nest : {false, true}) {
        Parameter p("w", Tensor::vector({1.0}));
        for (int i = 0; i < 3; ++i) {
            p.grad[0] = 2.0 * p.value[0];
            sgd_step(p, 0.025, 1e-4, 0.9, nest);
            CHECK(std::abs(p.value[0] - (nest ? nesterov[i] : plain[i])) < 1e-15);
        }
    }
}

TEST_CASE("SGD leaves frozen parameters untouched") {
    Parameter p("w", Tensor::vector({1.0, -2.0}));
    p.grad.fill(3.0);
    p.trainable = false;
    sgd_step(p, 0.1, OptimizerConfig{});
    CHECK(p.value[0] == 1.0);
    CHECK(p.value[1] == -2.0);
    CHECK(p.momentum_buf[0] == 0.0);
}

TEST_CASE("optimizer config validation") {
    CHECK_THROWS_AS((OptimizerConfig{0.0, 1e-4, 0.9, false}.validate()), ConfigError);
    CHECK_THROWS_AS((OptimizerConfig{0.1, -1.0, 0.9, false}.validate()), ConfigError);
    CHECK_THROWS_AS((OptimizerConfig{0.1, 0.0, 1.0, false}.validate()), ConfigError);
    CHECK_NOTHROW(OptimizerConfig{}.validate());
}

TEST_CASE("rng is reproducible and in range") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next() == b.next());
    Rng r(7);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto v = r.below(5);
        CHECK(v < 5);
        seen.insert(v);
        const double u = r.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    CHECK(seen.size() == 5);
}
