#include "centrifuge/attention.hpp"
#include "centrifuge/error.hpp"

#include "gradcheck.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>

using namespace centrifuge;

namespace {

void fill_mat(Parameter& p, int k) {
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = 0.4 * std::sin(0.7 * static_cast<double>(i) + 1.1 * k);
}
void fill_vec(Parameter& p, int k) {
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = 0.05 * std::cos(static_cast<double>(i) + k);
}
void fill_gain(Parameter& p, int k) {
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = 1.0 + 0.1 * std::sin(static_cast<double>(i) + k);
}

} // namespace

TEST_CASE("attention block forward matches a step-by-step reference") {
    Rng rng(1);
    AttentionBlock block("b", NetConfig{4, 2, 6, 1}, rng);
    fill_mat(block.wq, 1);
    fill_mat(block.wk, 2);
    fill_mat(block.wv, 3);
    fill_mat(block.wo, 4);
    fill_vec(block.bq, 1);
    fill_vec(block.bk, 2);
    fill_vec(block.bv, 3);
    fill_vec(block.bo, 4);
    fill_mat(block.w1, 5);
    fill_mat(block.w2, 6);
    fill_vec(block.b1, 5);
    fill_vec(block.b2, 6);
    fill_gain(block.ln1_gain, 7);
    fill_vec(block.ln1_bias, 7);
    fill_gain(block.ln2_gain, 8);
    fill_vec(block.ln2_bias, 8);
    Tensor x = Tensor::matrix(3, 4);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) x(r, c) = 0.8 * std::sin(static_cast<double>(r * 4 + c));
    const double ref[] = {-1.3626297007530798201, 0.90169326250332098879, 0.95649625004199693575,
                          -0.65886366949969970254, -0.76959644037202245609, -1.1211249890672082641,
                          0.11897130845499766349,  1.4010765415526330634,  1.4248089363800997247,
                          0.57384096942245474416,  -0.68333241425310601764, -1.0975620195466193143};
    Tensor y = attention_block_forward(x, block);
    REQUIRE(y.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) CHECK(std::abs(y[i] - ref[i]) < 1e-12);
}

TEST_CASE("gelu reference values") {
    const double xs[] = {-2, -0.5, 0, 1, 3};
    const double ref[] = {-0.045402305912224981219, -0.15428599017485607796, 0.0, 0.84119199060827670478,
                          2.9963626079182269812};
    Tape t;
    Var y = ops::gelu(t.constant(Tensor::vector({xs[0], xs[1], xs[2], xs[3], xs[4]})));
    for (int i = 0; i < 5; ++i) CHECK(std::abs(t.value(y)[i] - ref[i]) < 1e-15);
}

TEST_CASE("layer norm reference values") {
    const double ref[] = {-1.3416354199689269826, -0.44721180665630899419, 0.44721180665630899419,
                          1.3416354199689269826};
    Tape t;
    Var y = ops::layer_norm(t.constant(Tensor::from_rows({{1, 2, 3, 4}})), t.constant(Tensor::vector({1, 1, 1, 1})),
                            t.constant(Tensor::vector({0, 0, 0, 0})));
    for (int i = 0; i < 4; ++i) CHECK(std::abs(t.value(y)[i] - ref[i]) < 1e-15);
}

TEST_CASE("uniform initialisation stays inside its bound") {
    Rng rng(3);
    Tensor w = init_uniform(50, 20, rng);
    CHECK(w.rows() == 50);
    CHECK(w.cols() == 20);
    const double bound = std::sqrt(1.0 / 50.0);
    double lo = 1, hi = -1;
    for (double v : w.values()) {
        CHECK(std::abs(v) <= bound);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(lo < -0.8 * bound);
    CHECK(hi > 0.8 * bound);
}

TEST_CASE("encoder produces a distribution per sequence") {
    Rng rng(4);
    Encoder enc("e", NetConfig{8, 2, 16, 2}, 5, 6, true, rng);
    Tape t;
    Var x = t.constant(testutil::random_matrix(12, 8, rng));
    Var y = enc.forward(t, x, 6, InferBinder{});
    const Tensor& p = t.value(y);
    REQUIRE(p.rows() == 2);
    REQUIRE(p.cols() == 5);
    for (std::size_t r = 0; r < 2; ++r) {
        double s = 0;
        for (std::size_t c = 0; c < 5; ++c) s += p(r, c);
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("encoder gradients match finite differences") {
    Rng rng(5);
    Encoder enc("e", NetConfig{4, 2, 6, 1}, 3, 3, true, rng);
    Tensor x = testutil::random_matrix(6, 4, rng);
    auto params = enc.parameters();
    const std::vector<std::size_t> targets = {2, 0};
    for (auto* p : params) p->zero_grad();
    {
        Tape t;
        t.backward(ops::ce_label_smoothed(enc.forward(t, t.constant(x), 3, TrainBinder{}), targets, 0.1));
    }
    auto loss_at = [&] {
        Tape t;
        return t.value(ops::ce_label_smoothed(enc.forward(t, t.constant(x), 3, InferBinder{}), targets, 0.1))[0];
    };
    double worst = 0.0;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            worst = std::max(worst, testutil::relative_error(p->grad[i], testutil::central_difference(*p, i, 1e-4, loss_at)));
        }
    }
    CHECK(worst < 1e-5);
}

TEST_CASE("net config validation") {
    CHECK_THROWS_AS((NetConfig{6, 4, 8, 1}.validate()), ConfigError);
    CHECK_THROWS_AS((NetConfig{0, 1, 8, 1}.validate()), ConfigError);
    CHECK_THROWS_AS((NetConfig{8, 2, 0, 1}.validate()), ConfigError);
    CHECK_NOTHROW((NetConfig{8, 2, 8, 0}.validate()));
}
