#include "doctest.h"
#include "testutil.hpp"
#include "vilocal/rng.hpp"
#include "vilocal/tensor.hpp"

#include <cmath>

using namespace vilocal;
using testutil::gradient_check;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::uninitialized(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

// Reduces an arbitrary op output to a scalar with fixed random weights so the
// gradient has no accidental structure.
Var weighted_sum(const Var& y, const Tensor& weights) { return sum_all(mul(y, constant(weights))); }

}  // namespace

TEST_CASE("tensor basics") {
    Tensor t({2, 3}, 1.5);
    CHECK(t.size() == 6);
    CHECK(t[5] == 1.5);
    Tensor r = t.reshaped({3, 2});
    CHECK(r.dim(0) == 3);
    CHECK(r[0] == 1.5);
    CHECK_THROWS_AS(t.reshaped({4, 2}), std::invalid_argument);

    Tensor f = Tensor::from({2, 2}, {1, 2, 3, 4});
    CHECK(f[3] == 4.0);
    CHECK(f.all_finite());
    f[0] = std::nan("");
    CHECK_FALSE(f.all_finite());
}

TEST_CASE("elementwise forward values") {
    Var a = constant(Tensor::from({3}, {1, -2, 3}));
    Var b = constant(Tensor::from({3}, {0.5, 4, -1}));
    CHECK(add(a, b)->value[1] == 2.0);
    CHECK(sub(a, b)->value[2] == 4.0);
    CHECK(mul(a, b)->value[0] == 0.5);
    CHECK(scale(a, -2)->value[2] == -6.0);
    CHECK(add_scalar(a, 10)->value[1] == 8.0);
    CHECK(relu(a)->value[1] == 0.0);
    CHECK(relu(a)->value[2] == 3.0);
    CHECK(sigmoid(constant(Tensor({1}, 0.0)))->value[0] == doctest::Approx(0.5));
}

TEST_CASE("elementwise and reduction gradients") {
    Rng rng(11);
    Tensor w = random_tensor({4, 3}, rng);
    Var x = leaf(random_tensor({4, 3}, rng));
    // keep relu inputs away from the kink
    for (std::int64_t i = 0; i < x->value.size(); ++i)
        if (std::abs(x->value[i]) < 0.05) x->value[i] += 0.1;

    CHECK(gradient_check(x, [&] { return weighted_sum(add(x, constant(w)), w); }) < 1e-6);
    CHECK(gradient_check(x, [&] { return weighted_sum(mul(x, constant(w)), w); }) < 1e-6);
    CHECK(gradient_check(x, [&] { return weighted_sum(scale(x, -1.7), w); }) < 1e-6);
    CHECK(gradient_check(x, [&] { return weighted_sum(relu(x), w); }) < 1e-6);
    CHECK(gradient_check(x, [&] { return weighted_sum(gelu(x), w); }) < 1e-5);
    CHECK(gradient_check(x, [&] { return weighted_sum(sigmoid(x), w); }) < 1e-5);
    CHECK(gradient_check(x, [&] { return sum_all(x); }) < 1e-6);
    CHECK(gradient_check(x, [&] { return mean_all(x); }) < 1e-6);
    Tensor w3 = random_tensor({3}, rng);
    CHECK(gradient_check(x, [&] { return weighted_sum(mean_axis0(x, 4), w3); }) < 1e-6);
}

TEST_CASE("matmul and linear gradients") {
    Rng rng(12);
    Var a = leaf(random_tensor({3, 4}, rng));
    Var b = leaf(random_tensor({4, 2}, rng));
    Tensor w = random_tensor({3, 2}, rng);

    CHECK(gradient_check(a, [&] { return weighted_sum(matmul(a, b), w); }) < 1e-5);
    CHECK(gradient_check(b, [&] { return weighted_sum(matmul(a, b), w); }) < 1e-5);

    Var at = leaf(random_tensor({4, 3}, rng));
    CHECK(gradient_check(at, [&] { return weighted_sum(matmul(at, b, true, false), w); }) < 1e-5);
    Var bt = leaf(random_tensor({2, 4}, rng));
    CHECK(gradient_check(bt, [&] { return weighted_sum(matmul(a, bt, false, true), w); }) < 1e-5);

    Var bias = leaf(random_tensor({2}, rng));
    CHECK(gradient_check(bias, [&] { return weighted_sum(linear(a, b, bias), w); }) < 1e-5);
}

TEST_CASE("indexing op gradients") {
    Rng rng(13);
    Var x = leaf(random_tensor({5, 3}, rng));
    Tensor w = random_tensor({3, 3}, rng);
    std::vector<int> rows{4, 0, 2};
    CHECK(gradient_check(x, [&] { return weighted_sum(gather_rows(x, rows), w); }) < 1e-6);
    CHECK_THROWS_AS(gather_rows(x, {5}), std::out_of_range);

    Tensor w2 = random_tensor({5, 2}, rng);
    CHECK(gradient_check(x, [&] { return weighted_sum(slice_cols(x, 1, 3), w2); }) < 1e-6);

    Var y = leaf(random_tensor({5, 2}, rng));
    Tensor w5 = random_tensor({5, 5}, rng);
    CHECK(gradient_check(x, [&] { return weighted_sum(concat_cols({x, y}), w5); }) < 1e-6);
    CHECK(gradient_check(y, [&] { return weighted_sum(concat_cols({x, y}), w5); }) < 1e-6);
}

TEST_CASE("normalization gradients") {
    Rng rng(14);
    Var x = leaf(random_tensor({6, 4}, rng));
    Var g = leaf(random_tensor({4}, rng, 0.5, 1.5));
    Var b = leaf(random_tensor({4}, rng));
    Tensor w = random_tensor({6, 4}, rng);

    CHECK(gradient_check(x, [&] { return weighted_sum(layer_norm(x, g, b), w); }) < 1e-4);
    CHECK(gradient_check(g, [&] { return weighted_sum(layer_norm(x, g, b), w); }) < 1e-5);
    CHECK(gradient_check(b, [&] { return weighted_sum(layer_norm(x, g, b), w); }) < 1e-5);

    CHECK(gradient_check(x, [&] { return weighted_sum(softmax_lastdim(x), w); }) < 1e-4);
    CHECK(gradient_check(x, [&] { return weighted_sum(l2_normalize_rows(x), w); }) < 1e-4);

    SUBCASE("softmax rows sum to one") {
        Tensor s = softmax_lastdim(x)->value;
        for (int i = 0; i < 6; ++i) {
            double sum = 0;
            for (int j = 0; j < 4; ++j) sum += s[i * 4 + j];
            CHECK(sum == doctest::Approx(1.0));
        }
    }
    SUBCASE("l2 rows unit length") {
        Tensor n = l2_normalize_rows(x)->value;
        for (int i = 0; i < 6; ++i) {
            double sum = 0;
            for (int j = 0; j < 4; ++j) sum += n[i * 4 + j] * n[i * 4 + j];
            CHECK(sum == doctest::Approx(1.0));
        }
    }
}

TEST_CASE("batch norm training vs eval") {
    Rng rng(15);
    Var x = leaf(random_tensor({8, 3}, rng));
    Var g = leaf(random_tensor({3}, rng, 0.5, 1.5));
    Var b = leaf(random_tensor({3}, rng));
    Tensor rm({3}, 0.0), rv({3}, 1.0);
    Tensor w = random_tensor({8, 3}, rng);

    // gradient through batch statistics; buffers reset every rebuild
    CHECK(gradient_check(x, [&] {
              Tensor m({3}, 0.0), v({3}, 1.0);
              return weighted_sum(batch_norm(x, g, b, m, v, true), w);
          }) < 1e-4);

    Var train = batch_norm(x, g, b, rm, rv, true);
    CHECK(rm[0] != 0.0);  // running buffers updated
    // eval mode is an affine map using the stored statistics
    Var eval1 = batch_norm(x, g, b, rm, rv, false);
    Var eval2 = batch_norm(x, g, b, rm, rv, false);
    for (std::int64_t i = 0; i < eval1->value.size(); ++i) CHECK(eval1->value[i] == eval2->value[i]);
    CHECK(train->value.all_finite());
}

TEST_CASE("conv3d matches direct summation") {
    Rng rng(16);
    Conv3dSpec sp;
    sp.st = 2;
    sp.sh = 1;
    sp.sw = 2;
    int T = 5, H = 4, W = 6, CIN = 2, COUT = 3;
    Tensor x = random_tensor({T, H, W, CIN}, rng);
    Tensor wt = random_tensor({27 * CIN, COUT}, rng);
    Tensor bias = random_tensor({COUT}, rng);
    Var out = conv3d(constant(x), constant(wt), constant(bias), sp);

    int OT = conv_out_extent(T, 3, sp.st, sp.pt);
    int OH = conv_out_extent(H, 3, sp.sh, sp.ph);
    int OW = conv_out_extent(W, 3, sp.sw, sp.pw);
    REQUIRE(out->value.shape() == Shape{OT, OH, OW, COUT});

    for (int ot = 0; ot < OT; ++ot)
        for (int oh = 0; oh < OH; ++oh)
            for (int ow = 0; ow < OW; ++ow)
                for (int co = 0; co < COUT; ++co) {
                    double acc = bias[co];
                    for (int dt = 0; dt < 3; ++dt)
                        for (int dh = 0; dh < 3; ++dh)
                            for (int dw = 0; dw < 3; ++dw)
                                for (int ci = 0; ci < CIN; ++ci) {
                                    int t = ot * sp.st - sp.pt + dt;
                                    int h = oh * sp.sh - sp.ph + dh;
                                    int w = ow * sp.sw - sp.pw + dw;
                                    if (t < 0 || t >= T || h < 0 || h >= H || w < 0 || w >= W) continue;
                                    double xv = x[((std::int64_t(t) * H + h) * W + w) * CIN + ci];
                                    double wv = wt[((std::int64_t(dt) * 3 + dh) * 3 + dw) * CIN * COUT +
                                                   ci * COUT + co];
                                    acc += xv * wv;
                                }
                    double got = out->value[((std::int64_t(ot) * OH + oh) * OW + ow) * COUT + co];
                    CHECK(got == doctest::Approx(acc).epsilon(1e-9));
                }
}

TEST_CASE("conv3d gradients, including valid temporal padding") {
    Rng rng(17);
    for (int pt : {1, 0}) {
        Conv3dSpec sp;
        sp.st = 2;
        sp.pt = pt;
        Var x = leaf(random_tensor({5, 4, 4, 2}, rng));
        Var wt = leaf(random_tensor({27 * 2, 2}, rng, -0.3, 0.3));
        Var bias = leaf(random_tensor({2}, rng));
        Shape out_shape = conv3d(x, wt, bias, sp)->value.shape();
        Tensor w = random_tensor(out_shape, rng);
        CHECK(gradient_check(x, [&] { return weighted_sum(conv3d(x, wt, bias, sp), w); }) < 1e-4);
        CHECK(gradient_check(wt, [&] { return weighted_sum(conv3d(x, wt, bias, sp), w); }) < 1e-4);
        CHECK(gradient_check(bias, [&] { return weighted_sum(conv3d(x, wt, bias, sp), w); }) < 1e-5);
    }
}

TEST_CASE("depthwise conv3d gradients and oracle") {
    Rng rng(18);
    Var x = leaf(random_tensor({3, 4, 5, 2}, rng));
    Var wt = leaf(random_tensor({27, 2}, rng, -0.3, 0.3));
    Var bias = leaf(random_tensor({2}, rng));
    Var out = depthwise_conv3d(x, wt, bias);
    REQUIRE(out->value.shape() == x->value.shape());

    // direct summation oracle
    int T = 3, H = 4, W = 5, C = 2;
    for (int t = 0; t < T; ++t)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int c = 0; c < C; ++c) {
                    double acc = bias->value[c];
                    int tap = 0;
                    for (int dt = -1; dt <= 1; ++dt)
                        for (int dh = -1; dh <= 1; ++dh)
                            for (int dw = -1; dw <= 1; ++dw, ++tap) {
                                int ts = t + dt, hs = h + dh, ws = w + dw;
                                if (ts < 0 || ts >= T || hs < 0 || hs >= H || ws < 0 || ws >= W)
                                    continue;
                                acc += x->value[((std::int64_t(ts) * H + hs) * W + ws) * C + c] *
                                       wt->value[tap * C + c];
                            }
                    double got = out->value[((std::int64_t(t) * H + h) * W + w) * C + c];
                    CHECK(got == doctest::Approx(acc).epsilon(1e-9));
                }

    Tensor w = random_tensor({3, 4, 5, 2}, rng);
    CHECK(gradient_check(x, [&] { return weighted_sum(depthwise_conv3d(x, wt, bias), w); }) < 1e-4);
    CHECK(gradient_check(wt, [&] { return weighted_sum(depthwise_conv3d(x, wt, bias), w); }) < 1e-4);
    CHECK(gradient_check(bias, [&] { return weighted_sum(depthwise_conv3d(x, wt, bias), w); }) < 1e-5);
}

TEST_CASE("bilinear upsample") {
    SUBCASE("constant maps stay constant") {
        Var x = constant(Tensor({3, 5}, 0.37));
        Tensor up = bilinear_upsample(x, 4)->value;
        REQUIRE(up.shape() == Shape{12, 20});
        for (std::int64_t i = 0; i < up.size(); ++i) CHECK(up[i] == doctest::Approx(0.37).epsilon(1e-12));
    }
    SUBCASE("gradient") {
        Rng rng(19);
        Var x = leaf(random_tensor({3, 4}, rng));
        Tensor w = random_tensor({12, 16}, rng);
        CHECK(gradient_check(x, [&] { return weighted_sum(bilinear_upsample(x, 4), w); }) < 1e-5);
    }
    SUBCASE("graph and value paths agree") {
        Rng rng(20);
        Tensor x = random_tensor({4, 6}, rng);
        Tensor a = bilinear_upsample(constant(x), 4)->value;
        Tensor b = bilinear_upsample_value(x, 4);
        for (std::int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
}

TEST_CASE("inference mode drops graph structure but not values") {
    Rng rng(21);
    Tensor xv = random_tensor({4, 3}, rng);
    Var g = constant(random_tensor({3}, rng, 0.5, 1.5));
    Var b = constant(random_tensor({3}, rng));

    Tensor with_graph = layer_norm(constant(xv), g, b)->value;
    Tensor without;
    {
        InferenceModeGuard guard;
        CHECK(inference_mode_active());
        Var y = layer_norm(constant(xv), g, b);
        CHECK(y->parents.empty());
        CHECK_FALSE(static_cast<bool>(y->backprop));
        without = y->value;
    }
    CHECK_FALSE(inference_mode_active());
    REQUIRE(with_graph.size() == without.size());
    for (std::int64_t i = 0; i < with_graph.size(); ++i) CHECK(with_graph[i] == without[i]);
}

TEST_CASE("shape validation errors") {
    Var a = constant(Tensor({2, 2}, 1.0));
    Var b = constant(Tensor({2, 3}, 1.0));
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(matmul(b, a), std::invalid_argument);  // inner dims 3 vs 2
    CHECK_THROWS_AS(reshape(a, {5}), std::invalid_argument);
}
