#include "doctest.h"
#include "testutil.hpp"
#include "vilocal/hp3d.hpp"
#include "vilocal/rng.hpp"

#include <cmath>
#include <fstream>

using namespace vilocal;

namespace {

Tensor random_unit(Rng& rng, int h, int w) {
    Tensor t = Tensor::uninitialized({5, h, w, 3});
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform();
    return t;
}

// Independent brute-force reference: sliding dot-product per channel, temporal
// clamp at the sequence ends, one-pixel spatial border forced to zero.
Tensor reference_residual(const Tensor& x, const Hp3dKernel& k) {
    int T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    Tensor out({T, H, W, C}, 0.0);
    for (int t = 0; t < T; ++t)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int c = 0; c < C; ++c) {
                    if (h == 0 || h == H - 1 || w == 0 || w == W - 1) continue;
                    double acc = 0.0;
                    for (int i = 0; i < 27; ++i) {
                        int dt = i / 9 - 1, dh = (i / 3) % 3 - 1, dw = i % 3 - 1;
                        int ts = t + dt;
                        if (ts < 0) ts = 0;
                        if (ts >= T) ts = T - 1;
                        acc += k.coeff[i] * x[((std::int64_t(ts) * H + h + dh) * W + w + dw) * C + c];
                    }
                    out[((std::int64_t(t) * H + h) * W + w) * C + c] = acc;
                }
    return out;
}

// zero-sum but deliberately asymmetric, to pin the tap orientation
Hp3dKernel asymmetric_kernel() {
    Hp3dKernel k;
    Rng rng(321);
    double sum = 0.0;
    for (int i = 0; i < 27; ++i) {
        k.coeff[i] = rng.uniform(-1.0, 1.0);
        sum += k.coeff[i];
    }
    for (int i = 0; i < 27; ++i) k.coeff[i] -= sum / 27.0;
    k.coeff[13] = std::abs(k.coeff[13]) + 0.5;
    double resum = 0.0;
    for (int i = 0; i < 27; ++i) resum += k.coeff[i];
    for (int i = 0; i < 27; ++i)
        if (i != 13) k.coeff[i] -= resum / 26.0;
    return k;
}

}  // namespace

TEST_CASE("laplacian kernel invariants") {
    Hp3dKernel k = Hp3dKernel::laplacian();
    CHECK(std::abs(k.sum()) < 1e-12);
    CHECK(k.coeff[13] == 1.0);
    CHECK_NOTHROW(k.validate());

    Hp3dKernel bad = k;
    bad.coeff[0] += 0.1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = k;
    bad.coeff[13] = -1.0;
    bad.coeff[0] += 2.0;  // keep the sum at zero
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("kernel file round trip") {
    testutil::TempDir dir("hp3d");
    Hp3dKernel k = asymmetric_kernel();
    {
        std::ofstream out(dir.file("k.txt"));
        out.precision(17);
        for (int i = 0; i < 27; ++i) out << k.coeff[i] << "\n";
    }
    Hp3dKernel loaded = Hp3dKernel::from_file(dir.file("k.txt"));
    for (int i = 0; i < 27; ++i) CHECK(loaded.coeff[i] == doctest::Approx(k.coeff[i]).epsilon(1e-15));
    CHECK_THROWS(Hp3dKernel::from_file(dir.file("absent.txt")));
    {
        std::ofstream out(dir.file("short.txt"));
        out << "1 2 3\n";
    }
    CHECK_THROWS(Hp3dKernel::from_file(dir.file("short.txt")));
}

TEST_CASE("constant volumes give an exactly zero residual") {
    for (double v : {0.0, 0.5, 1.0}) {
        Tensor x({5, 8, 10, 3}, v);
        Tensor r = hp3d_residual(x, Hp3dKernel::laplacian());
        for (std::int64_t i = 0; i < r.size(); ++i) CHECK(r[i] == 0.0);
    }
}

TEST_CASE("unit impulse reproduces the flipped kernel") {
    Hp3dKernel k = asymmetric_kernel();
    int H = 9, W = 9;
    Tensor x({5, H, W, 3}, 0.0);
    int tc = 2, hc = 4, wc = 4, cc = 1;
    x[((std::int64_t(tc) * H + hc) * W + wc) * 3 + cc] = 1.0;
    Tensor r = hp3d_residual(x, k);
    for (int dt = -1; dt <= 1; ++dt)
        for (int dh = -1; dh <= 1; ++dh)
            for (int dw = -1; dw <= 1; ++dw) {
                double got = r[((std::int64_t(tc + dt) * H + hc + dh) * W + wc + dw) * 3 + cc];
                double expect = k.coeff[((1 - dt) * 3 + (1 - dh)) * 3 + (1 - dw)];
                CHECK(got == doctest::Approx(expect).epsilon(1e-12));
            }
}

TEST_CASE("matches the brute-force oracle on random volumes") {
    Rng rng(404);
    Hp3dKernel lap = Hp3dKernel::laplacian();
    Hp3dKernel asym = asymmetric_kernel();
    for (int rep = 0; rep < 10; ++rep) {
        Tensor x = random_unit(rng, 8, 8);
        for (const Hp3dKernel& k : {lap, asym}) {
            Tensor got = hp3d_residual(x, k);
            Tensor want = reference_residual(x, k);
            REQUIRE(got.shape() == x.shape());
            for (std::int64_t i = 0; i < got.size(); ++i)
                CHECK(std::abs(got[i] - want[i]) < 1e-6);
        }
    }
}

TEST_CASE("linearity") {
    Rng rng(405);
    Hp3dKernel k = Hp3dKernel::laplacian();
    Tensor x = random_unit(rng, 8, 10);
    Tensor y = random_unit(rng, 8, 10);
    double a = 0.7, b = -1.3;
    Tensor mix = Tensor::uninitialized(x.shape());
    for (std::int64_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * y[i];
    Tensor rx = hp3d_residual(x, k), ry = hp3d_residual(y, k), rmix = hp3d_residual(mix, k);
    for (std::int64_t i = 0; i < rmix.size(); ++i)
        CHECK(std::abs(rmix[i] - (a * rx[i] + b * ry[i])) < 1e-6);
}

TEST_CASE("input validation") {
    Hp3dKernel k = Hp3dKernel::laplacian();
    CHECK_THROWS_AS(hp3d_residual(Tensor({4, 8, 8, 3}, 0.0), k), std::invalid_argument);
    Tensor bad({5, 8, 8, 3}, 0.0);
    bad[7] = std::nan("");
    CHECK_THROWS_AS(hp3d_residual(bad, k), std::invalid_argument);
}

TEST_CASE("spatial border of the residual is zero") {
    Rng rng(406);
    Tensor x = random_unit(rng, 6, 7);
    Tensor r = hp3d_residual(x, Hp3dKernel::laplacian());
    int H = 6, W = 7;
    for (int t = 0; t < 5; ++t)
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                if (h == 0 || h == H - 1 || w == 0 || w == W - 1)
                    for (int c = 0; c < 3; ++c)
                        CHECK(r[((std::int64_t(t) * H + h) * W + w) * 3 + c] == 0.0);
}
