#include "doctest.h"
#include "testutil.hpp"
#include "vilocal/encoder.hpp"
#include "vilocal/rng.hpp"

#include <cmath>

using namespace vilocal;

namespace {

EncoderConfig micro_cfg() {
    EncoderConfig cfg;
    cfg.in_h = 8;
    cfg.in_w = 8;
    cfg.stage_channels = {2, 2, 4};
    cfg.stage_depths = {1, 1, 1};
    cfg.stage_downsample = {1, 2, 2};
    cfg.n_global_stages = 1;
    cfg.heads = 1;
    cfg.mlp_ratio = 1;
    cfg.embed_dim = 4;
    cfg.param_budget = 1000;
    return cfg;
}

EncoderConfig small_cfg(int h = 48, int w = 64) {
    EncoderConfig cfg;
    cfg.in_h = h;
    cfg.in_w = w;
    cfg.stage_channels = {8, 12, 16};
    cfg.stage_depths = {1, 1, 1};
    cfg.heads = 2;
    cfg.embed_dim = 16;
    return cfg;
}

Tensor random_noise(const EncoderConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::uninitialized({cfg.in_t, cfg.in_h, cfg.in_w, cfg.in_c});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(-1.0, 1.0);
    return x;
}

}  // namespace

TEST_CASE("config validation") {
    EncoderConfig cfg = small_cfg();
    CHECK_NOTHROW(cfg.validate());

    SUBCASE("total downsample must be 4") {
        cfg.stage_downsample = {1, 2, 1};
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
        cfg.stage_downsample = {2, 2, 2};
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("schedule lists must agree in length") {
        cfg.stage_depths = {1, 1};
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
    SUBCASE("input must be divisible by 4") {
        cfg.in_h = 50;
        CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    }
}

TEST_CASE("temporal schedule ends at extent 1") {
    EncoderConfig cfg = small_cfg();
    auto ts = cfg.stage_t();
    REQUIRE_FALSE(ts.empty());
    CHECK(ts.front() == cfg.in_t);
    CHECK(ts.back() == 1);

    EncoderConfig dflt;  // desk default
    CHECK(dflt.stage_t().back() == 1);
}

TEST_CASE("initialization is deterministic and budget-checked") {
    EncoderConfig cfg = micro_cfg();
    Encoder a(cfg, 5), b(cfg, 5), c(cfg, 6);
    CHECK(a.checksum() == b.checksum());
    CHECK(a.checksum() != c.checksum());
    CHECK(a.param_count() <= 1000);

    EncoderConfig tight = micro_cfg();
    tight.param_budget = 10;
    CHECK_THROWS_AS(Encoder(tight, 5), std::invalid_argument);

    EncoderConfig dflt;  // desk default stays within the declared budget
    dflt.in_h = 120;
    dflt.in_w = 216;
    Encoder desk(dflt, 1);
    CHECK(desk.param_count() <= dflt.param_budget);
}

TEST_CASE("encode shape contract and determinism") {
    EncoderConfig cfg = small_cfg();
    Encoder enc(cfg, 3);
    Tensor x = random_noise(cfg, 17);
    Tensor e1 = enc.encode_value(x);
    Tensor e2 = enc.encode_value(x);
    REQUIRE(e1.shape() == Shape{cfg.out_h() * cfg.out_w(), cfg.embed_dim});
    CHECK(e1.all_finite());
    for (std::int64_t i = 0; i < e1.size(); ++i) CHECK(e1[i] == e2[i]);

    // value path agrees with the graph path
    Tensor eg = enc.encode(x)->value;
    for (std::int64_t i = 0; i < e1.size(); ++i) CHECK(e1[i] == doctest::Approx(eg[i]).epsilon(1e-12));

    Tensor bad = Tensor({5, 40, 64, 3}, 0.0);
    CHECK_THROWS_AS(enc.encode_value(bad), std::invalid_argument);
}

TEST_CASE("micro-config end-to-end gradient probe") {
    EncoderConfig cfg = micro_cfg();
    Encoder enc(cfg, 21);
    REQUIRE(enc.param_count() <= 1000);
    Tensor x = random_noise(cfg, 33);

    double worst = 0.0;
    for (auto& [name, p] : enc.params().map()) {
        double err = testutil::gradient_check(p, [&] { return sum_all(enc.encode(x)); });
        INFO("param ", name);
        CHECK(err < 1e-3);
        worst = std::max(worst, err);
    }
    MESSAGE("worst relative gradient error: ", worst);
}
