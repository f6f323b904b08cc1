#include "doctest.h"
#include "testutil.hpp"
#include "vilocal/objectives.hpp"
#include "vilocal/rng.hpp"

#include <cmath>

using namespace vilocal;

namespace {

Tensor random_mask(int h, int w, Rng& rng, double p1 = 0.4) {
    Tensor m = Tensor::uninitialized({h, w});
    for (std::int64_t i = 0; i < m.size(); ++i) m[i] = rng.uniform() < p1 ? 1.0 : 0.0;
    return m;
}

Tensor random_emb(int rows, int c, Rng& rng) {
    Tensor e = Tensor::uninitialized({rows, c});
    for (std::int64_t i = 0; i < e.size(); ++i) e[i] = rng.uniform(-1.0, 1.0);
    return e;
}

// evaluate the printed loss directly from the batch, bypassing the graph code
double direct_batch_loss(const Tensor& emb, const PixelSampleBatch& batch, const ContrastiveConfig& cfg) {
    int c = emb.dim(1);
    auto row_of = [&](int pool_idx) {
        std::vector<double> v(static_cast<std::size_t>(c));
        const double* src = emb.data() + std::int64_t(batch.pool_rows[std::size_t(pool_idx)]) * c;
        double norm = 0.0;
        for (int j = 0; j < c; ++j) norm += src[j] * src[j];
        norm = cfg.normalize_embeddings ? std::sqrt(norm) + (norm == 0.0 ? 1.0 : 0.0) : 1.0;
        for (int j = 0; j < c; ++j) v[std::size_t(j)] = src[j] / norm;
        return v;
    };
    std::vector<std::vector<double>> pos, neg;
    for (const auto& a : batch.anchors) {
        auto q = row_of(a.pool_index);
        std::vector<double> ps, ns;
        for (int j : a.positives) {
            auto k = row_of(j);
            double s = 0;
            for (int i = 0; i < c; ++i) s += q[std::size_t(i)] * k[std::size_t(i)];
            ps.push_back(s);
        }
        for (int j : a.negatives) {
            auto k = row_of(j);
            double s = 0;
            for (int i = 0; i < c; ++i) s += q[std::size_t(i)] * k[std::size_t(i)];
            ns.push_back(s);
        }
        pos.push_back(ps);
        neg.push_back(ns);
    }
    return contrastive_loss_from_similarities(pos, neg, cfg.temperature, cfg.denominator);
}

}  // namespace

TEST_CASE("downsample_mask") {
    SUBCASE("all ones stays all ones") {
        Tensor m({8, 8}, 1.0);
        Tensor d = downsample_mask(m);
        REQUIRE(d.shape() == Shape{2, 2});
        for (std::int64_t i = 0; i < d.size(); ++i) CHECK(d[i] == 1.0);
    }
    SUBCASE("exactly half the block ties to 1") {
        Tensor m({4, 4}, 0.0);
        for (int i = 0; i < 8; ++i) m[i] = 1.0;
        CHECK(downsample_mask(m)[0] == 1.0);
        m[7] = 0.0;  // 7 of 16: below half
        CHECK(downsample_mask(m)[0] == 0.0);
    }
    SUBCASE("matches the block-counting oracle") {
        Rng rng(61);
        for (int rep = 0; rep < 20; ++rep) {
            Tensor m = random_mask(8, 8, rng);
            Tensor d = downsample_mask(m, 4);
            for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j) {
                    int ones = 0;
                    for (int di = 0; di < 4; ++di)
                        for (int dj = 0; dj < 4; ++dj) ones += m[(i * 4 + di) * 8 + j * 4 + dj] != 0.0;
                    CHECK(d[i * 2 + j] == (ones >= 8 ? 1.0 : 0.0));
                }
        }
    }
    SUBCASE("indivisible shapes are rejected") {
        CHECK_THROWS_AS(downsample_mask(Tensor({6, 8}, 0.0), 4), std::invalid_argument);
    }
}

TEST_CASE("pixel sampling") {
    ContrastiveConfig cfg;
    cfg.samples_per_class = 2;
    Rng rng(62);
    Tensor emb = random_emb(16, 4, rng);

    SUBCASE("single-class masks are skipped") {
        Tensor zeros({4, 4}, 0.0);
        CHECK(sample_pixel_embeddings(emb, zeros, cfg, 1).skip);
        Tensor ones({4, 4}, 1.0);
        CHECK(sample_pixel_embeddings(emb, ones, cfg, 1).skip);
    }
    SUBCASE("two pixels per class gives 1 positive and 2 negatives each") {
        Tensor m({4, 4}, 0.0);
        m[3] = m[9] = 1.0;
        ContrastiveConfig c2 = cfg;
        c2.samples_per_class = 2;
        // only 2 zeros available when we shrink the mask to a 2x2 world
        Tensor small({2, 2}, 0.0);
        small[1] = small[2] = 1.0;
        Tensor emb4 = random_emb(4, 4, rng);
        PixelSampleBatch b = sample_pixel_embeddings(emb4, small, c2, 5);
        REQUIRE_FALSE(b.skip);
        REQUIRE(b.anchors.size() == 4);
        for (const auto& a : b.anchors) {
            CHECK(a.positives.size() == 1);
            CHECK(a.negatives.size() == 2);
            int lbl = b.pool_labels[std::size_t(a.pool_index)];
            for (int j : a.positives) CHECK(b.pool_labels[std::size_t(j)] == lbl);
            for (int j : a.negatives) CHECK(b.pool_labels[std::size_t(j)] != lbl);
        }
    }
    SUBCASE("same seed, same selection") {
        Rng mr(63);
        Tensor m = random_mask(4, 4, mr);
        PixelSampleBatch a = sample_pixel_embeddings(emb, m, cfg, 77);
        PixelSampleBatch b = sample_pixel_embeddings(emb, m, cfg, 77);
        CHECK(a.pool_rows == b.pool_rows);
        CHECK(a.pool_labels == b.pool_labels);
        PixelSampleBatch c = sample_pixel_embeddings(emb, m, cfg, 78);
        CHECK(a.pool_rows != c.pool_rows);
    }
}

TEST_CASE("contrastive loss worked values") {
    using D = ContrastiveConfig::Denominator;
    // one anchor, sim(q,k+)=1, sim(q,k-)=0, tau=1: -log(e/1) = -1
    CHECK(contrastive_loss_from_similarities({{1.0}}, {{0.0}}, 1.0) == doctest::Approx(-1.0).epsilon(1e-9));
    // equal similarities, numerator equals denominator
    CHECK(contrastive_loss_from_similarities({{0.3}}, {{0.3}}, 0.5) == doctest::Approx(0.0).epsilon(1e-9));
    // equal similarities, n negatives: log n
    for (int n : {2, 5, 17}) {
        std::vector<double> negs(std::size_t(n), 0.4);
        CHECK(contrastive_loss_from_similarities({{0.4}}, {negs}, 1.0) ==
              doctest::Approx(std::log(double(n))).epsilon(1e-9));
    }
    // infonce variant enlarges the denominator
    double printed = contrastive_loss_from_similarities({{1.0}}, {{0.0}}, 1.0, D::kNegativesOnly);
    double infonce = contrastive_loss_from_similarities({{1.0}}, {{0.0}}, 1.0, D::kInfoNce);
    CHECK(infonce > printed);
    CHECK(infonce == doctest::Approx(std::log(std::exp(1.0) + 1.0) - 1.0).epsilon(1e-9));
}

TEST_CASE("contrastive loss algebraic properties") {
    Rng rng(64);
    for (int rep = 0; rep < 10; ++rep) {
        int npos = rng.uniform_int(1, 4), nneg = rng.uniform_int(1, 5);
        std::vector<double> pos, neg;
        for (int i = 0; i < npos; ++i) pos.push_back(rng.uniform(-1, 1));
        for (int i = 0; i < nneg; ++i) neg.push_back(rng.uniform(-1, 1));
        double tau = rng.uniform(0.05, 2.0);

        double base = contrastive_loss_from_similarities({pos}, {neg}, tau);

        // invariant under a common additive shift of every similarity
        double shift = rng.uniform(-3, 3);
        std::vector<double> pos_s = pos, neg_s = neg;
        for (double& v : pos_s) v += shift;
        for (double& v : neg_s) v += shift;
        CHECK(contrastive_loss_from_similarities({pos_s}, {neg_s}, tau) ==
              doctest::Approx(base).epsilon(1e-6));

        // dividing similarities by tau equals using temperature 1
        std::vector<double> pos_t = pos, neg_t = neg;
        for (double& v : pos_t) v /= tau;
        for (double& v : neg_t) v /= tau;
        CHECK(contrastive_loss_from_similarities({pos_t}, {neg_t}, 1.0) ==
              doctest::Approx(base).epsilon(1e-6));
    }
}

TEST_CASE("graph contrastive loss matches the direct evaluation") {
    Rng rng(65);
    for (int rep = 0; rep < 20; ++rep) {
        int h = 4, w = 4, c = rng.uniform_int(3, 6);
        Tensor emb = random_emb(h * w, c, rng);
        Tensor mask = random_mask(h, w, rng, rng.uniform(0.2, 0.8));
        ContrastiveConfig cfg;
        cfg.samples_per_class = rng.uniform_int(2, 6);
        cfg.temperature = rng.uniform(0.05, 1.5);
        cfg.normalize_embeddings = rep % 2 == 0;
        if (rep % 5 == 0) cfg.denominator = ContrastiveConfig::Denominator::kInfoNce;
        PixelSampleBatch batch = sample_pixel_embeddings(emb, mask, cfg, 1000 + rep);
        if (batch.skip) continue;
        double graph = contrastive_loss(constant(emb), batch, cfg)->value[0];
        double direct = direct_batch_loss(emb, batch, cfg);
        CHECK(std::abs(graph - direct) < 1e-6);
    }
}

TEST_CASE("contrastive loss gradient") {
    Rng rng(66);
    Tensor mask = random_mask(4, 4, rng, 0.5);
    Var emb = leaf(random_emb(16, 5, rng));
    ContrastiveConfig cfg;
    cfg.samples_per_class = 4;
    cfg.temperature = 0.3;
    PixelSampleBatch batch = sample_pixel_embeddings(emb->value, mask, cfg, 9);
    REQUIRE_FALSE(batch.skip);
    double err = testutil::gradient_check(emb, [&] { return contrastive_loss(emb, batch, cfg); });
    CHECK(err < 1e-4);

    ContrastiveConfig raw = cfg;
    raw.normalize_embeddings = false;
    err = testutil::gradient_check(emb, [&] { return contrastive_loss(emb, batch, raw); });
    CHECK(err < 1e-4);
}

TEST_CASE("focal loss worked values") {
    FocalConfig cfg;  // alpha 0.25, gamma 2
    CHECK(focal_loss_value(Tensor::from({1, 1}, {1.0}), Tensor::from({1, 1}, {0.5}), cfg) ==
          doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-6));
    CHECK(focal_loss_value(Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {0.5}), cfg) ==
          doctest::Approx(0.75 * 0.25 * std::log(2.0)).epsilon(1e-6));
    // literal constants from the derivation
    CHECK(focal_loss_value(Tensor::from({1, 1}, {1.0}), Tensor::from({1, 1}, {0.5}), cfg) ==
          doctest::Approx(0.043322).epsilon(1e-4));
    CHECK(focal_loss_value(Tensor::from({1, 1}, {0.0}), Tensor::from({1, 1}, {0.5}), cfg) ==
          doctest::Approx(0.129965).epsilon(1e-4));
    // near-perfect prediction
    CHECK(focal_loss_value(Tensor::from({1, 1}, {1.0}), Tensor::from({1, 1}, {1.0 - 1e-7}), cfg) < 1e-6);
}

TEST_CASE("focal loss properties") {
    Rng rng(67);
    FocalConfig cfg;

    SUBCASE("always nonnegative, mean reduced") {
        for (int rep = 0; rep < 10; ++rep) {
            Tensor g = random_mask(4, 4, rng);
            Tensor m = Tensor::uninitialized({4, 4});
            for (std::int64_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(0.01, 0.99);
            double v = focal_loss_value(g, m, cfg);
            CHECK(v >= 0.0);
            CHECK(std::isfinite(v));
        }
    }
    SUBCASE("gamma 0, alpha one-half is half the mean cross-entropy") {
        FocalConfig plain;
        plain.alpha = 0.5;
        plain.gamma = 0.0;
        Tensor g = random_mask(4, 4, rng);
        Tensor m = Tensor::uninitialized({4, 4});
        for (std::int64_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(0.01, 0.99);
        double bce = 0.0;
        for (std::int64_t i = 0; i < m.size(); ++i)
            bce += g[i] != 0.0 ? -std::log(m[i]) : -std::log(1.0 - m[i]);
        bce /= double(m.size());
        CHECK(focal_loss_value(g, m, plain) == doctest::Approx(0.5 * bce).epsilon(1e-6));
    }
    SUBCASE("graph form matches the scalar form") {
        for (int rep = 0; rep < 20; ++rep) {
            Tensor g = random_mask(3, 5, rng);
            Tensor m = Tensor::uninitialized({3, 5});
            for (std::int64_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(0.01, 0.99);
            FocalConfig fc;
            fc.alpha = rng.uniform(0.05, 0.95);
            fc.gamma = rng.uniform(0.0, 4.0);
            CHECK(focal_loss(constant(m), g, fc)->value[0] ==
                  doctest::Approx(focal_loss_value(g, m, fc)).epsilon(1e-9));
        }
    }
    SUBCASE("shape mismatch is rejected") {
        CHECK_THROWS_AS(focal_loss_value(Tensor({2, 2}, 0.0), Tensor({2, 3}, 0.5), cfg),
                        std::invalid_argument);
    }
}

TEST_CASE("focal loss gradient") {
    Rng rng(68);
    Tensor g = random_mask(4, 4, rng);
    Var m = leaf(Tensor::uninitialized({4, 4}));
    for (std::int64_t i = 0; i < m->value.size(); ++i) m->value[i] = rng.uniform(0.1, 0.9);
    FocalConfig cfg;
    double err = testutil::gradient_check(m, [&] { return focal_loss(m, g, cfg); });
    CHECK(err < 1e-4);
}

TEST_CASE("hyperparameter validation") {
    ContrastiveConfig c;
    c.temperature = 0.0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = ContrastiveConfig{};
    c.samples_per_class = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    FocalConfig f;
    f.alpha = 1.0;
    CHECK_THROWS_AS(f.validate(), std::invalid_argument);
    f = FocalConfig{};
    f.gamma = -0.1;
    CHECK_THROWS_AS(f.validate(), std::invalid_argument);
}
