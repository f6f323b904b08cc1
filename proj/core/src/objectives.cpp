#include "vilocal/objectives.hpp"

#include "vilocal/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vilocal {

namespace {
constexpr double kProbClamp = 1e-7;

double log_sum_exp(const std::vector<double>& xs) {
    double mx = xs[0];
    for (double x : xs) mx = std::max(mx, x);
    double s = 0.0;
    for (double x : xs) s += std::exp(x - mx);
    return mx + std::log(s);
}
}  // namespace

void ContrastiveConfig::validate() const {
    if (!(temperature > 0.0)) throw std::invalid_argument("contrastive config: temperature must be > 0");
    if (samples_per_class < 1) throw std::invalid_argument("contrastive config: samples_per_class must be >= 1");
    for (int c : anchor_classes)
        if (c != 0 && c != 1) throw std::invalid_argument("contrastive config: anchor classes must be 0/1");
}

void FocalConfig::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("focal config: alpha must be in (0,1)");
    if (gamma < 0.0) throw std::invalid_argument("focal config: gamma must be >= 0");
}

Tensor downsample_mask(const Tensor& mask, int factor) {
    if (mask.ndim() != 2) throw std::invalid_argument("downsample_mask: expected [H,W]");
    int h = mask.dim(0), w = mask.dim(1);
    if (factor < 1 || h % factor != 0 || w % factor != 0)
        throw std::invalid_argument("downsample_mask: shape " + shape_str(mask.shape()) +
                                    " not divisible by factor " + std::to_string(factor));
    int oh = h / factor, ow = w / factor;
    int half = factor * factor;  // threshold: 2*count >= factor^2 (ties to 1)
    Tensor out({oh, ow}, 0.0);
    for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
            int ones = 0;
            for (int di = 0; di < factor; ++di)
                for (int dj = 0; dj < factor; ++dj)
                    if (mask[static_cast<std::int64_t>(i * factor + di) * w + j * factor + dj] != 0.0) ++ones;
            out[static_cast<std::int64_t>(i) * ow + j] = (2 * ones >= half) ? 1.0 : 0.0;
        }
    return out;
}

PixelSampleBatch sample_pixel_embeddings(const Tensor& emb, const Tensor& ds_mask,
                                         const ContrastiveConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    if (emb.ndim() != 2 || ds_mask.ndim() != 2 || emb.dim(0) != ds_mask.dim(0) * ds_mask.dim(1))
        throw std::invalid_argument("sample_pixel_embeddings: embedding/mask misaligned");

    std::vector<int> class_rows[2];
    for (std::int64_t i = 0; i < ds_mask.size(); ++i)
        class_rows[ds_mask[i] != 0.0 ? 1 : 0].push_back(static_cast<int>(i));

    PixelSampleBatch batch;
    if (class_rows[0].empty() || class_rows[1].empty()) {
        batch.skip = true;
        return batch;
    }

    Rng rng(seed);
    for (int cls = 0; cls < 2; ++cls) {
        auto& rows = class_rows[cls];
        int take = std::min<int>(cfg.samples_per_class, static_cast<int>(rows.size()));
        auto perm = rng.permutation(static_cast<int>(rows.size()));
        for (int k = 0; k < take; ++k) {
            batch.pool_rows.push_back(rows[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])]);
            batch.pool_labels.push_back(cls);
        }
    }

    int pool = static_cast<int>(batch.pool_rows.size());
    for (int k = 0; k < pool; ++k) {
        int lbl = batch.pool_labels[static_cast<std::size_t>(k)];
        if (!cfg.anchor_classes.count(lbl)) continue;
        PixelSampleBatch::Anchor a;
        a.pool_index = k;
        for (int j = 0; j < pool; ++j) {
            if (j == k) continue;
            if (batch.pool_labels[static_cast<std::size_t>(j)] == lbl) a.positives.push_back(j);
            else a.negatives.push_back(j);
        }
        if (a.positives.empty() || a.negatives.empty()) continue;
        batch.anchors.push_back(std::move(a));
    }
    if (batch.anchors.empty()) batch.skip = true;
    return batch;
}

double contrastive_loss_from_similarities(const std::vector<std::vector<double>>& positive_sims,
                                          const std::vector<std::vector<double>>& negative_sims,
                                          double temperature,
                                          ContrastiveConfig::Denominator denominator) {
    if (!(temperature > 0.0)) throw std::invalid_argument("contrastive loss: temperature must be > 0");
    if (positive_sims.size() != negative_sims.size())
        throw std::invalid_argument("contrastive loss: anchor list mismatch");
    if (positive_sims.empty()) return 0.0;
    double total = 0.0;
    for (std::size_t k = 0; k < positive_sims.size(); ++k) {
        std::vector<double> pos, neg;
        for (double s : positive_sims[k]) pos.push_back(s / temperature);
        for (double s : negative_sims[k]) neg.push_back(s / temperature);
        if (pos.empty() || neg.empty()) throw std::invalid_argument("contrastive loss: empty pair set");
        double num = log_sum_exp(pos) - std::log(static_cast<double>(pos.size()));
        std::vector<double> den = neg;
        if (denominator == ContrastiveConfig::Denominator::kInfoNce)
            den.insert(den.end(), pos.begin(), pos.end());
        total += log_sum_exp(den) - num;
    }
    return total / static_cast<double>(positive_sims.size());
}

Var contrastive_loss(const Var& emb, const PixelSampleBatch& batch, const ContrastiveConfig& cfg) {
    cfg.validate();
    if (batch.skip || batch.anchors.empty()) return constant(Tensor::from({1}, {0.0}), "contrastive_skip");

    Var pool = gather_rows(emb, batch.pool_rows);
    if (cfg.normalize_embeddings) pool = l2_normalize_rows(pool);
    Var sims = matmul(pool, pool, false, true);  // [P,P] inner products

    const double tau = cfg.temperature;
    const auto anchors = batch.anchors;
    const auto deno = cfg.denominator;
    const int P = static_cast<int>(batch.pool_rows.size());

    // value + softmax weights for backward
    double total = 0.0;
    std::vector<std::vector<double>> pos_w(anchors.size()), den_w(anchors.size());
    for (std::size_t k = 0; k < anchors.size(); ++k) {
        const auto& a = anchors[k];
        const double* row = sims->value.data() + static_cast<std::int64_t>(a.pool_index) * P;
        std::vector<double> pos, den;
        for (int j : a.positives) pos.push_back(row[j] / tau);
        for (int j : a.negatives) den.push_back(row[j] / tau);
        double lse_pos = log_sum_exp(pos);
        if (deno == ContrastiveConfig::Denominator::kInfoNce)
            den.insert(den.end(), pos.begin(), pos.end());
        double lse_den = log_sum_exp(den);
        total += lse_den - (lse_pos - std::log(static_cast<double>(pos.size())));
        pos_w[k].resize(pos.size());
        for (std::size_t j = 0; j < pos.size(); ++j) pos_w[k][j] = std::exp(pos[j] - lse_pos);
        den_w[k].resize(den.size());
        for (std::size_t j = 0; j < den.size(); ++j) den_w[k][j] = std::exp(den[j] - lse_den);
    }
    double value = total / static_cast<double>(anchors.size());

    Var loss = make_op(Tensor::from({1}, {value}), {sims},
                       [anchors, pos_w = std::move(pos_w), den_w = std::move(den_w), tau, deno,
                        P](Node& nd) {
        Tensor& g = nd.parents[0]->ensure_grad();
        double go = nd.grad[0] / static_cast<double>(anchors.size()) / tau;
        for (std::size_t k = 0; k < anchors.size(); ++k) {
            const auto& a = anchors[k];
            double* row = g.data() + static_cast<std::int64_t>(a.pool_index) * P;
            for (std::size_t j = 0; j < a.positives.size(); ++j) row[a.positives[j]] -= go * pos_w[k][j];
            std::size_t nn = a.negatives.size();
            for (std::size_t j = 0; j < nn; ++j) row[a.negatives[j]] += go * den_w[k][j];
            if (deno == ContrastiveConfig::Denominator::kInfoNce)
                for (std::size_t j = 0; j < a.positives.size(); ++j)
                    row[a.positives[j]] += go * den_w[k][nn + j];
        }
    });
    return loss;
}

namespace {
// loss term and d/dm for one pixel (clamped probability)
inline void focal_term(double g, double m, double alpha, double gamma, double& val, double& dm) {
    bool clamped = m <= kProbClamp || m >= 1.0 - kProbClamp;
    m = std::clamp(m, kProbClamp, 1.0 - kProbClamp);
    if (g != 0.0) {
        double p = std::pow(1.0 - m, gamma);
        val = -alpha * p * std::log(m);
        double dp = gamma > 0.0 ? gamma * std::pow(1.0 - m, gamma - 1.0) : 0.0;
        dm = alpha * (dp * std::log(m) - p / m);
    } else {
        double p = std::pow(m, gamma);
        val = -(1.0 - alpha) * p * std::log(1.0 - m);
        double dp = gamma > 0.0 ? gamma * std::pow(m, gamma - 1.0) : 0.0;
        dm = (1.0 - alpha) * (-dp * std::log(1.0 - m) + p / (1.0 - m));
    }
    if (clamped) dm = 0.0;
}
}  // namespace

double focal_loss_value(const Tensor& ground_truth, const Tensor& probability_map, const FocalConfig& cfg) {
    cfg.validate();
    if (!ground_truth.same_shape(probability_map))
        throw std::invalid_argument("focal_loss: shape mismatch " + shape_str(ground_truth.shape()) +
                                    " vs " + shape_str(probability_map.shape()));
    double total = 0.0;
    for (std::int64_t i = 0; i < ground_truth.size(); ++i) {
        double v, dm;
        focal_term(ground_truth[i], probability_map[i], cfg.alpha, cfg.gamma, v, dm);
        total += v;
    }
    return total / static_cast<double>(ground_truth.size());
}

Var focal_loss(const Var& probability_map, const Tensor& ground_truth, const FocalConfig& cfg) {
    cfg.validate();
    if (!ground_truth.same_shape(probability_map->value))
        throw std::invalid_argument("focal_loss: shape mismatch " + shape_str(ground_truth.shape()) +
                                    " vs " + shape_str(probability_map->value.shape()));
    std::int64_t n = ground_truth.size();
    double total = 0.0;
    Tensor dm_all(probability_map->value.shape(), 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        double v, dm;
        focal_term(ground_truth[i], probability_map->value[i], cfg.alpha, cfg.gamma, v, dm);
        total += v;
        dm_all[i] = dm / static_cast<double>(n);
    }
    return make_op(Tensor::from({1}, {total / static_cast<double>(n)}), {probability_map},
                   [dm_all = std::move(dm_all)](Node& nd) {
        Tensor& g = nd.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += nd.grad[0] * dm_all[i];
    });
}

}  // namespace vilocal
