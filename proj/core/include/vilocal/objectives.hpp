#pragma once

#include "vilocal/tensor.hpp"

#include <cstdint>
#include <set>
#include <vector>

namespace vilocal {

struct ContrastiveConfig {
    double temperature = 0.1;
    int samples_per_class = 256;
    bool normalize_embeddings = true;
    std::set<int> anchor_classes{0, 1};
    // The printed form's denominator sums over negatives only and can go
    // negative; the infonce variant adds the positive terms to it.
    enum class Denominator { kNegativesOnly, kInfoNce };
    Denominator denominator = Denominator::kNegativesOnly;

    void validate() const;
};

struct FocalConfig {
    double alpha = 0.25;
    double gamma = 2.0;

    void validate() const;
};

// Indices into a shared sampled-embedding pool; the pool itself indexes rows
// of the embedding map.
struct PixelSampleBatch {
    std::vector<int> pool_rows;    // row index into the [hq*wq, C] embedding map
    std::vector<int> pool_labels;  // 0/1, parallel to pool_rows
    struct Anchor {
        int pool_index;
        std::vector<int> positives;  // indices into the pool
        std::vector<int> negatives;
    };
    std::vector<Anchor> anchors;
    bool skip = false;  // no usable anchors; loss contribution is 0
};

// Output pixel is 1 iff at least half of its factor x factor block is 1.
Tensor downsample_mask(const Tensor& mask, int factor = 4);

// Draws up to samples_per_class pixels per class without replacement; every
// sampled pixel whose class is in anchor_classes becomes an anchor.
PixelSampleBatch sample_pixel_embeddings(const Tensor& emb, const Tensor& ds_mask,
                                         const ContrastiveConfig& cfg, std::uint64_t seed);

// Graph form: emb is the [hq*wq, C] embedding node.
Var contrastive_loss(const Var& emb, const PixelSampleBatch& batch, const ContrastiveConfig& cfg);

// Direct scalar evaluation from per-anchor similarity lists (oracle-friendly).
double contrastive_loss_from_similarities(const std::vector<std::vector<double>>& positive_sims,
                                          const std::vector<std::vector<double>>& negative_sims,
                                          double temperature,
                                          ContrastiveConfig::Denominator denominator =
                                              ContrastiveConfig::Denominator::kNegativesOnly);

// Focal localization loss, mean-reduced over pixels. G: binary [H,W];
// M: probabilities clamped to [1e-7, 1-1e-7] before the logs.
Var focal_loss(const Var& probability_map, const Tensor& ground_truth, const FocalConfig& cfg);
double focal_loss_value(const Tensor& ground_truth, const Tensor& probability_map, const FocalConfig& cfg);

}  // namespace vilocal
