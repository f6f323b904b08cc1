#pragma once

#include "vilocal/nn.hpp"
#include "vilocal/tensor.hpp"

#include <cstdint>

namespace vilocal {

// Probability map over the full frame; values in (0,1).
struct ProbabilityMap {
    Tensor probs;  // [H, W]
};

struct BinaryMask {
    Tensor labels;  // [H, W], values in {0,1}
    double threshold = 0.5;
};

// Lightweight decoder: 1x1 conv (embed->128) -> BN -> ReLU -> 1x1 conv
// (128->1) -> x4 bilinear upsample (align_corners=false) -> sigmoid.
struct DecoderConfig {
    int embed_dim = 256;
    int hidden = 128;
};

class Decoder {
public:
    Decoder(DecoderConfig cfg, std::uint64_t seed);

    // emb: [hq*wq, embed_dim] node; returns [4*hq, 4*wq] probability node.
    // training=true uses batch statistics and updates the running buffers.
    Var decode(const Var& emb, int hq, int wq, bool training);
    ProbabilityMap decode_value(const Tensor& emb, int hq, int wq);

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const DecoderConfig& config() const { return cfg_; }
    Tensor& running_mean() { return running_mean_; }
    Tensor& running_var() { return running_var_; }
    std::uint64_t checksum() const;

private:
    DecoderConfig cfg_;
    ParamStore params_;
    Tensor running_mean_, running_var_;  // BN buffers, not trained
};

// label 1 iff prob > threshold; threshold must lie in (0,1).
BinaryMask binarize(const ProbabilityMap& probs, double threshold = 0.5);

}  // namespace vilocal
