#pragma once

#include "vilocal/nn.hpp"
#include "vilocal/tensor.hpp"

#include <cstdint>
#include <vector>

namespace vilocal {

// Hybrid spatiotemporal encoder: convolutional local-relation stages followed
// by global self-attention stages, mapping [T,H,W,3] noise volumes to
// quarter-resolution per-pixel embeddings [H/4 * W/4, embed_dim].
struct EncoderConfig {
    int in_t = 5;
    int in_h = 120;
    int in_w = 216;
    int in_c = 3;
    std::vector<int> stage_channels{32, 64, 256};
    std::vector<int> stage_depths{2, 2, 2};
    // Spatial downsample factor applied entering each stage; product must be 4.
    std::vector<int> stage_downsample{1, 2, 2};
    int n_global_stages = 1;  // trailing stages use global self-attention
    int heads = 4;
    int mlp_ratio = 2;
    int embed_dim = 256;
    std::int64_t param_budget = 5'000'000;

    void validate() const;  // throws std::invalid_argument on inconsistency
    // Spatial/temporal extents at each stage (temporal stride 2 at each
    // downsampling, remaining extent averaged out after the last stage).
    std::vector<int> stage_t() const;
    std::vector<int> stage_h() const;
    std::vector<int> stage_w() const;
    int out_h() const { return in_h / 4; }
    int out_w() const { return in_w / 4; }
};

class Encoder {
public:
    Encoder(EncoderConfig cfg, std::uint64_t seed);

    // Builds the forward graph. noise: [T,H,W,3] value (no gradient flows into
    // it). Returns embeddings as a [out_h*out_w, embed_dim] node.
    Var encode(const Tensor& noise);
    // Value-only convenience (gradients disabled for speed).
    Tensor encode_value(const Tensor& noise);

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const EncoderConfig& config() const { return cfg_; }
    std::int64_t param_count() const { return params_.param_count(); }
    std::uint64_t checksum() const { return params_.checksum(); }

private:
    EncoderConfig cfg_;
    ParamStore params_;
};

}  // namespace vilocal
