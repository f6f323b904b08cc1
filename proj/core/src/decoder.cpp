#include "vilocal/decoder.hpp"

#include <stdexcept>

namespace vilocal {

Decoder::Decoder(DecoderConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.embed_dim < 1 || cfg_.hidden < 1) throw std::invalid_argument("decoder config: bad channel counts");
    Rng rng(seed);
    params_.add("conv1/w", he_normal({cfg_.embed_dim, cfg_.hidden}, cfg_.embed_dim, rng));
    params_.add("conv1/b", Tensor({cfg_.hidden}, 0.0));
    params_.add("bn/g", Tensor({cfg_.hidden}, 1.0));
    params_.add("bn/b", Tensor({cfg_.hidden}, 0.0));
    params_.add("conv2/w", he_normal({cfg_.hidden, 1}, cfg_.hidden, rng));
    params_.add("conv2/b", Tensor({1}, 0.0));  // prior probability 0.5
    running_mean_ = Tensor({cfg_.hidden}, 0.0);
    running_var_ = Tensor({cfg_.hidden}, 1.0);
}

Var Decoder::decode(const Var& emb, int hq, int wq, bool training) {
    if (emb->value.ndim() != 2 || emb->value.dim(0) != hq * wq || emb->value.dim(1) != cfg_.embed_dim)
        throw std::invalid_argument("decode: embedding shape " + shape_str(emb->value.shape()) +
                                    " does not match " + std::to_string(hq) + "x" + std::to_string(wq) +
                                    "x" + std::to_string(cfg_.embed_dim));
    Var x = linear(emb, params_.get("conv1/w"), params_.get("conv1/b"));
    x = batch_norm(x, params_.get("bn/g"), params_.get("bn/b"), running_mean_, running_var_, training);
    x = relu(x);
    x = linear(x, params_.get("conv2/w"), params_.get("conv2/b"));
    x = reshape(x, {hq, wq});
    x = bilinear_upsample(x, 4);
    return sigmoid(x);
}

ProbabilityMap Decoder::decode_value(const Tensor& emb, int hq, int wq) {
    InferenceModeGuard guard;
    ProbabilityMap out;
    out.probs = decode(constant(emb), hq, wq, /*training=*/false)->value;
    return out;
}

std::uint64_t Decoder::checksum() const {
    auto snap = params_.snapshot();
    snap["bn/running_mean"] = running_mean_;
    snap["bn/running_var"] = running_var_;
    return tensor_map_checksum(snap);
}

BinaryMask binarize(const ProbabilityMap& probs, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw std::invalid_argument("binarize: threshold must be in (0,1)");
    BinaryMask out;
    out.threshold = threshold;
    out.labels = Tensor(probs.probs.shape(), 0.0);
    for (std::int64_t i = 0; i < probs.probs.size(); ++i)
        out.labels[i] = probs.probs[i] > threshold ? 1.0 : 0.0;
    return out;
}

}  // namespace vilocal
