#include "vilocal/pipeline.hpp"

#include <iostream>
#include <stdexcept>

namespace vilocal {

namespace {

ContrastiveConfig::Denominator denominator_from(const std::string& s) {
    if (s == "negatives_only") return ContrastiveConfig::Denominator::kNegativesOnly;
    if (s == "infonce") return ContrastiveConfig::Denominator::kInfoNce;
    throw std::invalid_argument("unknown contrastive denominator: " + s);
}

}  // namespace

EncoderConfig encoder_config_from(const RunConfig& cfg) {
    EncoderConfig e;
    e.in_t = cfg.get_int("encoder.in_t", e.in_t);
    e.in_h = cfg.get_int("data.height", e.in_h);
    e.in_w = cfg.get_int("data.width", e.in_w);
    e.stage_channels = cfg.get_int_list("encoder.channels", e.stage_channels);
    e.stage_depths = cfg.get_int_list("encoder.depths", e.stage_depths);
    e.stage_downsample = cfg.get_int_list("encoder.downsample", e.stage_downsample);
    e.n_global_stages = cfg.get_int("encoder.global_stages", e.n_global_stages);
    e.heads = cfg.get_int("encoder.heads", e.heads);
    e.mlp_ratio = cfg.get_int("encoder.mlp_ratio", e.mlp_ratio);
    e.embed_dim = cfg.get_int("encoder.embed_dim", e.embed_dim);
    e.param_budget = cfg.get_int("encoder.param_budget", static_cast<int>(e.param_budget));
    e.validate();
    return e;
}

DecoderConfig decoder_config_from(const RunConfig& cfg) {
    DecoderConfig d;
    d.embed_dim = cfg.get_int("encoder.embed_dim", d.embed_dim);
    d.hidden = cfg.get_int("decoder.hidden", d.hidden);
    return d;
}

ContrastiveConfig contrastive_config_from(const RunConfig& cfg) {
    ContrastiveConfig c;
    c.temperature = cfg.get_double("contrastive.temperature", c.temperature);
    c.samples_per_class = cfg.get_int("contrastive.samples_per_class", c.samples_per_class);
    c.normalize_embeddings = cfg.get_bool("contrastive.normalize", c.normalize_embeddings);
    c.denominator = denominator_from(cfg.get_str("contrastive.denominator", "negatives_only"));
    c.validate();
    return c;
}

FocalConfig focal_config_from(const RunConfig& cfg) {
    FocalConfig f;
    f.alpha = cfg.get_double("focal.alpha", f.alpha);
    f.gamma = cfg.get_double("focal.gamma", f.gamma);
    f.validate();
    return f;
}

Tensor unit_frames_01(const TrainingUnit& unit) {
    Tensor t({5, unit.h, unit.w, 3});
    const std::size_t n = unit.frames.size();
    if (n != static_cast<std::size_t>(t.size()))
        throw std::invalid_argument("unit frame buffer does not match 5x" + std::to_string(unit.h) + "x" +
                                    std::to_string(unit.w) + "x3");
    for (std::size_t i = 0; i < n; ++i) t[static_cast<std::int64_t>(i)] = unit.frames[i] / 255.0;
    return t;
}

Tensor unit_mask_tensor(const TrainingUnit& unit) {
    Tensor m({unit.h, unit.w});
    for (std::size_t i = 0; i < unit.middle_mask.size(); ++i)
        m[static_cast<std::int64_t>(i)] = unit.middle_mask[i] ? 1.0 : 0.0;
    return m;
}

PipelineModel PipelineModel::from_checkpoint(const Checkpoint& ckpt) {
    PipelineModel model;
    model.run_config = RunConfig::parse_text(ckpt.config_text);
    model.use_hp3d = model.run_config.get_bool("train.use_hp3d", true);
    std::string kernel_path = model.run_config.get_str("hp3d.kernel_file", "");
    model.kernel = kernel_path.empty() ? Hp3dKernel::laplacian() : Hp3dKernel::from_file(kernel_path);

    EncoderConfig ecfg = encoder_config_from(model.run_config);
    model.encoder = std::make_unique<Encoder>(ecfg, 0);
    model.encoder->params().restore(ckpt.encoder_params);
    model.encoder->params().set_requires_grad(false);

    if (!ckpt.decoder_params.empty()) {
        DecoderConfig dcfg = decoder_config_from(model.run_config);
        model.decoder = std::make_unique<Decoder>(dcfg, 0);
        std::map<std::string, Tensor> weights;
        for (const auto& [name, t] : ckpt.decoder_params) {
            if (name == "buf/running_mean") model.decoder->running_mean() = t;
            else if (name == "buf/running_var") model.decoder->running_var() = t;
            else weights[name] = t;
        }
        model.decoder->params().restore(weights);
        model.decoder->params().set_requires_grad(false);
    }
    return model;
}

Tensor PipelineModel::unit_input(const TrainingUnit& unit) const {
    Tensor frames = unit_frames_01(unit);
    if (use_hp3d) return hp3d_residual(frames, kernel);
    for (std::int64_t i = 0; i < frames.size(); ++i) frames[i] -= 0.5;
    return frames;
}

ProbabilityMap PipelineModel::predict(const TrainingUnit& unit) {
    if (!encoder) throw std::logic_error("pipeline has no encoder");
    if (!decoder) throw std::logic_error("pipeline has no decoder (stage-1 checkpoint?)");
    if (unit.h != encoder->config().in_h || unit.w != encoder->config().in_w)
        throw std::invalid_argument("unit resolution " + std::to_string(unit.h) + "x" + std::to_string(unit.w) +
                                    " does not match encoder input " + std::to_string(encoder->config().in_h) +
                                    "x" + std::to_string(encoder->config().in_w));
    Tensor emb = encoder->encode_value(unit_input(unit));
    return decoder->decode_value(emb, encoder->config().out_h(), encoder->config().out_w());
}

std::vector<TrainingUnit> load_units(const DatasetManifest& manifest, const std::string& split,
                                     int stride, int target_h, int target_w, int* skipped_clips) {
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    std::vector<TrainingUnit> units;
    int skipped = 0;
    for (const auto& entry : manifest.split(split)) {
        auto [clip, masks] = load_clip(entry.clip_path, entry.mask_path,
                                       std::make_pair(target_h, target_w));
        if (clip.t < 5) {
            ++skipped;
            std::cerr << "warning: clip " << entry.clip_path << " has " << clip.t
                      << " frames, fewer than one 5-frame unit; skipped\n";
            continue;
        }
        for (auto& unit : assemble_units(clip, masks, stride)) {
            unit.provenance.inpaint_method = entry.inpaint_method;
            unit.provenance.compression_tag = entry.compression_tag;
            units.push_back(std::move(unit));
        }
    }
    if (skipped_clips) *skipped_clips = skipped;
    return units;
}

}  // namespace vilocal
