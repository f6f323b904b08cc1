#include "vilocal/trainer.hpp"

#include "vilocal/rng.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace vilocal {

namespace {

std::string batch_provenance(const std::vector<TrainingUnit>& units, const std::vector<int>& order,
                             int batch_begin, int batch_size) {
    std::ostringstream out;
    for (int b = 0; b < batch_size; ++b) {
        const auto& p = units[static_cast<std::size_t>(order[static_cast<std::size_t>(batch_begin + b)])].provenance;
        if (b) out << ", ";
        out << p.source_id << "@" << p.start_frame << " (" << p.inpaint_method << ", " << p.compression_tag
            << ")";
    }
    return out.str();
}

class StepLog {
public:
    explicit StepLog(const std::string& out_dir, int stage) {
        if (out_dir.empty()) return;
        fs::create_directories(out_dir);
        path_ = out_dir + "/stage" + std::to_string(stage) + "_log.tsv";
        file_.open(path_, std::ios::trunc);
        if (!file_) throw std::runtime_error("cannot open training log " + path_);
        file_ << "step\tstage\tloss\tlr\twall_time\n";
        start_ = std::chrono::steady_clock::now();
    }

    void record(int step, int stage, double loss, double lr) {
        if (!file_.is_open()) return;
        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        file_ << step << '\t' << stage << '\t' << loss << '\t' << lr << '\t' << wall << '\n';
        file_.flush();
    }

private:
    std::string path_;
    std::ofstream file_;
    std::chrono::steady_clock::time_point start_;
};

void assert_params_finite(const ParamStore& params, const std::string& where) {
    for (const auto& [name, p] : params.map())
        if (!p->value.all_finite())
            throw std::runtime_error("non-finite parameter " + name + " after " + where);
}

void maybe_save(const Checkpoint& ckpt, const std::string& out_dir, int stage, const std::string& kind) {
    if (out_dir.empty()) return;
    save_checkpoint(ckpt, out_dir + "/stage" + std::to_string(stage) + "_" + kind + ".ckpt");
}

std::uint64_t sample_seed(std::uint64_t seed, int step, int slot) {
    return Rng(seed).fork(0x51u).fork(static_cast<std::uint64_t>(step) * 131u +
                                      static_cast<std::uint64_t>(slot)).next_u64();
}

std::map<std::string, Tensor> prefixed(const std::map<std::string, Tensor>& state, const std::string& prefix) {
    std::map<std::string, Tensor> out;
    for (const auto& [k, v] : state) out[prefix + k] = v;
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (stage != 1 && stage != 2) throw std::invalid_argument("stage must be 1 or 2");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (max_steps < 0) throw std::invalid_argument("max_steps must be >= 0");
    if (lr < 0) throw std::invalid_argument("learning rate must be >= 0");
    if (unit_stride < 1) throw std::invalid_argument("unit_stride must be >= 1");
    encoder.validate();
    contrastive.validate();
    focal.validate();
}

double TrainConfig::effective_lr() const {
    if (lr > 0) return lr;
    return stage == 1 ? 1e-4 : 1e-3;
}

TrainConfig train_config_from(const RunConfig& cfg) {
    TrainConfig t;
    t.stage = cfg.get_int("train.stage", t.stage);
    t.batch_size = cfg.get_int("train.batch_size", t.batch_size);
    t.epochs = cfg.get_int("train.epochs", t.epochs);
    t.max_steps = cfg.get_int("train.max_steps", t.max_steps);
    t.lr = cfg.get_double("train.lr", t.lr);
    t.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed", 0));
    t.use_hp3d = cfg.get_bool("train.use_hp3d", t.use_hp3d);
    t.use_contrastive = cfg.get_bool("train.use_contrastive", t.use_contrastive);
    t.unit_stride = cfg.get_int("train.unit_stride", t.unit_stride);
    t.manifest_path = cfg.get_str("data.manifest", t.manifest_path);
    t.split = cfg.get_str("train.split", t.split);
    t.checkpoint_every = cfg.get_int("train.checkpoint_every", t.checkpoint_every);
    t.encoder = encoder_config_from(cfg);
    t.decoder = decoder_config_from(cfg);
    t.contrastive = contrastive_config_from(cfg);
    t.focal = focal_config_from(cfg);
    t.config_text = cfg.to_text();
    t.validate();
    return t;
}

TrainResult train_stage1(const TrainConfig& cfg, const std::vector<TrainingUnit>& units) {
    TrainConfig local = cfg;
    local.stage = 1;
    local.validate();

    PipelineModel pre;  // reused only for input assembly
    pre.use_hp3d = local.use_hp3d;
    Encoder encoder(local.encoder, local.seed);

    auto snapshot = [&](std::int64_t step, AdamOptimizer* opt) {
        Checkpoint ckpt;
        ckpt.step = step;
        ckpt.config_text = local.config_text;
        ckpt.encoder_params = encoder.params().snapshot();
        if (opt) ckpt.optimizer_state = prefixed(opt->state_snapshot(), "enc/");
        return ckpt;
    };

    TrainResult result;
    if (!local.use_contrastive) {
        // Ablation: no contrastive pretraining, the encoder stays at its
        // random initialization and is trained jointly in stage 2.
        result.last = snapshot(0, nullptr);
        result.best = result.last;
        maybe_save(result.last, local.out_dir, 1, "last");
        return result;
    }

    if (units.empty()) throw std::invalid_argument("stage 1: training split has no usable units");
    const int n = static_cast<int>(units.size());
    if (n < local.batch_size)
        throw std::invalid_argument("stage 1: " + std::to_string(n) + " units cannot fill a batch of " +
                                    std::to_string(local.batch_size));

    // Inputs and downsampled masks are fixed per unit; precompute once.
    std::vector<Tensor> inputs(units.size()), ds_masks(units.size());
    for (std::size_t i = 0; i < units.size(); ++i) {
        inputs[i] = pre.unit_input(units[i]);
        ds_masks[i] = downsample_mask(unit_mask_tensor(units[i]), 4);
    }

    AdamOptimizer opt(encoder.params(), {.lr = local.effective_lr()});
    StepLog log(local.out_dir, 1);
    Rng shuffle_rng = Rng(local.seed).fork(0xe70c5u);

    double best_loss = std::numeric_limits<double>::infinity();
    bool have_best = false;
    int step = 0;
    bool done = false;
    for (int epoch = 0; epoch < local.epochs && !done; ++epoch) {
        std::vector<int> order = shuffle_rng.fork(static_cast<std::uint64_t>(epoch)).permutation(n);
        for (int begin = 0; begin + local.batch_size <= n && !done; begin += local.batch_size) {
            encoder.params().zero_grads();
            // One unit's graph at a time: scale, backprop, release. Gradients
            // accumulate across the batch, the full graph never coexists.
            double loss = 0.0;
            for (int b = 0; b < local.batch_size; ++b) {
                int u = order[static_cast<std::size_t>(begin + b)];
                Var emb = encoder.encode(inputs[static_cast<std::size_t>(u)]);
                PixelSampleBatch batch = sample_pixel_embeddings(
                    emb->value, ds_masks[static_cast<std::size_t>(u)], local.contrastive,
                    sample_seed(local.seed, step, b));
                if (batch.skip) continue;
                Var l = scale(contrastive_loss(emb, batch, local.contrastive), 1.0 / local.batch_size);
                loss += l->value[0];
                backward(l);
            }
            if (!std::isfinite(loss))
                throw std::runtime_error("stage 1: non-finite loss at step " + std::to_string(step + 1) +
                                         "; batch: " + batch_provenance(units, order, begin, local.batch_size));
            opt.step();
            assert_params_finite(encoder.params(), "stage 1 step " + std::to_string(step + 1));

            ++step;
            result.losses.push_back(loss);
            log.record(step, 1, loss, local.effective_lr());
            if (loss < best_loss) {
                best_loss = loss;
                result.best = snapshot(step, &opt);
                have_best = true;
                maybe_save(result.best, local.out_dir, 1, "best");
            }
            if (local.checkpoint_every > 0 && step % local.checkpoint_every == 0)
                maybe_save(snapshot(step, &opt), local.out_dir, 1, "last");
            if (local.max_steps > 0 && step >= local.max_steps) done = true;
        }
    }

    result.last = snapshot(step, &opt);
    if (!have_best) result.best = result.last;
    maybe_save(result.last, local.out_dir, 1, "last");
    return result;
}

TrainResult train_stage1(const TrainConfig& cfg, const DatasetManifest& manifest) {
    std::vector<TrainingUnit> units;
    if (cfg.use_contrastive)
        units = load_units(manifest, cfg.split, cfg.unit_stride, cfg.encoder.in_h, cfg.encoder.in_w);
    return train_stage1(cfg, units);
}

TrainResult train_stage2(const TrainConfig& cfg, const Checkpoint& stage1,
                         const std::vector<TrainingUnit>& units) {
    TrainConfig local = cfg;
    local.stage = 2;
    local.validate();
    const bool joint = !local.use_contrastive;  // whole network trains on focal loss

    PipelineModel pre;
    pre.use_hp3d = local.use_hp3d;
    Encoder encoder(local.encoder, local.seed);
    try {
        encoder.params().restore(stage1.encoder_params);
    } catch (const std::exception& e) {
        throw std::invalid_argument(std::string("stage 2: checkpoint does not match encoder config: ") +
                                    e.what());
    }
    Decoder decoder(local.decoder, Rng(local.seed).fork(0xdecu).next_u64());

    if (units.empty()) throw std::invalid_argument("stage 2: training split has no usable units");
    const int n = static_cast<int>(units.size());
    if (n < local.batch_size)
        throw std::invalid_argument("stage 2: " + std::to_string(n) + " units cannot fill a batch of " +
                                    std::to_string(local.batch_size));

    std::uint64_t frozen_checksum = 0;
    std::vector<Tensor> cached_emb;
    std::vector<Tensor> masks(units.size());
    for (std::size_t i = 0; i < units.size(); ++i) masks[i] = unit_mask_tensor(units[i]);
    if (!joint) {
        encoder.params().set_requires_grad(false);
        frozen_checksum = encoder.checksum();
        // Frozen encoder: embeddings are constant per unit, compute them once.
        cached_emb.resize(units.size());
        for (std::size_t i = 0; i < units.size(); ++i)
            cached_emb[i] = encoder.encode_value(pre.unit_input(units[i]));
    }

    AdamOptimizer dec_opt(decoder.params(), {.lr = local.effective_lr()});
    std::unique_ptr<AdamOptimizer> enc_opt;
    if (joint) enc_opt = std::make_unique<AdamOptimizer>(encoder.params(),
                                                         AdamOptimizer::Config{.lr = local.effective_lr()});

    auto snapshot = [&](std::int64_t step) {
        Checkpoint ckpt;
        ckpt.step = step;
        ckpt.config_text = local.config_text;
        ckpt.encoder_params = encoder.params().snapshot();
        ckpt.decoder_params = decoder.params().snapshot();
        ckpt.decoder_params["buf/running_mean"] = decoder.running_mean();
        ckpt.decoder_params["buf/running_var"] = decoder.running_var();
        ckpt.optimizer_state = prefixed(dec_opt.state_snapshot(), "dec/");
        if (enc_opt) {
            auto enc_state = prefixed(enc_opt->state_snapshot(), "enc/");
            ckpt.optimizer_state.insert(enc_state.begin(), enc_state.end());
        }
        return ckpt;
    };

    StepLog log(local.out_dir, 2);
    Rng shuffle_rng = Rng(local.seed).fork(0xe70c6u);
    const int hq = local.encoder.out_h(), wq = local.encoder.out_w();

    TrainResult result;
    double best_loss = std::numeric_limits<double>::infinity();
    bool have_best = false;
    int step = 0;
    bool done = false;
    for (int epoch = 0; epoch < local.epochs && !done; ++epoch) {
        std::vector<int> order = shuffle_rng.fork(static_cast<std::uint64_t>(epoch)).permutation(n);
        for (int begin = 0; begin + local.batch_size <= n && !done; begin += local.batch_size) {
            decoder.params().zero_grads();
            if (joint) encoder.params().zero_grads();
            double loss = 0.0;
            for (int b = 0; b < local.batch_size; ++b) {
                std::size_t u = static_cast<std::size_t>(order[static_cast<std::size_t>(begin + b)]);
                Var emb = joint ? encoder.encode(pre.unit_input(units[u])) : constant(cached_emb[u]);
                Var probs = decoder.decode(emb, hq, wq, /*training=*/true);
                Var l = scale(focal_loss(probs, masks[u], local.focal), 1.0 / local.batch_size);
                loss += l->value[0];
                backward(l);
            }
            if (!std::isfinite(loss))
                throw std::runtime_error("stage 2: non-finite loss at step " + std::to_string(step + 1) +
                                         "; batch: " + batch_provenance(units, order, begin, local.batch_size));
            dec_opt.step();
            if (enc_opt) enc_opt->step();
            assert_params_finite(decoder.params(), "stage 2 step " + std::to_string(step + 1));
            if (joint) assert_params_finite(encoder.params(), "stage 2 step " + std::to_string(step + 1));

            ++step;
            result.losses.push_back(loss);
            log.record(step, 2, loss, local.effective_lr());
            if (loss < best_loss) {
                best_loss = loss;
                result.best = snapshot(step);
                have_best = true;
                maybe_save(result.best, local.out_dir, 2, "best");
            }
            if (local.checkpoint_every > 0 && step % local.checkpoint_every == 0)
                maybe_save(snapshot(step), local.out_dir, 2, "last");
            if (local.max_steps > 0 && step >= local.max_steps) done = true;
        }
        if (!joint && encoder.checksum() != frozen_checksum)
            throw std::logic_error("stage 2: frozen encoder parameters changed during epoch " +
                                   std::to_string(epoch));
    }

    if (!joint && encoder.checksum() != frozen_checksum)
        throw std::logic_error("stage 2: frozen encoder parameters changed");

    result.last = snapshot(step);
    if (!have_best) result.best = result.last;
    maybe_save(result.last, local.out_dir, 2, "last");
    return result;
}

TrainResult train_stage2(const TrainConfig& cfg, const Checkpoint& stage1,
                         const DatasetManifest& manifest) {
    auto units = load_units(manifest, cfg.split, cfg.unit_stride, cfg.encoder.in_h, cfg.encoder.in_w);
    return train_stage2(cfg, stage1, units);
}

}  // namespace vilocal
