#pragma once

#include "vilocal/checkpoint.hpp"
#include "vilocal/clipset.hpp"
#include "vilocal/config.hpp"
#include "vilocal/pipeline.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vilocal {

// Two-stage protocol: stage 1 fits the encoder with pixel-contrastive
// supervision, stage 2 freezes it and fits the decoder with focal supervision.
struct TrainConfig {
    int stage = 1;
    int batch_size = 2;
    int epochs = 30;
    int max_steps = 0;  // cap on optimization steps; 0 = epochs decide
    double lr = 0.0;    // 0 = stage default (1e-4 stage 1, 1e-3 stage 2)
    std::uint64_t seed = 0;
    bool use_hp3d = true;
    bool use_contrastive = true;
    int unit_stride = 1;
    std::string manifest_path;
    std::string split = "train";
    std::string out_dir;  // when set: train_log.tsv + periodic checkpoints
    int checkpoint_every = 0;  // steps between periodic saves; 0 = epoch ends only

    EncoderConfig encoder;
    DecoderConfig decoder;
    ContrastiveConfig contrastive;
    FocalConfig focal;
    std::string config_text;  // resolved run config embedded in checkpoints

    void validate() const;
    double effective_lr() const;
};

TrainConfig train_config_from(const RunConfig& cfg);

struct TrainResult {
    Checkpoint last;
    Checkpoint best;  // lowest logged loss (equals last when no step ran)
    std::vector<double> losses;  // one entry per optimization step
};

TrainResult train_stage1(const TrainConfig& cfg, const std::vector<TrainingUnit>& units);
TrainResult train_stage1(const TrainConfig& cfg, const DatasetManifest& manifest);

TrainResult train_stage2(const TrainConfig& cfg, const Checkpoint& stage1,
                         const std::vector<TrainingUnit>& units);
TrainResult train_stage2(const TrainConfig& cfg, const Checkpoint& stage1,
                         const DatasetManifest& manifest);

}  // namespace vilocal
