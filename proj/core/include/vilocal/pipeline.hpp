#pragma once

#include "vilocal/checkpoint.hpp"
#include "vilocal/clipset.hpp"
#include "vilocal/config.hpp"
#include "vilocal/decoder.hpp"
#include "vilocal/encoder.hpp"
#include "vilocal/hp3d.hpp"
#include "vilocal/objectives.hpp"

#include <memory>
#include <string>

namespace vilocal {

EncoderConfig encoder_config_from(const RunConfig& cfg);
DecoderConfig decoder_config_from(const RunConfig& cfg);
ContrastiveConfig contrastive_config_from(const RunConfig& cfg);
FocalConfig focal_config_from(const RunConfig& cfg);

// Full inference stack: HP3D preprocessing, encoder, decoder.
struct PipelineModel {
    RunConfig run_config;
    Hp3dKernel kernel = Hp3dKernel::laplacian();
    bool use_hp3d = true;
    std::unique_ptr<Encoder> encoder;
    std::unique_ptr<Decoder> decoder;  // may be null (stage-1 checkpoint)

    static PipelineModel from_checkpoint(const Checkpoint& ckpt);

    // [5,H,W,3] network input for a unit: HP3D residual of [0,1] frames, or
    // raw frames shifted to [-0.5,0.5] when the HP3D layer is bypassed.
    Tensor unit_input(const TrainingUnit& unit) const;

    ProbabilityMap predict(const TrainingUnit& unit);
};

// Unit frames as a [5,H,W,3] tensor scaled to [0,1].
Tensor unit_frames_01(const TrainingUnit& unit);
// Middle mask as a [H,W] tensor of {0,1}.
Tensor unit_mask_tensor(const TrainingUnit& unit);

// Loads and windows every clip of a manifest split at the encoder resolution.
std::vector<TrainingUnit> load_units(const DatasetManifest& manifest, const std::string& split,
                                     int stride, int target_h, int target_w, int* skipped_clips = nullptr);

}  // namespace vilocal
