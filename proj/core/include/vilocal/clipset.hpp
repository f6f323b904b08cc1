#pragma once

#include "vilocal/video_io.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace vilocal {

enum class InpaintMethod { kDiffuse, kTemporalCopy, kPatchCopy };

std::string to_string(InpaintMethod m);
InpaintMethod inpaint_method_from_string(const std::string& s);

struct SyntheticConfig {
    int n_clips = 10;
    int frames_per_clip = 8;
    int height = 120;
    int width = 216;
    int objects_per_clip = 1;
    double noise_sigma = 6.0;        // per-frame sensor noise, brightness-scaled
    double texture_amplitude = 18.0; // static high-frequency background texture
    std::uint64_t seed = 0;

    void validate() const;  // resolution divisible by 4, frames >= 5
};

// Five consecutive frames plus the middle frame's mask.
struct TrainingUnit {
    int h = 0, w = 0;
    std::vector<std::uint8_t> frames;       // 5*h*w*3 RGB
    std::vector<std::uint8_t> middle_mask;  // h*w, values 0/1
    struct Provenance {
        std::string source_id;
        int start_frame = 0;
        std::string inpaint_method;
        std::string compression_tag;
    } provenance;
};

struct ManifestEntry {
    std::string clip_path;
    std::string mask_path;
    std::string split;  // train | val | test
    std::string inpaint_method;
    std::string compression_tag;  // "none" or e.g. "x264-crf23"
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> split(const std::string& name) const;
    void validate_paths() const;        // every referenced path exists
    void validate_disjoint_splits() const;  // splits partition source ids

    static DatasetManifest read(const std::string& path);
    void write(const std::string& path) const;
};

// Deterministic function of (cfg.seed, index): textured background with moving
// foreground objects; masks mark the object region per frame.
std::pair<VideoClip, MaskSequence> generate_synthetic_clip(const SyntheticConfig& cfg, int index);

// Masked pixels replaced per method; unmasked pixels untouched.
//   kDiffuse: iterative neighbor-averaging fill from the region boundary.
//   kTemporalCopy: co-located pixels from the nearest mask-0 frame
//                  (falls back to diffuse when no clean frame exists).
//   kPatchCopy: same-size non-overlapping patch copied within the frame.
VideoClip apply_toy_inpainting(const VideoClip& clip, const MaskSequence& masks, InpaintMethod method);

// Sliding 5-frame windows at the given stride; middle_mask = masks[i+2].
// T < 5 yields an empty list (a warning is the caller's concern).
std::vector<TrainingUnit> assemble_units(const VideoClip& clip, const MaskSequence& masks, int stride);

// Invokes the external command-line transcoder (VILOCAL_TRANSCODER env var, or
// vilocal-transcode found on PATH / beside the current executable).
// Returns the output path; throws EnvironmentError / TranscodeError.
std::string compress_clip(const std::string& src, const std::string& codec, int quality,
                          const std::string& dst_dir);

struct EnvironmentError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct TranscodeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// tag recorded in provenance/manifest, e.g. "x264-crf23", "mpeg4-q12", "ffv1"
std::string compression_tag(const std::string& codec, int quality);

// Path of the external transcoder, or empty when unavailable.
std::string find_transcoder();

// Full dataset generation driver: synthetic clips -> toy inpainting -> ffv1
// storage (+ mask PNGs), with every 4th training clip recompressed by x264
// CRF 23. Writes manifest.tsv in out_dir and returns the manifest.
struct DatasetOptions {
    SyntheticConfig synthetic;
    std::vector<InpaintMethod> methods{InpaintMethod::kDiffuse, InpaintMethod::kTemporalCopy,
                                       InpaintMethod::kPatchCopy};
    double train_fraction = 0.8;  // remaining clips go to test
    bool compress_quarter = true;
};
DatasetManifest generate_dataset(const DatasetOptions& opts, const std::string& out_dir);

// FNV-1a over the content files listed in a manifest, in manifest order.
std::uint64_t dataset_checksum(const DatasetManifest& manifest);

}  // namespace vilocal
