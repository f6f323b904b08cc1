#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace vilocal {

// 8-bit RGB frame volume.
struct VideoClip {
    int t = 0, h = 0, w = 0;
    std::vector<std::uint8_t> rgb;  // t*h*w*3, row-major, channel-interleaved
    double fps = 10.0;
    std::string source_id;

    std::uint8_t& at(int ti, int hi, int wi, int c) {
        return rgb[static_cast<std::size_t>(((static_cast<std::int64_t>(ti) * h + hi) * w + wi) * 3 + c)];
    }
    std::uint8_t at(int ti, int hi, int wi, int c) const {
        return rgb[static_cast<std::size_t>(((static_cast<std::int64_t>(ti) * h + hi) * w + wi) * 3 + c)];
    }
    std::size_t frame_bytes() const { return static_cast<std::size_t>(h) * w * 3; }
    const std::uint8_t* frame(int ti) const { return rgb.data() + static_cast<std::size_t>(ti) * frame_bytes(); }
    std::uint8_t* frame(int ti) { return rgb.data() + static_cast<std::size_t>(ti) * frame_bytes(); }
};

// Per-frame binary labels, 1 = inpainted.
struct MaskSequence {
    int t = 0, h = 0, w = 0;
    std::vector<std::uint8_t> labels;  // t*h*w, values 0/1

    std::uint8_t& at(int ti, int hi, int wi) {
        return labels[static_cast<std::size_t>((static_cast<std::int64_t>(ti) * h + hi) * w + wi)];
    }
    std::uint8_t at(int ti, int hi, int wi) const {
        return labels[static_cast<std::size_t>((static_cast<std::int64_t>(ti) * h + hi) * w + wi)];
    }
    const std::uint8_t* frame(int ti) const {
        return labels.data() + static_cast<std::size_t>(ti) * h * w;
    }
};

// I/O failures carry the offending path.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Lossless clip storage: ffv1 in matroska, RGB carried as planar GBR.
void write_clip_ffv1(const VideoClip& clip, const std::string& path);

// Decodes any libav-supported file to RGB24 frames.
VideoClip read_video(const std::string& path);

// Generic in-process transcode used by the CLI transcoder tool.
// codec in {x264, x265, ffv1, mpeg4}; quality is the codec-native control
// (CRF for x264/x265, ignored for ffv1, quantizer round(q/2) in [2,31] for mpeg4).
void transcode_video(const std::string& src, const std::string& dst, const std::string& codec,
                     int quality);

// Masks as {0,255} single-channel PNGs, one file per frame: 000000.png, ...
void write_mask_pngs(const MaskSequence& masks, const std::string& dir);
MaskSequence read_mask_pngs(const std::string& dir);

// PNG frame directory alternative to video files.
void write_frame_pngs(const VideoClip& clip, const std::string& dir);

// Decodes a video file or a PNG frame directory; optional target resolution
// (h, w): frames bilinear-resized, masks nearest-neighbor then re-binarized.
std::pair<VideoClip, MaskSequence> load_clip(const std::string& clip_path, const std::string& mask_path,
                                             std::optional<std::pair<int, int>> target_resolution = {});

// 8-bit grayscale exports for predictions.
void write_gray_png(const std::string& path, int h, int w, const std::vector<std::uint8_t>& gray);

}  // namespace vilocal
