#pragma once

#include "vilocal/clipset.hpp"
#include "vilocal/decoder.hpp"
#include "vilocal/pipeline.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace vilocal {

double iou_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn);
double f1_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn);

// Pixel overlap metrics; both-empty pairs score 1, exactly-one-empty pairs 0.
double iou(const BinaryMask& pred, const Tensor& gt);
double f1(const BinaryMask& pred, const Tensor& gt);

struct FrameScore {
    std::string source_id;
    int frame_index = 0;
    std::int64_t tp = 0, fp = 0, fn = 0;
    double iou = 0, f1 = 0;
    std::string inpaint_method, compression_tag;
};

struct VideoScore {
    std::string source_id;
    int frames = 0;
    double mean_iou = 0, mean_f1 = 0;
};

struct MetricsReport {
    double threshold = 0.5;
    int stride = 5;
    int skipped_clips = 0;
    std::vector<FrameScore> frames;
    std::vector<VideoScore> videos;
    // Headline numbers average per-video means so long clips cannot dominate;
    // the flat per-frame means are reported alongside.
    double video_mean_iou = 0, video_mean_f1 = 0;
    double frame_mean_iou = 0, frame_mean_f1 = 0;

    void finalize();  // rebuilds videos and the means from frames
    void write_frames_csv(const std::string& path) const;
    void write_summary_csv(const std::string& path) const;
};

using PredictionSink = std::function<void(const TrainingUnit&, const ProbabilityMap&, const BinaryMask&)>;

MetricsReport evaluate_units(PipelineModel& model, const std::vector<TrainingUnit>& units,
                             double threshold = 0.5, const PredictionSink& sink = nullptr);

MetricsReport evaluate_dataset(PipelineModel& model, const DatasetManifest& manifest,
                               const std::string& split, double threshold = 0.5, int stride = 5,
                               const PredictionSink& sink = nullptr);

struct RobustnessCell {
    std::string row, col;
    double mean_iou = 0, mean_f1 = 0;
    bool failed = false;  // transcode failure; run continues with the cell marked
};

struct RobustnessTable {
    std::string row_axis, col_axis;  // e.g. "codec" x "quality"
    std::vector<std::string> rows, cols;
    std::vector<RobustnessCell> cells;  // row-major, complete grid

    const RobustnessCell& cell(const std::string& row, const std::string& col) const;
    void write_csv(const std::string& path) const;  // long form, one cell per line
    // Line plot: one polyline per row series over the column axis.
    void write_svg(const std::string& path, bool plot_f1 = true) const;
};

// Compress the split's clips per (codec, quality) and re-score (CRF sweep).
RobustnessTable robustness_sweep(PipelineModel& model, const DatasetManifest& manifest,
                                 const std::string& split, const std::vector<std::string>& codecs,
                                 const std::vector<int>& qualities, const std::string& work_dir,
                                 double threshold = 0.5, int stride = 5);

// Compress twice, (first codec, second codec), at a fixed quality and re-score.
RobustnessTable recompression_matrix(PipelineModel& model, const DatasetManifest& manifest,
                                     const std::string& split, const std::vector<std::string>& codecs,
                                     int quality, const std::string& work_dir, double threshold = 0.5,
                                     int stride = 5);

}  // namespace vilocal
