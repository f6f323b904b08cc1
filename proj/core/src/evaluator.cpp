#include "vilocal/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace vilocal {

double iou_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    std::int64_t uni = tp + fp + fn;
    if (uni == 0) return 1.0;  // both masks empty
    return static_cast<double>(tp) / static_cast<double>(uni);
}

double f1_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
    std::int64_t denom = 2 * tp + fp + fn;
    if (denom == 0) return 1.0;  // both masks empty
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

namespace {

void overlap_counts(const Tensor& pred, const Tensor& gt, std::int64_t& tp, std::int64_t& fp,
                    std::int64_t& fn) {
    if (!pred.same_shape(gt))
        throw std::invalid_argument("mask shape mismatch: " + shape_str(pred.shape()) + " vs " +
                                    shape_str(gt.shape()));
    tp = fp = fn = 0;
    for (std::int64_t i = 0; i < pred.size(); ++i) {
        bool p = pred[i] > 0.5, g = gt[i] > 0.5;
        if (p && g) ++tp;
        else if (p) ++fp;
        else if (g) ++fn;
    }
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

double iou(const BinaryMask& pred, const Tensor& gt) {
    std::int64_t tp, fp, fn;
    overlap_counts(pred.labels, gt, tp, fp, fn);
    return iou_from_counts(tp, fp, fn);
}

double f1(const BinaryMask& pred, const Tensor& gt) {
    std::int64_t tp, fp, fn;
    overlap_counts(pred.labels, gt, tp, fp, fn);
    return f1_from_counts(tp, fp, fn);
}

void MetricsReport::finalize() {
    videos.clear();
    std::vector<std::string> order;
    std::map<std::string, VideoScore> by_video;
    for (const auto& f : frames) {
        auto it = by_video.find(f.source_id);
        if (it == by_video.end()) {
            order.push_back(f.source_id);
            it = by_video.emplace(f.source_id, VideoScore{f.source_id, 0, 0, 0}).first;
        }
        it->second.frames += 1;
        it->second.mean_iou += f.iou;
        it->second.mean_f1 += f.f1;
    }
    for (const auto& id : order) {
        VideoScore v = by_video[id];
        v.mean_iou /= v.frames;
        v.mean_f1 /= v.frames;
        videos.push_back(v);
    }
    video_mean_iou = video_mean_f1 = frame_mean_iou = frame_mean_f1 = 0;
    for (const auto& v : videos) {
        video_mean_iou += v.mean_iou;
        video_mean_f1 += v.mean_f1;
    }
    if (!videos.empty()) {
        video_mean_iou /= static_cast<double>(videos.size());
        video_mean_f1 /= static_cast<double>(videos.size());
    }
    for (const auto& f : frames) {
        frame_mean_iou += f.iou;
        frame_mean_f1 += f.f1;
    }
    if (!frames.empty()) {
        frame_mean_iou /= static_cast<double>(frames.size());
        frame_mean_f1 /= static_cast<double>(frames.size());
    }
}

void MetricsReport::write_frames_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "source_id,frame_index,tp,fp,fn,iou,f1,inpaint_method,compression_tag\n";
    for (const auto& f : frames)
        out << csv_field(f.source_id) << ',' << f.frame_index << ',' << f.tp << ',' << f.fp << ',' << f.fn
            << ',' << f.iou << ',' << f.f1 << ',' << csv_field(f.inpaint_method) << ','
            << csv_field(f.compression_tag) << '\n';
}

void MetricsReport::write_summary_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "scope,name,frames,mean_iou,mean_f1,threshold,stride,skipped_clips\n";
    out << "dataset_video_mean,all," << frames.size() << ',' << video_mean_iou << ',' << video_mean_f1 << ','
        << threshold << ',' << stride << ',' << skipped_clips << '\n';
    out << "dataset_frame_mean,all," << frames.size() << ',' << frame_mean_iou << ',' << frame_mean_f1 << ','
        << threshold << ',' << stride << ',' << skipped_clips << '\n';
    for (const auto& v : videos)
        out << "video," << csv_field(v.source_id) << ',' << v.frames << ',' << v.mean_iou << ',' << v.mean_f1
            << ',' << threshold << ',' << stride << ",\n";
}

MetricsReport evaluate_units(PipelineModel& model, const std::vector<TrainingUnit>& units,
                             double threshold, const PredictionSink& sink) {
    MetricsReport report;
    report.threshold = threshold;
    for (const auto& unit : units) {
        ProbabilityMap probs = model.predict(unit);
        BinaryMask pred = binarize(probs, threshold);
        Tensor gt = unit_mask_tensor(unit);
        FrameScore score;
        overlap_counts(pred.labels, gt, score.tp, score.fp, score.fn);
        score.iou = iou_from_counts(score.tp, score.fp, score.fn);
        score.f1 = f1_from_counts(score.tp, score.fp, score.fn);
        score.source_id = unit.provenance.source_id;
        score.frame_index = unit.provenance.start_frame + 2;
        score.inpaint_method = unit.provenance.inpaint_method;
        score.compression_tag = unit.provenance.compression_tag;
        report.frames.push_back(std::move(score));
        if (sink) sink(unit, probs, pred);
    }
    report.finalize();
    return report;
}

MetricsReport evaluate_dataset(PipelineModel& model, const DatasetManifest& manifest,
                               const std::string& split, double threshold, int stride,
                               const PredictionSink& sink) {
    if (!model.encoder) throw std::logic_error("evaluate_dataset: pipeline has no encoder");
    int skipped = 0;
    auto units = load_units(manifest, split, stride, model.encoder->config().in_h,
                            model.encoder->config().in_w, &skipped);
    MetricsReport report = evaluate_units(model, units, threshold, sink);
    report.stride = stride;
    report.skipped_clips = skipped;
    return report;
}

const RobustnessCell& RobustnessTable::cell(const std::string& row, const std::string& col) const {
    for (const auto& c : cells)
        if (c.row == row && c.col == col) return c;
    throw std::out_of_range("no cell (" + row + ", " + col + ")");
}

void RobustnessTable::write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << row_axis << ',' << col_axis << ",mean_iou,mean_f1,status\n";
    for (const auto& c : cells)
        out << csv_field(c.row) << ',' << csv_field(c.col) << ',' << c.mean_iou << ',' << c.mean_f1 << ','
            << (c.failed ? "failed" : "ok") << '\n';
}

void RobustnessTable::write_svg(const std::string& path, bool plot_f1) const {
    const int width = 560, height = 360;
    const int x0 = 60, y0 = 310, x1 = 520, y1 = 30;
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"};

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1
        << "\" stroke=\"black\"/>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        double v = tick / 4.0;
        double y = y0 + (y1 - y0) * v;
        out << "<line x1=\"" << x0 - 4 << "\" y1=\"" << y << "\" x2=\"" << x0 << "\" y2=\"" << y
            << "\" stroke=\"black\"/>\n";
        out << "<text x=\"" << x0 - 8 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
    }
    const int ncols = static_cast<int>(cols.size());
    auto col_x = [&](int i) {
        if (ncols <= 1) return (x0 + x1) / 2.0;
        return x0 + (x1 - x0) * static_cast<double>(i) / (ncols - 1);
    };
    for (int i = 0; i < ncols; ++i) {
        out << "<text x=\"" << col_x(i) << "\" y=\"" << y0 + 18 << "\" text-anchor=\"middle\">" << cols[i]
            << "</text>\n";
    }
    out << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << y0 + 36 << "\" text-anchor=\"middle\">" << col_axis
        << "</text>\n";

    auto emit_series = [&](bool use_f1, int row_idx, const char* color, const char* dash) {
        std::ostringstream pts;
        bool any = false;
        for (int i = 0; i < ncols; ++i) {
            const RobustnessCell& c = cell(rows[static_cast<std::size_t>(row_idx)],
                                           cols[static_cast<std::size_t>(i)]);
            if (c.failed) continue;
            double v = use_f1 ? c.mean_f1 : c.mean_iou;
            double y = y0 + (y1 - y0) * std::clamp(v, 0.0, 1.0);
            pts << col_x(i) << ',' << y << ' ';
            any = true;
        }
        if (any)
            out << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color
                << "\" stroke-width=\"2\"" << dash << "/>\n";
    };

    for (std::size_t r = 0; r < rows.size(); ++r) {
        const char* color = kColors[r % (sizeof(kColors) / sizeof(kColors[0]))];
        emit_series(false, static_cast<int>(r), color, "");
        if (plot_f1) emit_series(true, static_cast<int>(r), color, " stroke-dasharray=\"6,4\"");
        double ly = y1 + 16.0 * static_cast<double>(r);
        out << "<line x1=\"" << x1 - 90 << "\" y1=\"" << ly << "\" x2=\"" << x1 - 70 << "\" y2=\"" << ly
            << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        out << "<text x=\"" << x1 - 64 << "\" y=\"" << ly + 4 << "\">" << rows[r] << "</text>\n";
    }
    if (plot_f1)
        out << "<text x=\"" << x0 + 8 << "\" y=\"" << y1 + 4
            << "\">solid: IoU, dashed: F1</text>\n";
    out << "</svg>\n";
}

namespace {

// Scores one (row, col) combination where the clips have already been prepared
// (paths in compressed_clips, parallel to the split entries).
RobustnessCell score_prepared(PipelineModel& model, const std::vector<ManifestEntry>& entries,
                              const std::vector<std::string>& compressed_clips, const std::string& row,
                              const std::string& col, double threshold, int stride) {
    DatasetManifest scratch;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        ManifestEntry e = entries[i];
        e.clip_path = compressed_clips[i];
        scratch.entries.push_back(std::move(e));
    }
    MetricsReport report =
        evaluate_dataset(model, scratch, entries.empty() ? "" : entries.front().split, threshold, stride);
    RobustnessCell cell;
    cell.row = row;
    cell.col = col;
    cell.mean_iou = report.video_mean_iou;
    cell.mean_f1 = report.video_mean_f1;
    return cell;
}

}  // namespace

RobustnessTable robustness_sweep(PipelineModel& model, const DatasetManifest& manifest,
                                 const std::string& split, const std::vector<std::string>& codecs,
                                 const std::vector<int>& qualities, const std::string& work_dir,
                                 double threshold, int stride) {
    RobustnessTable table;
    table.row_axis = "codec";
    table.col_axis = "quality";
    table.rows = codecs;
    for (int q : qualities) table.cols.push_back(std::to_string(q));

    auto entries = manifest.split(split);
    if (entries.empty()) throw std::invalid_argument("robustness_sweep: split '" + split + "' is empty");

    for (const auto& codec : codecs) {
        for (int q : qualities) {
            std::string col = std::to_string(q);
            std::string cell_dir = work_dir + "/" + codec + "-q" + col;
            RobustnessCell cell;
            cell.row = codec;
            cell.col = col;
            try {
                fs::create_directories(cell_dir);
                std::vector<std::string> compressed;
                for (const auto& e : entries) compressed.push_back(compress_clip(e.clip_path, codec, q, cell_dir));
                cell = score_prepared(model, entries, compressed, codec, col, threshold, stride);
            } catch (const std::exception& ex) {
                std::cerr << "warning: sweep cell (" << codec << ", " << col << ") failed: " << ex.what()
                          << '\n';
                cell.failed = true;
            }
            table.cells.push_back(std::move(cell));
        }
    }
    return table;
}

RobustnessTable recompression_matrix(PipelineModel& model, const DatasetManifest& manifest,
                                     const std::string& split, const std::vector<std::string>& codecs,
                                     int quality, const std::string& work_dir, double threshold,
                                     int stride) {
    RobustnessTable table;
    table.row_axis = "first_codec";
    table.col_axis = "second_codec";
    table.rows = codecs;
    table.cols = codecs;

    auto entries = manifest.split(split);
    if (entries.empty()) throw std::invalid_argument("recompression_matrix: split '" + split + "' is empty");

    // First-pass outputs are shared across the row, compress once per codec.
    std::map<std::string, std::vector<std::string>> first_pass;
    std::map<std::string, bool> first_failed;
    for (const auto& codec : codecs) {
        std::string dir = work_dir + "/first-" + codec;
        try {
            fs::create_directories(dir);
            std::vector<std::string> out;
            for (const auto& e : entries) out.push_back(compress_clip(e.clip_path, codec, quality, dir));
            first_pass[codec] = std::move(out);
            first_failed[codec] = false;
        } catch (const std::exception& ex) {
            std::cerr << "warning: first-pass compression with " << codec << " failed: " << ex.what() << '\n';
            first_failed[codec] = true;
        }
    }

    for (const auto& first : codecs) {
        for (const auto& second : codecs) {
            RobustnessCell cell;
            cell.row = first;
            cell.col = second;
            if (first_failed[first]) {
                cell.failed = true;
                table.cells.push_back(std::move(cell));
                continue;
            }
            std::string dir = work_dir + "/" + first + "-then-" + second;
            try {
                fs::create_directories(dir);
                std::vector<std::string> compressed;
                for (const auto& path : first_pass[first])
                    compressed.push_back(compress_clip(path, second, quality, dir));
                cell = score_prepared(model, entries, compressed, first, second, threshold, stride);
            } catch (const std::exception& ex) {
                std::cerr << "warning: matrix cell (" << first << ", " << second << ") failed: " << ex.what()
                          << '\n';
                cell.failed = true;
            }
            table.cells.push_back(std::move(cell));
        }
    }
    return table;
}

}  // namespace vilocal
