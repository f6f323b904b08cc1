// Batch entry point: dataset generation, two-stage training, evaluation and
// the compression robustness harness, driven by a sectioned key/value config.

#include "vilocal/clipset.hpp"
#include "vilocal/config.hpp"
#include "vilocal/evaluator.hpp"
#include "vilocal/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace vilocal;

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitEnvironment = 3;

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    long long seed = -1;  // <0: take the config's value
    bool force = false;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required = true) {
    cmd->add_option("--config", args.config_path, "run config file")->check(CLI::ExistingFile);
    auto* out = cmd->add_option("--out", args.out_dir, "run output directory");
    if (out_required) out->required();
    cmd->add_option("--seed", args.seed, "override data.seed and train.seed");
    cmd->add_flag("--force", args.force, "allow writing into a non-empty run directory");
    cmd->add_option("--set", args.overrides, "config override, section.key=value (repeatable)");
}

RunConfig resolve_config(const CommonArgs& args) {
    RunConfig cfg = args.config_path.empty() ? RunConfig{} : RunConfig::parse_file(args.config_path);
    cfg.apply_overrides(args.overrides);
    if (args.seed >= 0) {
        cfg.set("data.seed", std::to_string(args.seed));
        cfg.set("train.seed", std::to_string(args.seed));
    }
    return cfg;
}

void prepare_run_dir(const std::string& dir, bool force) {
    if (fs::exists(dir) && !fs::is_directory(dir))
        throw std::runtime_error("output path exists and is not a directory: " + dir);
    if (fs::exists(dir) && !fs::is_empty(dir) && !force)
        throw std::runtime_error("run directory not empty: " + dir + " (pass --force to reuse)");
    fs::create_directories(dir);
}

void persist_config(const RunConfig& cfg, const std::string& dir) {
    std::ofstream out(dir + "/config.ini", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + dir + "/config.ini");
    out << cfg.to_text();
}

// Every run directory ends with an index of the files it produced.
void write_file_manifest(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file() && e.path().filename() != "files.txt")
            files.push_back(fs::relative(e.path(), dir).string());
    std::sort(files.begin(), files.end());
    std::ofstream out(dir + "/files.txt", std::ios::trunc);
    for (const auto& f : files) out << f << '\n';
}

SyntheticConfig synthetic_config_from(const RunConfig& cfg) {
    SyntheticConfig s;
    s.n_clips = cfg.get_int("data.n_clips", s.n_clips);
    s.frames_per_clip = cfg.get_int("data.frames_per_clip", s.frames_per_clip);
    s.height = cfg.get_int("data.height", s.height);
    s.width = cfg.get_int("data.width", s.width);
    s.objects_per_clip = cfg.get_int("data.objects_per_clip", s.objects_per_clip);
    s.noise_sigma = cfg.get_double("data.noise_sigma", s.noise_sigma);
    s.texture_amplitude = cfg.get_double("data.texture_amplitude", s.texture_amplitude);
    s.seed = static_cast<std::uint64_t>(cfg.get_int("data.seed", 0));
    s.validate();
    return s;
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

int run_gen_data(const CommonArgs& args) {
    RunConfig cfg = resolve_config(args);
    prepare_run_dir(args.out_dir, args.force);
    persist_config(cfg, args.out_dir);

    DatasetOptions opts;
    opts.synthetic = synthetic_config_from(cfg);
    opts.train_fraction = cfg.get_double("data.train_fraction", opts.train_fraction);
    opts.compress_quarter = cfg.get_bool("data.compress_quarter", opts.compress_quarter);
    std::string methods = cfg.get_str("data.methods", "");
    if (!methods.empty()) {
        opts.methods.clear();
        for (const auto& m : split_list(methods)) opts.methods.push_back(inpaint_method_from_string(m));
    }

    DatasetManifest manifest = generate_dataset(opts, args.out_dir);
    std::uint64_t checksum = dataset_checksum(manifest);
    {
        std::ofstream out(args.out_dir + "/checksum.txt", std::ios::trunc);
        out << checksum << '\n';
    }
    write_file_manifest(args.out_dir);
    std::cout << "dataset: " << manifest.entries.size() << " clips, checksum " << checksum << '\n';
    return 0;
}

int run_train(const CommonArgs& args, int stage, const std::string& stage1_ckpt_path,
              const std::string& manifest_path) {
    RunConfig cfg = resolve_config(args);
    if (!manifest_path.empty()) cfg.set("data.manifest", manifest_path);
    if (stage != 0) cfg.set("train.stage", std::to_string(stage));
    prepare_run_dir(args.out_dir, args.force);
    persist_config(cfg, args.out_dir);

    TrainConfig tcfg = train_config_from(cfg);
    tcfg.out_dir = args.out_dir;
    tcfg.config_text = cfg.to_text();
    if (tcfg.manifest_path.empty()) throw std::runtime_error("no dataset manifest (data.manifest or --manifest)");
    DatasetManifest manifest = DatasetManifest::read(tcfg.manifest_path);

    const bool run1 = stage == 0 || stage == 1;
    const bool run2 = stage == 0 || stage == 2;

    Checkpoint stage1_ckpt;
    if (run1) {
        TrainConfig s1 = tcfg;
        s1.stage = 1;
        TrainResult r = train_stage1(s1, manifest);
        stage1_ckpt = r.last;
        if (!r.losses.empty())
            std::cout << "stage 1: " << r.losses.size() << " steps, loss " << r.losses.front() << " -> "
                      << r.losses.back() << '\n';
        else
            std::cout << "stage 1: skipped (contrastive pretraining disabled)\n";
    } else if (run2) {
        std::string path = stage1_ckpt_path.empty() ? cfg.get_str("train.stage1_checkpoint", "")
                                                    : stage1_ckpt_path;
        if (!path.empty()) {
            stage1_ckpt = load_checkpoint(path);
        } else if (!tcfg.use_contrastive) {
            TrainConfig s1 = tcfg;
            s1.stage = 1;
            s1.out_dir.clear();
            stage1_ckpt = train_stage1(s1, manifest).last;  // random-init encoder
        } else {
            throw std::runtime_error(
                "stage 2 requires a stage-1 checkpoint (--stage1-ckpt or train.stage1_checkpoint)");
        }
    }

    if (run2) {
        TrainConfig s2 = tcfg;
        s2.stage = 2;
        TrainResult r = train_stage2(s2, stage1_ckpt, manifest);
        if (!r.losses.empty())
            std::cout << "stage 2: " << r.losses.size() << " steps, loss " << r.losses.front() << " -> "
                      << r.losses.back() << '\n';
    }
    write_file_manifest(args.out_dir);
    return 0;
}

PipelineModel model_from(const std::string& ckpt_path) {
    if (ckpt_path.empty()) throw std::runtime_error("--ckpt is required");
    return PipelineModel::from_checkpoint(load_checkpoint(ckpt_path));
}

int run_eval(const CommonArgs& args, const std::string& ckpt_path, double threshold,
             const std::string& manifest_path) {
    RunConfig cfg = resolve_config(args);
    prepare_run_dir(args.out_dir, args.force);
    persist_config(cfg, args.out_dir);

    PipelineModel model = model_from(ckpt_path);
    std::string manifest_file =
        manifest_path.empty() ? cfg.get_str("data.manifest", "") : manifest_path;
    if (manifest_file.empty()) throw std::runtime_error("no dataset manifest (data.manifest or --manifest)");
    DatasetManifest manifest = DatasetManifest::read(manifest_file);

    std::string split = cfg.get_str("eval.split", "test");
    int stride = cfg.get_int("eval.stride", 5);
    MetricsReport report = evaluate_dataset(model, manifest, split, threshold, stride);
    report.write_frames_csv(args.out_dir + "/frames.csv");
    report.write_summary_csv(args.out_dir + "/summary.csv");
    write_file_manifest(args.out_dir);
    std::cout << "eval[" << split << "]: video-mean IoU " << report.video_mean_iou << ", F1 "
              << report.video_mean_f1 << " (" << report.frames.size() << " frames, "
              << report.skipped_clips << " clips skipped)\n";
    return 0;
}

int run_robustness(const CommonArgs& args, const std::string& ckpt_path, double threshold,
                   const std::string& manifest_path, const std::string& codecs_flag,
                   const std::string& qualities_flag) {
    if (find_transcoder().empty())
        throw EnvironmentError("robustness harness needs the external transcoder (set VILOCAL_TRANSCODER "
                               "or put vilocal-transcode on PATH)");
    RunConfig cfg = resolve_config(args);
    prepare_run_dir(args.out_dir, args.force);
    persist_config(cfg, args.out_dir);

    PipelineModel model = model_from(ckpt_path);
    std::string manifest_file =
        manifest_path.empty() ? cfg.get_str("data.manifest", "") : manifest_path;
    if (manifest_file.empty()) throw std::runtime_error("no dataset manifest (data.manifest or --manifest)");
    DatasetManifest manifest = DatasetManifest::read(manifest_file);

    std::string split = cfg.get_str("eval.split", "test");
    int stride = cfg.get_int("eval.stride", 5);
    std::vector<std::string> codecs =
        split_list(codecs_flag.empty() ? cfg.get_str("robustness.codecs", "x264,x265,ffv1,mpeg4")
                                       : codecs_flag);
    std::vector<int> qualities;
    for (const auto& q : split_list(qualities_flag.empty() ? cfg.get_str("robustness.qualities", "13,18,23,28")
                                                           : qualities_flag))
        qualities.push_back(std::stoi(q));
    int requality = cfg.get_int("robustness.recompression_quality", 23);

    std::string work = args.out_dir + "/work";
    RobustnessTable sweep =
        robustness_sweep(model, manifest, split, codecs, qualities, work + "/sweep", threshold, stride);
    sweep.write_csv(args.out_dir + "/sweep.csv");
    sweep.write_svg(args.out_dir + "/sweep.svg");

    RobustnessTable matrix = recompression_matrix(model, manifest, split, codecs, requality,
                                                  work + "/recompression", threshold, stride);
    matrix.write_csv(args.out_dir + "/recompression.csv");

    write_file_manifest(args.out_dir);
    std::cout << "robustness: sweep " << sweep.cells.size() << " cells, recompression "
              << matrix.cells.size() << " cells\n";
    return 0;
}

// Recomputes the aggregate means from a run's per-frame CSV; writes nothing.
int run_report(const std::string& run_dir) {
    std::string path = run_dir + "/frames.csv";
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    std::getline(in, line);  // header
    MetricsReport report;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        FrameScore f;
        std::string field;
        std::getline(is, f.source_id, ',');
        std::getline(is, field, ',');
        f.frame_index = std::stoi(field);
        std::getline(is, field, ',');
        f.tp = std::stoll(field);
        std::getline(is, field, ',');
        f.fp = std::stoll(field);
        std::getline(is, field, ',');
        f.fn = std::stoll(field);
        f.iou = iou_from_counts(f.tp, f.fp, f.fn);
        f.f1 = f1_from_counts(f.tp, f.fp, f.fn);
        report.frames.push_back(std::move(f));
    }
    report.finalize();
    std::cout << "frames: " << report.frames.size() << '\n'
              << "video-mean IoU " << report.video_mean_iou << ", F1 " << report.video_mean_f1 << '\n'
              << "frame-mean IoU " << report.frame_mean_iou << ", F1 " << report.frame_mean_f1 << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"vilocal: video inpainting localization pipeline"};
    app.require_subcommand(1);

    CommonArgs gen_args, train_args, eval_args, rob_args;
    int train_stage = 0;
    std::string stage1_ckpt, train_manifest;
    std::string eval_ckpt, eval_manifest, rob_ckpt, rob_manifest;
    double eval_threshold = 0.5, rob_threshold = 0.5;
    std::string codecs_flag, qualities_flag;
    std::string report_dir;

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic inpainted dataset");
    add_common(gen, gen_args);

    auto* train = app.add_subcommand("train", "run two-stage training");
    add_common(train, train_args);
    train->add_option("--stage", train_stage, "1, 2, or 0 for both (default)")->check(CLI::Range(0, 2));
    train->add_option("--stage1-ckpt", stage1_ckpt, "stage-1 checkpoint for --stage 2");
    train->add_option("--manifest", train_manifest, "dataset manifest path");

    auto* ev = app.add_subcommand("eval", "score a checkpoint on a manifest split");
    add_common(ev, eval_args);
    ev->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate")->required();
    ev->add_option("--threshold", eval_threshold, "binarization threshold");
    ev->add_option("--manifest", eval_manifest, "dataset manifest path");

    auto* rob = app.add_subcommand("robustness", "codec/quality sweep and recompression matrix");
    add_common(rob, rob_args);
    rob->add_option("--ckpt", rob_ckpt, "checkpoint to evaluate")->required();
    rob->add_option("--threshold", rob_threshold, "binarization threshold");
    rob->add_option("--manifest", rob_manifest, "dataset manifest path");
    rob->add_option("--codecs", codecs_flag, "comma-separated codec list");
    rob->add_option("--qualities", qualities_flag, "comma-separated quality list");

    auto* rep = app.add_subcommand("report", "recompute summary metrics from a run's frames.csv");
    rep->add_option("--in", report_dir, "run directory containing frames.csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (gen->parsed()) return run_gen_data(gen_args);
        if (train->parsed()) return run_train(train_args, train_stage, stage1_ckpt, train_manifest);
        if (ev->parsed()) return run_eval(eval_args, eval_ckpt, eval_threshold, eval_manifest);
        if (rob->parsed())
            return run_robustness(rob_args, rob_ckpt, rob_threshold, rob_manifest, codecs_flag,
                                  qualities_flag);
        if (rep->parsed()) return run_report(report_dir);
    } catch (const EnvironmentError& e) {
        std::cerr << "error: environment: " << e.what() << '\n';
        return kExitEnvironment;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitUsage;
}
