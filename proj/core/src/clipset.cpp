#include "vilocal/clipset.hpp"

#include "vilocal/nn.hpp"  // fnv1a_bytes
#include "vilocal/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace vilocal {

std::string to_string(InpaintMethod m) {
    switch (m) {
        case InpaintMethod::kDiffuse: return "diffuse";
        case InpaintMethod::kTemporalCopy: return "temporal_copy";
        case InpaintMethod::kPatchCopy: return "patch_copy";
    }
    return "unknown";
}

InpaintMethod inpaint_method_from_string(const std::string& s) {
    if (s == "diffuse") return InpaintMethod::kDiffuse;
    if (s == "temporal_copy") return InpaintMethod::kTemporalCopy;
    if (s == "patch_copy") return InpaintMethod::kPatchCopy;
    throw std::invalid_argument("unknown inpaint method: " + s);
}

void SyntheticConfig::validate() const {
    if (height % 4 != 0 || width % 4 != 0)
        throw std::invalid_argument("synthetic config: resolution must be divisible by 4");
    if (frames_per_clip < 5) throw std::invalid_argument("synthetic config: frames_per_clip must be >= 5");
    if (n_clips < 1) throw std::invalid_argument("synthetic config: n_clips must be >= 1");
    if (objects_per_clip < 0) throw std::invalid_argument("synthetic config: negative object count");
}

namespace {

struct MovingObject {
    bool ellipse;
    double cx, cy;      // center at t=0
    double vx, vy;      // linear velocity, px/frame
    double half_h, half_w;
    double base[3];     // object color
    double tex_freq_y, tex_freq_x, tex_phase;
};

inline std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

}  // namespace

std::pair<VideoClip, MaskSequence> generate_synthetic_clip(const SyntheticConfig& cfg, int index) {
    cfg.validate();
    Rng rng = Rng(cfg.seed).fork(static_cast<std::uint64_t>(index));

    const int T = cfg.frames_per_clip, H = cfg.height, W = cfg.width;
    VideoClip clip;
    clip.t = T;
    clip.h = H;
    clip.w = W;
    clip.fps = 10.0;
    {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "clip%05d", index);
        clip.source_id = buf;
    }
    clip.rgb.resize(static_cast<std::size_t>(T) * H * W * 3);
    MaskSequence masks;
    masks.t = T;
    masks.h = H;
    masks.w = W;
    masks.labels.assign(static_cast<std::size_t>(T) * H * W, 0);

    // static background: smooth gradient + high-frequency texture field
    double grad_dir = rng.uniform(0.0, 2.0 * 3.14159265358979);
    double base_r = rng.uniform(70.0, 130.0), base_g = rng.uniform(70.0, 130.0),
           base_b = rng.uniform(70.0, 130.0);
    double fy = rng.uniform(0.25, 0.9), fx = rng.uniform(0.25, 0.9), ph = rng.uniform(0.0, 6.28);
    std::vector<double> static_tex(static_cast<std::size_t>(H) * W);
    for (auto& v : static_tex) v = rng.uniform(-1.0, 1.0);

    std::vector<MovingObject> objects;
    for (int o = 0; o < cfg.objects_per_clip; ++o) {
        MovingObject obj;
        obj.ellipse = rng.uniform() < 0.5;
        obj.half_h = rng.uniform(0.10, 0.16) * H;
        obj.half_w = rng.uniform(0.10, 0.16) * W;
        obj.cx = rng.uniform(0.3, 0.7) * W;
        obj.cy = rng.uniform(0.35, 0.65) * H;
        obj.vx = rng.uniform(-2.5, 2.5);
        obj.vy = rng.uniform(-1.5, 1.5);
        for (double& c : obj.base) c = rng.uniform(40.0, 215.0);
        obj.tex_freq_y = rng.uniform(0.3, 1.1);
        obj.tex_freq_x = rng.uniform(0.3, 1.1);
        obj.tex_phase = rng.uniform(0.0, 6.28);
        objects.push_back(obj);
    }

    double cg = std::cos(grad_dir), sg = std::sin(grad_dir);
    for (int t = 0; t < T; ++t) {
        double jx = rng.normal(0.0, 0.35), jy = rng.normal(0.0, 0.35);  // motion jitter
        for (int i = 0; i < H; ++i) {
            for (int j = 0; j < W; ++j) {
                double g = 50.0 * (cg * i / H + sg * j / W);
                double tex = cfg.texture_amplitude *
                             (0.6 * std::sin(2 * 3.14159265 * (fy * i + fx * j) / 7.0 + ph) +
                              0.7 * static_tex[static_cast<std::size_t>(i) * W + j]);
                double px[3] = {base_r + g + tex, base_g + g + tex, base_b + g + tex};
                bool inside = false;
                for (const auto& obj : objects) {
                    double ox = obj.cx + obj.vx * t + jx;
                    double oy = obj.cy + obj.vy * t + jy;
                    double dy = (i - oy) / obj.half_h, dx = (j - ox) / obj.half_w;
                    bool in = obj.ellipse ? (dx * dx + dy * dy <= 1.0)
                                          : (std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0);
                    if (in) {
                        inside = true;
                        double otex = 22.0 * std::sin(obj.tex_freq_y * i + obj.tex_freq_x * j + obj.tex_phase);
                        for (int c = 0; c < 3; ++c) px[c] = obj.base[c] + otex;
                    }
                }
                // brightness-scaled sensor noise, stronger toward the bottom
                double sigma = cfg.noise_sigma * (0.25 + 1.5 * static_cast<double>(i) / H);
                for (int c = 0; c < 3; ++c) clip.at(t, i, j, c) = to_u8(px[c] + rng.normal(0.0, sigma));
                if (inside) masks.at(t, i, j) = 1;
            }
        }
    }
    return {std::move(clip), std::move(masks)};
}

namespace {

// Jacobi neighbor-averaging fill of the masked region of one frame.
void diffuse_fill_frame(VideoClip& clip, const MaskSequence& region, int t, int max_iters = 600) {
    const int H = clip.h, W = clip.w;
    std::vector<std::array<double, 3>> cur(static_cast<std::size_t>(H) * W);
    std::vector<int> masked;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            auto& p = cur[static_cast<std::size_t>(i) * W + j];
            for (int c = 0; c < 3; ++c) p[static_cast<std::size_t>(c)] = clip.at(t, i, j, c);
            if (region.at(t, i, j)) masked.push_back(i * W + j);
        }
    if (masked.empty()) return;
    // seed the region with the mean of its clean neighbors' values
    double seed[3] = {0, 0, 0};
    int nseed = 0;
    for (int idx : masked) {
        int i = idx / W, j = idx % W;
        const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
            int ni = i + di[k], nj = j + dj[k];
            if (ni < 0 || ni >= H || nj < 0 || nj >= W || region.at(t, ni, nj)) continue;
            for (int c = 0; c < 3; ++c) seed[c] += cur[static_cast<std::size_t>(ni) * W + nj][static_cast<std::size_t>(c)];
            ++nseed;
        }
    }
    if (nseed > 0)
        for (int idx : masked)
            for (int c = 0; c < 3; ++c) cur[static_cast<std::size_t>(idx)][static_cast<std::size_t>(c)] = seed[c] / nseed;

    std::vector<std::array<double, 3>> next = cur;
    for (int iter = 0; iter < max_iters; ++iter) {
        double max_delta = 0.0;
        for (int idx : masked) {
            int i = idx / W, j = idx % W;
            double acc[3] = {0, 0, 0};
            int cnt = 0;
            const int di[4] = {-1, 1, 0, 0}, dj[4] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                int ni = i + di[k], nj = j + dj[k];
                if (ni < 0 || ni >= H || nj < 0 || nj >= W) continue;
                for (int c = 0; c < 3; ++c) acc[c] += cur[static_cast<std::size_t>(ni) * W + nj][static_cast<std::size_t>(c)];
                ++cnt;
            }
            for (int c = 0; c < 3; ++c) {
                double v = cnt ? acc[c] / cnt : cur[static_cast<std::size_t>(idx)][static_cast<std::size_t>(c)];
                max_delta = std::max(max_delta, std::abs(v - cur[static_cast<std::size_t>(idx)][static_cast<std::size_t>(c)]));
                next[static_cast<std::size_t>(idx)][static_cast<std::size_t>(c)] = v;
            }
        }
        for (int idx : masked) cur[static_cast<std::size_t>(idx)] = next[static_cast<std::size_t>(idx)];
        if (max_delta < 0.02) break;
    }
    for (int idx : masked) {
        int i = idx / W, j = idx % W;
        for (int c = 0; c < 3; ++c) clip.at(t, i, j, c) = to_u8(cur[static_cast<std::size_t>(idx)][static_cast<std::size_t>(c)]);
    }
}

struct BBox {
    int i0 = 0, i1 = -1, j0 = 0, j1 = -1;  // inclusive
    bool empty() const { return i1 < i0 || j1 < j0; }
    int h() const { return i1 - i0 + 1; }
    int w() const { return j1 - j0 + 1; }
};

BBox mask_bbox(const MaskSequence& masks, int t) {
    BBox b;
    b.i0 = masks.h;
    b.j0 = masks.w;
    for (int i = 0; i < masks.h; ++i)
        for (int j = 0; j < masks.w; ++j)
            if (masks.at(t, i, j)) {
                b.i0 = std::min(b.i0, i);
                b.i1 = std::max(b.i1, i);
                b.j0 = std::min(b.j0, j);
                b.j1 = std::max(b.j1, j);
            }
    return b;
}

}  // namespace

VideoClip apply_toy_inpainting(const VideoClip& clip, const MaskSequence& masks, InpaintMethod method) {
    if (masks.t != clip.t || masks.h != clip.h || masks.w != clip.w)
        throw std::invalid_argument("apply_toy_inpainting: mask not paired with clip");
    VideoClip out = clip;
    const int T = clip.t, H = clip.h, W = clip.w;

    switch (method) {
        case InpaintMethod::kDiffuse: {
            for (int t = 0; t < T; ++t) diffuse_fill_frame(out, masks, t);
            break;
        }
        case InpaintMethod::kTemporalCopy: {
            MaskSequence leftover;
            leftover.t = T;
            leftover.h = H;
            leftover.w = W;
            leftover.labels.assign(masks.labels.size(), 0);
            bool any_leftover = false;
            for (int t = 0; t < T; ++t)
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j < W; ++j) {
                        if (!masks.at(t, i, j)) continue;
                        int src = -1;
                        for (int d = 1; d < T && src < 0; ++d) {
                            if (t - d >= 0 && !masks.at(t - d, i, j)) src = t - d;
                            else if (t + d < T && !masks.at(t + d, i, j)) src = t + d;
                        }
                        if (src >= 0) {
                            for (int c = 0; c < 3; ++c) out.at(t, i, j, c) = clip.at(src, i, j, c);
                        } else {
                            leftover.at(t, i, j) = 1;
                            any_leftover = true;
                        }
                    }
            if (any_leftover)  // no clean frame anywhere: diffuse fallback
                for (int t = 0; t < T; ++t) diffuse_fill_frame(out, leftover, t);
            break;
        }
        case InpaintMethod::kPatchCopy: {
            // Patch fills resample at fractional offsets, so sample the source
            // half a pixel off-grid (2x2 bilinear). The interpolation softens
            // the copied noise the same way real patch blending does.
            auto src_px = [&](int t, int fi, int fj, int c) {
                int i1 = std::min(fi + 1, H - 1), j1 = std::min(fj + 1, W - 1);
                int sum = clip.at(t, fi, fj, c) + clip.at(t, fi, j1, c) + clip.at(t, i1, fj, c) +
                          clip.at(t, i1, j1, c);
                return static_cast<std::uint8_t>((sum + 2) / 4);
            };
            for (int t = 0; t < T; ++t) {
                BBox b = mask_bbox(masks, t);
                if (b.empty()) continue;
                // deterministic non-overlapping source: directly above the
                // region, else below, else beside it
                int si = -1, sj = b.j0;
                if (b.i0 - b.h() - 2 >= 0) si = b.i0 - b.h() - 2;
                else if (b.i1 + 2 + b.h() < H) si = b.i1 + 2;
                if (si >= 0) {
                    for (int i = b.i0; i <= b.i1; ++i)
                        for (int j = b.j0; j <= b.j1; ++j)
                            if (masks.at(t, i, j))
                                for (int c = 0; c < 3; ++c)
                                    out.at(t, i, j, c) = src_px(t, si + (i - b.i0), sj + (j - b.j0), c);
                } else {
                    int sjj = (b.j0 - b.w() - 2 >= 0) ? b.j0 - b.w() - 2
                              : (b.j1 + 2 + b.w() < W) ? b.j1 + 2
                                                       : -1;
                    if (sjj < 0) {  // region too large to source a clean patch
                        MaskSequence one;
                        one.t = T;
                        one.h = H;
                        one.w = W;
                        one.labels.assign(masks.labels.size(), 0);
                        for (int i = 0; i < H; ++i)
                            for (int j = 0; j < W; ++j) one.at(t, i, j) = masks.at(t, i, j);
                        diffuse_fill_frame(out, one, t);
                    } else {
                        for (int i = b.i0; i <= b.i1; ++i)
                            for (int j = b.j0; j <= b.j1; ++j)
                                if (masks.at(t, i, j))
                                    for (int c = 0; c < 3; ++c)
                                        out.at(t, i, j, c) = src_px(t, b.i0 + (i - b.i0), sjj + (j - b.j0), c);
                    }
                }
            }
            break;
        }
    }
    return out;
}

std::vector<TrainingUnit> assemble_units(const VideoClip& clip, const MaskSequence& masks, int stride) {
    if (stride < 1) throw std::invalid_argument("assemble_units: stride must be >= 1");
    if (masks.t != clip.t || masks.h != clip.h || masks.w != clip.w)
        throw std::invalid_argument("assemble_units: mask not paired with clip");
    std::vector<TrainingUnit> units;
    if (clip.t < 5) return units;  // too short; caller may warn
    for (int start = 0; start + 5 <= clip.t; start += stride) {
        TrainingUnit u;
        u.h = clip.h;
        u.w = clip.w;
        u.frames.assign(clip.frame(start), clip.frame(start) + 5 * clip.frame_bytes());
        u.middle_mask.assign(masks.frame(start + 2),
                             masks.frame(start + 2) + static_cast<std::size_t>(clip.h) * clip.w);
        u.provenance.source_id = clip.source_id;
        u.provenance.start_frame = start;
        units.push_back(std::move(u));
    }
    return units;
}

// --- manifest ---

std::vector<ManifestEntry> DatasetManifest::split(const std::string& name) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (e.split == name) out.push_back(e);
    return out;
}

void DatasetManifest::validate_paths() const {
    for (const auto& e : entries) {
        if (!fs::exists(e.clip_path)) throw IoError("manifest: missing clip " + e.clip_path);
        if (!fs::exists(e.mask_path)) throw IoError("manifest: missing mask " + e.mask_path);
    }
}

namespace {
std::string source_id_of(const std::string& clip_path) {
    std::string stem = fs::path(clip_path).stem().string();
    auto pos = stem.find('_');
    return pos == std::string::npos ? stem : stem.substr(0, pos);
}
}  // namespace

void DatasetManifest::validate_disjoint_splits() const {
    std::map<std::string, std::string> owner;  // source id -> split
    for (const auto& e : entries) {
        std::string sid = source_id_of(e.clip_path);
        auto [it, inserted] = owner.emplace(sid, e.split);
        if (!inserted && it->second != e.split)
            throw std::invalid_argument("manifest: source " + sid + " appears in splits " + it->second +
                                        " and " + e.split);
    }
}

DatasetManifest DatasetManifest::read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    fs::path base = fs::path(path).parent_path();
    DatasetManifest m;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream is(line);
        ManifestEntry e;
        if (!(is >> e.clip_path >> e.mask_path >> e.split >> e.inpaint_method >> e.compression_tag))
            throw IoError("malformed manifest line in " + path + ": " + line);
        if (fs::path(e.clip_path).is_relative()) e.clip_path = (base / e.clip_path).string();
        if (fs::path(e.mask_path).is_relative()) e.mask_path = (base / e.mask_path).string();
        m.entries.push_back(std::move(e));
    }
    return m;
}

void DatasetManifest::write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path);
    fs::path base = fs::path(path).parent_path();
    for (const auto& e : entries) {
        auto rel = [&](const std::string& p) {
            std::error_code ec;
            fs::path r = fs::relative(p, base, ec);
            return ec || r.empty() ? p : r.string();
        };
        out << rel(e.clip_path) << '\t' << rel(e.mask_path) << '\t' << e.split << '\t' << e.inpaint_method
            << '\t' << e.compression_tag << '\n';
    }
}

// --- compression ---

std::string compression_tag(const std::string& codec, int quality) {
    if (codec == "ffv1") return "ffv1";
    if (codec == "mpeg4") return "mpeg4-q" + std::to_string(std::clamp((quality + 1) / 2, 2, 31));
    return codec + "-crf" + std::to_string(quality);
}

std::string find_transcoder() {
    if (const char* env = std::getenv("VILOCAL_TRANSCODER")) {
        if (fs::exists(env)) return env;
        return "";
    }
    // beside the current executable
    std::error_code ec;
    fs::path self = fs::read_symlink("/proc/self/exe", ec);
    if (!ec) {
        fs::path candidate = self.parent_path() / "vilocal-transcode";
        if (fs::exists(candidate)) return candidate.string();
    }
    // on PATH
    if (const char* path_env = std::getenv("PATH")) {
        std::istringstream is(path_env);
        std::string dir;
        while (std::getline(is, dir, ':')) {
            fs::path candidate = fs::path(dir) / "vilocal-transcode";
            if (fs::exists(candidate)) return candidate.string();
        }
    }
    return "";
}

namespace {
std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    out += "'";
    return out;
}
}  // namespace

std::string compress_clip(const std::string& src, const std::string& codec, int quality,
                          const std::string& dst_dir) {
    std::string tool = find_transcoder();
    if (tool.empty())
        throw EnvironmentError("external transcoder not found (set VILOCAL_TRANSCODER or put "
                               "vilocal-transcode on PATH)");
    fs::create_directories(dst_dir);
    std::string tag = compression_tag(codec, quality);
    std::string dst = (fs::path(dst_dir) / (fs::path(src).stem().string() + "_" + tag + ".mkv")).string();

    std::string cmd = shell_quote(tool) + " --in " + shell_quote(src) + " --out " + shell_quote(dst) +
                      " --codec " + codec + " --quality " + std::to_string(quality) + " 2>&1";
    std::string log;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw EnvironmentError("cannot spawn transcoder: " + tool);
    char buf[512];
    while (fgets(buf, sizeof(buf), pipe)) log += buf;
    int status = pclose(pipe);
    if (status != 0)
        throw TranscodeError("transcoder exited with status " + std::to_string(status) + " for " + src +
                             "\n" + log);
    return dst;
}

// --- dataset driver ---

DatasetManifest generate_dataset(const DatasetOptions& opts, const std::string& out_dir) {
    opts.synthetic.validate();
    if (opts.methods.empty()) throw std::invalid_argument("generate_dataset: no inpaint methods");
    fs::create_directories(out_dir);
    if (opts.compress_quarter && find_transcoder().empty())
        throw EnvironmentError("compression augmentation requested but no transcoder available");

    DatasetManifest manifest;
    int n_train = static_cast<int>(std::lround(opts.train_fraction * opts.synthetic.n_clips));
    n_train = std::clamp(n_train, 0, opts.synthetic.n_clips);

    for (int i = 0; i < opts.synthetic.n_clips; ++i) {
        auto [clip, masks] = generate_synthetic_clip(opts.synthetic, i);
        InpaintMethod method = opts.methods[static_cast<std::size_t>(i) % opts.methods.size()];
        VideoClip forged = apply_toy_inpainting(clip, masks, method);

        std::string stem = clip.source_id + "_" + to_string(method);
        std::string clip_path = (fs::path(out_dir) / (stem + ".mkv")).string();
        std::string mask_dir = (fs::path(out_dir) / (stem + "_mask")).string();
        write_clip_ffv1(forged, clip_path);
        write_mask_pngs(masks, mask_dir);

        ManifestEntry e;
        e.mask_path = mask_dir;
        e.split = i < n_train ? "train" : "test";
        e.inpaint_method = to_string(method);
        e.compression_tag = "none";
        // a quarter of the training clips carries H.264 CRF-23 compression,
        // selected deterministically by index
        if (opts.compress_quarter && e.split == "train" && i % 4 == 0) {
            e.clip_path = compress_clip(clip_path, "x264", 23, out_dir);
            e.compression_tag = compression_tag("x264", 23);
            fs::remove(clip_path);
        } else {
            e.clip_path = clip_path;
        }
        manifest.entries.push_back(std::move(e));
    }
    manifest.write((fs::path(out_dir) / "manifest.tsv").string());
    return manifest;
}

std::uint64_t dataset_checksum(const DatasetManifest& manifest) {
    std::uint64_t h = 14695981039346656037ULL;
    auto hash_file = [&h](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("checksum: cannot open " + path);
        char buf[1 << 16];
        while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
            h = fnv1a_bytes(buf, static_cast<std::size_t>(in.gcount()), h);
    };
    for (const auto& e : manifest.entries) {
        hash_file(e.clip_path);
        std::vector<std::string> masks;
        for (const auto& f : fs::directory_iterator(e.mask_path))
            if (f.path().extension() == ".png") masks.push_back(f.path().string());
        std::sort(masks.begin(), masks.end());
        for (const auto& m : masks) hash_file(m);
    }
    return h;
}

}  // namespace vilocal
