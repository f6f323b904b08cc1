#include "doctest.h"
#include "testutil.hpp"
#include "vilocal/clipset.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace vilocal;

namespace {

SyntheticConfig small_cfg() {
    SyntheticConfig cfg;
    cfg.n_clips = 2;
    cfg.frames_per_clip = 6;
    cfg.height = 32;
    cfg.width = 48;
    cfg.seed = 7;
    return cfg;
}

}  // namespace

TEST_CASE("synthetic generation is deterministic") {
    SyntheticConfig cfg = small_cfg();
    auto [c1, m1] = generate_synthetic_clip(cfg, 0);
    auto [c2, m2] = generate_synthetic_clip(cfg, 0);
    CHECK(c1.rgb == c2.rgb);
    CHECK(m1.labels == m2.labels);
    auto [c3, m3] = generate_synthetic_clip(cfg, 1);
    CHECK(c1.rgb != c3.rgb);  // different index, different clip
    (void)m3;
}

TEST_CASE("synthetic shapes and mask alphabet") {
    SyntheticConfig cfg = small_cfg();
    cfg.frames_per_clip = 16;
    auto [clip, masks] = generate_synthetic_clip(cfg, 0);
    CHECK(clip.t == 16);
    CHECK(clip.h == 32);
    CHECK(clip.w == 48);
    CHECK(clip.rgb.size() == std::size_t(16) * 32 * 48 * 3);
    CHECK(masks.labels.size() == std::size_t(16) * 32 * 48);
    bool any_one = false;
    for (auto v : masks.labels) {
        CHECK((v == 0 || v == 1));
        any_one |= (v == 1);
    }
    CHECK(any_one);
}

TEST_CASE("zero objects means empty masks") {
    SyntheticConfig cfg = small_cfg();
    cfg.objects_per_clip = 0;
    auto [clip, masks] = generate_synthetic_clip(cfg, 0);
    (void)clip;
    for (auto v : masks.labels) CHECK(v == 0);
}

TEST_CASE("config validation") {
    SyntheticConfig cfg = small_cfg();
    cfg.height = 30;  // not divisible by 4
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = small_cfg();
    cfg.frames_per_clip = 4;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("toy inpainting leaves unmasked pixels untouched") {
    SyntheticConfig cfg = small_cfg();
    auto [clip, masks] = generate_synthetic_clip(cfg, 0);
    for (auto method : {InpaintMethod::kDiffuse, InpaintMethod::kTemporalCopy, InpaintMethod::kPatchCopy}) {
        VideoClip painted = apply_toy_inpainting(clip, masks, method);
        for (int t = 0; t < clip.t; ++t)
            for (int i = 0; i < clip.h; ++i)
                for (int j = 0; j < clip.w; ++j)
                    if (!masks.at(t, i, j))
                        for (int c = 0; c < 3; ++c) {
                            REQUIRE(painted.at(t, i, j, c) == clip.at(t, i, j, c));
                        }
    }
}

TEST_CASE("all-zero mask is a no-op") {
    SyntheticConfig cfg = small_cfg();
    auto [clip, masks] = generate_synthetic_clip(cfg, 0);
    masks.labels.assign(masks.labels.size(), 0);
    for (auto method : {InpaintMethod::kDiffuse, InpaintMethod::kTemporalCopy, InpaintMethod::kPatchCopy})
        CHECK(apply_toy_inpainting(clip, masks, method).rgb == clip.rgb);
}

TEST_CASE("single-pixel diffuse equals the neighbor mean") {
    VideoClip clip;
    clip.t = 5;
    clip.h = 8;
    clip.w = 8;
    clip.rgb.assign(std::size_t(5) * 8 * 8 * 3, 100);
    clip.at(2, 3, 4, 0) = 10;  // up
    clip.at(2, 5, 4, 0) = 30;  // down
    clip.at(2, 4, 3, 0) = 50;  // left
    clip.at(2, 4, 5, 0) = 70;  // right
    clip.at(2, 4, 4, 0) = 255;
    MaskSequence masks;
    masks.t = 5;
    masks.h = 8;
    masks.w = 8;
    masks.labels.assign(std::size_t(5) * 8 * 8, 0);
    masks.at(2, 4, 4) = 1;

    VideoClip painted = apply_toy_inpainting(clip, masks, InpaintMethod::kDiffuse);
    CHECK(int(painted.at(2, 4, 4, 0)) == (10 + 30 + 50 + 70) / 4);
    CHECK(int(painted.at(2, 4, 4, 1)) == 100);
}

TEST_CASE("temporal copy pulls from the nearest clean frame") {
    SyntheticConfig cfg = small_cfg();
    auto [clip, masks] = generate_synthetic_clip(cfg, 0);
    // restrict the mask to frame 3 only
    MaskSequence only3 = masks;
    only3.labels.assign(masks.labels.size(), 0);
    for (int i = 0; i < clip.h; ++i)
        for (int j = 0; j < clip.w; ++j) only3.at(3, i, j) = masks.at(3, i, j);

    VideoClip painted = apply_toy_inpainting(clip, only3, InpaintMethod::kTemporalCopy);
    for (int i = 0; i < clip.h; ++i)
        for (int j = 0; j < clip.w; ++j)
            if (only3.at(3, i, j))
                for (int c = 0; c < 3; ++c) REQUIRE(painted.at(3, i, j, c) == clip.at(2, i, j, c));
}

TEST_CASE("window assembly") {
    SyntheticConfig cfg = small_cfg();
    cfg.frames_per_clip = 9;
    auto [clip, masks] = generate_synthetic_clip(cfg, 0);

    SUBCASE("T=9 stride=2 gives starts 0,2,4") {
        auto units = assemble_units(clip, masks, 2);
        REQUIRE(units.size() == 3);
        CHECK(units[0].provenance.start_frame == 0);
        CHECK(units[1].provenance.start_frame == 2);
        CHECK(units[2].provenance.start_frame == 4);
    }
    SUBCASE("middle mask is frame start+2") {
        auto units = assemble_units(clip, masks, 1);
        REQUIRE(units.size() == 5);
        for (const auto& u : units) {
            int mid = u.provenance.start_frame + 2;
            for (int i = 0; i < clip.h; ++i)
                for (int j = 0; j < clip.w; ++j)
                    REQUIRE(u.middle_mask[std::size_t(i) * clip.w + j] == masks.at(mid, i, j));
        }
    }
    SUBCASE("count formula") {
        for (int t : {5, 6, 7, 11}) {
            cfg.frames_per_clip = t;
            auto [c, m] = generate_synthetic_clip(cfg, 0);
            for (int stride : {1, 2, 3}) {
                auto units = assemble_units(c, m, stride);
                CHECK(int(units.size()) == (t - 5) / stride + 1);
            }
        }
    }
    SUBCASE("too short yields no units") {
        VideoClip shorty;
        shorty.t = 4;
        shorty.h = 8;
        shorty.w = 8;
        shorty.rgb.assign(std::size_t(4) * 8 * 8 * 3, 0);
        MaskSequence sm;
        sm.t = 4;
        sm.h = 8;
        sm.w = 8;
        sm.labels.assign(std::size_t(4) * 8 * 8, 0);
        CHECK(assemble_units(shorty, sm, 1).empty());
    }
}

TEST_CASE("manifest round trip and validation") {
    testutil::TempDir dir("manifest");
    DatasetManifest m;
    m.entries.push_back({dir.file("a.mkv"), dir.file("a_mask"), "train", "diffuse", "none"});
    m.entries.push_back({dir.file("b.mkv"), dir.file("b_mask"), "test", "patch_copy", "x264-crf23"});
    m.write(dir.file("manifest.tsv"));
    DatasetManifest back = DatasetManifest::read(dir.file("manifest.tsv"));
    REQUIRE(back.entries.size() == 2);
    CHECK(back.entries[0].split == "train");
    CHECK(back.entries[1].compression_tag == "x264-crf23");
    CHECK(back.split("train").size() == 1);

    CHECK_NOTHROW(back.validate_disjoint_splits());
    CHECK_THROWS(back.validate_paths());  // nothing written at those paths

    DatasetManifest leaky = back;
    leaky.entries.push_back({dir.file("a2.mkv"), dir.file("a2_mask"), "test", "diffuse", "none"});
    leaky.entries.back().clip_path = back.entries[0].clip_path;  // same source in two splits
    CHECK_THROWS(leaky.validate_disjoint_splits());
}

TEST_CASE("compression tags") {
    CHECK(compression_tag("x264", 23) == "x264-crf23");
    CHECK(compression_tag("x265", 18) == "x265-crf18");
    CHECK(compression_tag("ffv1", 23) == "ffv1");
    CHECK(compression_tag("mpeg4", 24) == "mpeg4-q12");
}

TEST_CASE("dataset generation writes a coherent, reproducible corpus") {
    testutil::TempDir d1("gen1"), d2("gen2");
    DatasetOptions opts;
    opts.synthetic = small_cfg();
    opts.synthetic.frames_per_clip = 5;
    opts.synthetic.n_clips = 4;

    DatasetManifest m1 = generate_dataset(opts, d1.str());
    DatasetManifest m2 = generate_dataset(opts, d2.str());
    CHECK_NOTHROW(m1.validate_paths());
    CHECK_NOTHROW(m1.validate_disjoint_splits());
    CHECK(dataset_checksum(m1) == dataset_checksum(m2));

    bool has_compressed = false, has_test = false;
    for (const auto& e : m1.entries) {
        has_compressed |= (e.compression_tag != "none");
        has_test |= (e.split == "test");
    }
    CHECK(has_compressed);  // the deterministic quarter
    CHECK(has_test);
}

TEST_CASE("compress_clip quality ladder and error paths") {
    const char* transcoder = std::getenv("VILOCAL_TRANSCODER");
    REQUIRE_MESSAGE(transcoder != nullptr, "VILOCAL_TRANSCODER must point at the transcoder binary");

    testutil::TempDir dir("compress");
    SyntheticConfig cfg = small_cfg();
    cfg.frames_per_clip = 8;
    auto [clip, masks] = generate_synthetic_clip(cfg, 0);
    (void)masks;
    clip.source_id = "ladder";
    std::string src = dir.file("ladder.mkv");
    write_clip_ffv1(clip, src);

    SUBCASE("x264 size strictly decreases with CRF") {
        std::uintmax_t prev = 0;
        for (int q : {13, 18, 23, 28}) {
            std::string out = compress_clip(src, "x264", q, dir.file("q" + std::to_string(q)));
            std::uintmax_t size = std::filesystem::file_size(out);
            if (prev != 0) CHECK(size < prev);
            prev = size;
            VideoClip dec = read_video(out);
            CHECK(dec.t == clip.t);
        }
    }
    SUBCASE("ffv1 round trip is bit-identical") {
        std::string out = compress_clip(src, "ffv1", 23, dir.file("ffv1"));
        VideoClip dec = read_video(out);
        CHECK(dec.rgb == clip.rgb);
    }
    SUBCASE("missing transcoder raises an environment error") {
        std::string saved_transcoder = transcoder;
        std::string saved_path = std::getenv("PATH") ? std::getenv("PATH") : "";
        ::unsetenv("VILOCAL_TRANSCODER");
        ::setenv("PATH", "/nonexistent", 1);
        CHECK(find_transcoder().empty());
        CHECK_THROWS_AS(compress_clip(src, "x264", 23, dir.file("nope")), EnvironmentError);
        ::setenv("VILOCAL_TRANSCODER", saved_transcoder.c_str(), 1);
        ::setenv("PATH", saved_path.c_str(), 1);
    }
}
