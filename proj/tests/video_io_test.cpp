#include "doctest.h"
#include "testutil.hpp"
#include "vilocal/clipset.hpp"
#include "vilocal/video_io.hpp"

using namespace vilocal;

namespace {

std::pair<VideoClip, MaskSequence> sample_clip(int t = 6, int h = 32, int w = 48) {
    SyntheticConfig cfg;
    cfg.n_clips = 1;
    cfg.frames_per_clip = t;
    cfg.height = h;
    cfg.width = w;
    cfg.seed = 99;
    return generate_synthetic_clip(cfg, 0);
}

}  // namespace

TEST_CASE("ffv1 storage is lossless") {
    testutil::TempDir dir("ffv1");
    auto [clip, masks] = sample_clip();
    (void)masks;
    clip.source_id = "rt";
    write_clip_ffv1(clip, dir.file("rt.mkv"));
    VideoClip back = read_video(dir.file("rt.mkv"));
    CHECK(back.t == clip.t);
    CHECK(back.h == clip.h);
    CHECK(back.w == clip.w);
    CHECK(back.rgb == clip.rgb);
}

TEST_CASE("mask png round trip") {
    testutil::TempDir dir("maskpng");
    auto [clip, masks] = sample_clip();
    (void)clip;
    write_mask_pngs(masks, dir.file("m"));
    MaskSequence back = read_mask_pngs(dir.file("m"));
    CHECK(back.t == masks.t);
    CHECK(back.labels == masks.labels);
}

TEST_CASE("frame png directory loads like a video") {
    testutil::TempDir dir("framepng");
    auto [clip, masks] = sample_clip();
    write_frame_pngs(clip, dir.file("f"));
    write_mask_pngs(masks, dir.file("f_mask"));
    auto [back, mback] = load_clip(dir.file("f"), dir.file("f_mask"));
    CHECK(back.rgb == clip.rgb);
    CHECK(mback.labels == masks.labels);
}

TEST_CASE("load_clip resizes frames and keeps masks binary") {
    testutil::TempDir dir("resize");
    auto [clip, masks] = sample_clip(6, 64, 96);
    write_clip_ffv1(clip, dir.file("c.mkv"));
    write_mask_pngs(masks, dir.file("c_mask"));

    auto [rc, rm] = load_clip(dir.file("c.mkv"), dir.file("c_mask"), {{32, 48}});
    CHECK(rc.h == 32);
    CHECK(rc.w == 48);
    CHECK(rc.t == 6);
    CHECK(rm.h == 32);
    CHECK(rm.w == 48);
    for (auto v : rm.labels) CHECK((v == 0 || v == 1));
}

TEST_CASE("io errors carry the path") {
    testutil::TempDir dir("ioerr");
    try {
        read_video(dir.file("missing.mkv"));
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("missing.mkv") != std::string::npos);
    }
}

TEST_CASE("transcode_video produces decodable output for every codec") {
    testutil::TempDir dir("codec");
    auto [clip, masks] = sample_clip(8);
    (void)masks;
    clip.source_id = "codecs";
    write_clip_ffv1(clip, dir.file("src.mkv"));
    for (std::string codec : {"x264", "x265", "ffv1", "mpeg4"}) {
        std::string out = dir.file(codec + ".mkv");
        transcode_video(dir.file("src.mkv"), out, codec, 23);
        VideoClip dec = read_video(out);
        CHECK(dec.t == clip.t);
        CHECK(dec.h == clip.h);
        CHECK(dec.w == clip.w);
    }
}
