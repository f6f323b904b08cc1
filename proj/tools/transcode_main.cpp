// Command-line video transcoder over the in-process libav path. Used by the
// dataset pipeline and robustness harness as a subprocess.

#include "vilocal/video_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"vilocal-transcode: re-encode a video with a chosen codec"};
    std::string in, out, codec = "x264";
    int quality = 23;
    app.add_option("--in", in, "input video file")->required()->check(CLI::ExistingFile);
    app.add_option("--out", out, "output video file")->required();
    app.add_option("--codec", codec, "x264 | x265 | ffv1 | mpeg4");
    app.add_option("--quality", quality, "CRF for x264/x265, mapped to quantizer for mpeg4, ignored for ffv1");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        vilocal::transcode_video(in, out, codec, quality);

        nlohmann::json meta;
        meta["source"] = in;
        meta["codec"] = codec;
        meta["quality"] = quality;
        if (codec == "x264" || codec == "x265") meta["control"] = "crf";
        else if (codec == "mpeg4") meta["control"] = "qscale";
        else meta["control"] = "none";
        std::ofstream side(out + ".meta.json", std::ios::trunc);
        side << meta.dump(2) << '\n';
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
