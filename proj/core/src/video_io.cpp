#include "vilocal/video_io.hpp"

extern "C" {
#include <libavcodec/avcodec.h>
#include <libavformat/avformat.h>
#include <libavutil/imgutils.h>
#include <libavutil/opt.h>
#include <libswscale/swscale.h>
}

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace fs = std::filesystem;

namespace vilocal {

namespace {

struct LibavInit {
    LibavInit() { av_log_set_level(AV_LOG_ERROR); }
};
const LibavInit libav_init;

std::string av_err(int code) {
    char buf[AV_ERROR_MAX_STRING_SIZE] = {};
    av_strerror(code, buf, sizeof(buf));
    return buf;
}

AVPixelFormat pick_ffv1_rgb_format(const AVCodec* codec) {
    // prefer planar GBR so the RGB round trip is a pure channel shuffle
    const AVPixelFormat prefs[] = {AV_PIX_FMT_GBRP, AV_PIX_FMT_BGR0, AV_PIX_FMT_RGB32,
                                   AV_PIX_FMT_YUV444P, AV_PIX_FMT_NONE};
    if (!codec->pix_fmts) return AV_PIX_FMT_GBRP;
    for (const AVPixelFormat* p = prefs; *p != AV_PIX_FMT_NONE; ++p)
        for (const AVPixelFormat* q = codec->pix_fmts; *q != AV_PIX_FMT_NONE; ++q)
            if (*p == *q) return *p;
    return codec->pix_fmts[0];
}

struct EncodeSpec {
    const char* codec_name;
    AVPixelFormat pix_fmt;
    int crf = -1;       // x264/x265
    int qscale = -1;    // mpeg4
};

void encode_impl(const VideoClip& clip, const std::string& path, const EncodeSpec& spec) {
    if (clip.t < 1 || clip.h < 1 || clip.w < 1) throw std::invalid_argument("encode: empty clip");

    AVFormatContext* oc = nullptr;
    int rc = avformat_alloc_output_context2(&oc, nullptr, nullptr, path.c_str());
    if (rc < 0 || !oc) throw IoError("encode: cannot create output context for " + path + ": " + av_err(rc));

    const AVCodec* codec = avcodec_find_encoder_by_name(spec.codec_name);
    if (!codec) {
        avformat_free_context(oc);
        throw std::runtime_error(std::string("encode: encoder not available: ") + spec.codec_name);
    }
    AVStream* stream = avformat_new_stream(oc, nullptr);
    AVCodecContext* enc = avcodec_alloc_context3(codec);
    if (!stream || !enc) throw std::runtime_error("encode: allocation failure");

    int fps = std::max(1, static_cast<int>(std::lround(clip.fps)));
    enc->width = clip.w;
    enc->height = clip.h;
    enc->time_base = AVRational{1, fps};
    enc->framerate = AVRational{fps, 1};
    enc->pix_fmt = spec.pix_fmt;
    enc->thread_count = 1;  // reproducible outputs
    enc->flags |= AV_CODEC_FLAG_BITEXACT;
    if (oc->oformat->flags & AVFMT_GLOBALHEADER) enc->flags |= AV_CODEC_FLAG_GLOBAL_HEADER;
    if (spec.qscale >= 0) {
        enc->flags |= AV_CODEC_FLAG_QSCALE;
        enc->global_quality = FF_QP2LAMBDA * spec.qscale;
    }

    AVDictionary* opts = nullptr;
    if (spec.crf >= 0) av_dict_set_int(&opts, "crf", spec.crf, 0);
    // cutree disabled: x265's lookahead CU-tree overruns its buffers at very
    // small frame sizes (heap corruption observed under valgrind)
    if (std::string(spec.codec_name) == "libx265")
        av_dict_set(&opts, "x265-params", "log-level=none:cutree=0", 0);

    rc = avcodec_open2(enc, codec, &opts);
    av_dict_free(&opts);
    if (rc < 0) throw std::runtime_error(std::string("encode: cannot open ") + spec.codec_name + ": " + av_err(rc));
    avcodec_parameters_from_context(stream->codecpar, enc);
    stream->time_base = enc->time_base;
    oc->flags |= AVFMT_FLAG_BITEXACT;

    if (!(oc->oformat->flags & AVFMT_NOFILE)) {
        rc = avio_open(&oc->pb, path.c_str(), AVIO_FLAG_WRITE);
        if (rc < 0) throw IoError("encode: cannot open " + path + ": " + av_err(rc));
    }
    rc = avformat_write_header(oc, nullptr);
    if (rc < 0) throw IoError("encode: header write failed for " + path + ": " + av_err(rc));

    SwsContext* sws = sws_getContext(clip.w, clip.h, AV_PIX_FMT_RGB24, clip.w, clip.h, enc->pix_fmt,
                                     SWS_POINT, nullptr, nullptr, nullptr);
    AVFrame* frame = av_frame_alloc();
    frame->format = enc->pix_fmt;
    frame->width = clip.w;
    frame->height = clip.h;
    av_frame_get_buffer(frame, 0);
    AVPacket* pkt = av_packet_alloc();

    auto drain = [&](bool flush) {
        if (flush) avcodec_send_frame(enc, nullptr);
        while (true) {
            int r = avcodec_receive_packet(enc, pkt);
            if (r == AVERROR(EAGAIN) || r == AVERROR_EOF) break;
            if (r < 0) throw std::runtime_error("encode: receive_packet: " + av_err(r));
            av_packet_rescale_ts(pkt, enc->time_base, stream->time_base);
            pkt->stream_index = stream->index;
            av_interleaved_write_frame(oc, pkt);
            av_packet_unref(pkt);
        }
    };

    // sws_scale reads SIMD-width chunks, so the source needs libav's padding
    std::vector<std::uint8_t> padded(clip.frame_bytes() + AV_INPUT_BUFFER_PADDING_SIZE, 0);
    for (int i = 0; i < clip.t; ++i) {
        av_frame_make_writable(frame);
        std::copy_n(clip.frame(i), clip.frame_bytes(), padded.data());
        const std::uint8_t* src[1] = {padded.data()};
        const int src_stride[1] = {clip.w * 3};
        sws_scale(sws, src, src_stride, 0, clip.h, frame->data, frame->linesize);
        frame->pts = i;
        if (spec.qscale >= 0) frame->quality = FF_QP2LAMBDA * spec.qscale;
        rc = avcodec_send_frame(enc, frame);
        if (rc < 0) throw std::runtime_error("encode: send_frame: " + av_err(rc));
        drain(false);
    }
    drain(true);
    av_write_trailer(oc);

    av_packet_free(&pkt);
    av_frame_free(&frame);
    sws_freeContext(sws);
    avcodec_free_context(&enc);
    if (!(oc->oformat->flags & AVFMT_NOFILE)) avio_closep(&oc->pb);
    avformat_free_context(oc);
}

std::vector<fs::path> sorted_pngs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError("no PNG frames in " + dir);
    return files;
}

}  // namespace

void write_clip_ffv1(const VideoClip& clip, const std::string& path) {
    const AVCodec* codec = avcodec_find_encoder_by_name("ffv1");
    if (!codec) throw std::runtime_error("ffv1 encoder not available");
    EncodeSpec spec{"ffv1", pick_ffv1_rgb_format(codec)};
    encode_impl(clip, path, spec);
}

VideoClip read_video(const std::string& path) {
    AVFormatContext* ic = nullptr;
    int rc = avformat_open_input(&ic, path.c_str(), nullptr, nullptr);
    if (rc < 0) throw IoError("cannot open video " + path + ": " + av_err(rc));
    rc = avformat_find_stream_info(ic, nullptr);
    if (rc < 0) {
        avformat_close_input(&ic);
        throw IoError("cannot read stream info for " + path + ": " + av_err(rc));
    }
    int si = av_find_best_stream(ic, AVMEDIA_TYPE_VIDEO, -1, -1, nullptr, 0);
    if (si < 0) {
        avformat_close_input(&ic);
        throw IoError("no video stream in " + path);
    }
    AVStream* stream = ic->streams[si];
    const AVCodec* codec = avcodec_find_decoder(stream->codecpar->codec_id);
    AVCodecContext* dec = avcodec_alloc_context3(codec);
    avcodec_parameters_to_context(dec, stream->codecpar);
    dec->thread_count = 1;
    rc = avcodec_open2(dec, codec, nullptr);
    if (rc < 0) throw IoError("cannot open decoder for " + path + ": " + av_err(rc));

    VideoClip clip;
    clip.w = dec->width;
    clip.h = dec->height;
    clip.source_id = fs::path(path).stem().string();
    AVRational fr = stream->avg_frame_rate;
    clip.fps = (fr.num > 0 && fr.den > 0) ? static_cast<double>(fr.num) / fr.den : 10.0;

    SwsContext* sws = nullptr;
    AVFrame* frame = av_frame_alloc();
    AVPacket* pkt = av_packet_alloc();
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(clip.h) * clip.w * 3);

    auto consume = [&]() {
        while (avcodec_receive_frame(dec, frame) == 0) {
            if (!sws)
                sws = sws_getContext(clip.w, clip.h, static_cast<AVPixelFormat>(frame->format), clip.w,
                                     clip.h, AV_PIX_FMT_RGB24, SWS_POINT, nullptr, nullptr, nullptr);
            std::uint8_t* dst[1] = {buf.data()};
            const int dst_stride[1] = {clip.w * 3};
            sws_scale(sws, frame->data, frame->linesize, 0, clip.h, dst, dst_stride);
            clip.rgb.insert(clip.rgb.end(), buf.begin(), buf.end());
            ++clip.t;
        }
    };

    while (av_read_frame(ic, pkt) >= 0) {
        if (pkt->stream_index == si)
            if (avcodec_send_packet(dec, pkt) == 0) consume();
        av_packet_unref(pkt);
    }
    avcodec_send_packet(dec, nullptr);
    consume();

    av_packet_free(&pkt);
    av_frame_free(&frame);
    if (sws) sws_freeContext(sws);
    avcodec_free_context(&dec);
    avformat_close_input(&ic);

    if (clip.t == 0) throw IoError("no decodable frames in " + path);
    return clip;
}

void transcode_video(const std::string& src, const std::string& dst, const std::string& codec,
                     int quality) {
    VideoClip clip = read_video(src);
    if (codec == "x264") {
        EncodeSpec spec{"libx264", AV_PIX_FMT_YUV420P};
        spec.crf = quality;
        encode_impl(clip, dst, spec);
    } else if (codec == "x265") {
        EncodeSpec spec{"libx265", AV_PIX_FMT_YUV420P};
        spec.crf = quality;
        encode_impl(clip, dst, spec);
    } else if (codec == "ffv1") {
        write_clip_ffv1(clip, dst);  // lossless; quality ignored
    } else if (codec == "mpeg4") {
        EncodeSpec spec{"mpeg4", AV_PIX_FMT_YUV420P};
        spec.qscale = std::clamp((quality + 1) / 2, 2, 31);  // round(q/2) into [2,31]
        encode_impl(clip, dst, spec);
    } else {
        throw std::invalid_argument("transcode: unknown codec " + codec);
    }
}

void write_mask_pngs(const MaskSequence& masks, const std::string& dir) {
    fs::create_directories(dir);
    for (int t = 0; t < masks.t; ++t) {
        cv::Mat m(masks.h, masks.w, CV_8UC1);
        for (int i = 0; i < masks.h; ++i)
            for (int j = 0; j < masks.w; ++j)
                m.at<std::uint8_t>(i, j) = masks.at(t, i, j) ? 255 : 0;
        char name[32];
        std::snprintf(name, sizeof(name), "%06d.png", t);
        if (!cv::imwrite((fs::path(dir) / name).string(), m))
            throw IoError("cannot write mask PNG in " + dir);
    }
}

MaskSequence read_mask_pngs(const std::string& dir) {
    auto files = sorted_pngs(dir);
    MaskSequence out;
    out.t = static_cast<int>(files.size());
    for (int t = 0; t < out.t; ++t) {
        cv::Mat m = cv::imread(files[static_cast<std::size_t>(t)].string(), cv::IMREAD_GRAYSCALE);
        if (m.empty()) throw IoError("cannot read mask " + files[static_cast<std::size_t>(t)].string());
        if (t == 0) {
            out.h = m.rows;
            out.w = m.cols;
            out.labels.reserve(static_cast<std::size_t>(out.t) * out.h * out.w);
        } else if (m.rows != out.h || m.cols != out.w) {
            throw IoError("mask frame size mismatch in " + dir);
        }
        for (int i = 0; i < out.h; ++i)
            for (int j = 0; j < out.w; ++j) out.labels.push_back(m.at<std::uint8_t>(i, j) > 127 ? 1 : 0);
    }
    return out;
}

void write_frame_pngs(const VideoClip& clip, const std::string& dir) {
    fs::create_directories(dir);
    for (int t = 0; t < clip.t; ++t) {
        cv::Mat rgb(clip.h, clip.w, CV_8UC3, const_cast<std::uint8_t*>(clip.frame(t)));
        cv::Mat bgr;
        cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
        char name[32];
        std::snprintf(name, sizeof(name), "%06d.png", t);
        if (!cv::imwrite((fs::path(dir) / name).string(), bgr))
            throw IoError("cannot write frame PNG in " + dir);
    }
}

namespace {
VideoClip read_frame_pngs(const std::string& dir) {
    auto files = sorted_pngs(dir);
    VideoClip clip;
    clip.t = static_cast<int>(files.size());
    clip.source_id = fs::path(dir).filename().string();
    for (int t = 0; t < clip.t; ++t) {
        cv::Mat bgr = cv::imread(files[static_cast<std::size_t>(t)].string(), cv::IMREAD_COLOR);
        if (bgr.empty()) throw IoError("cannot read frame " + files[static_cast<std::size_t>(t)].string());
        cv::Mat rgb;
        cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
        if (t == 0) {
            clip.h = rgb.rows;
            clip.w = rgb.cols;
        } else if (rgb.rows != clip.h || rgb.cols != clip.w) {
            throw IoError("frame size mismatch in " + dir);
        }
        clip.rgb.insert(clip.rgb.end(), rgb.data, rgb.data + clip.frame_bytes());
    }
    return clip;
}
}  // namespace

std::pair<VideoClip, MaskSequence> load_clip(const std::string& clip_path, const std::string& mask_path,
                                             std::optional<std::pair<int, int>> target_resolution) {
    VideoClip clip = fs::is_directory(clip_path) ? read_frame_pngs(clip_path) : read_video(clip_path);
    MaskSequence masks = read_mask_pngs(mask_path);
    if (masks.t != clip.t)
        throw IoError("mask frame count " + std::to_string(masks.t) + " does not match clip " +
                      std::to_string(clip.t) + " for " + clip_path);

    if (target_resolution) {
        auto [th, tw] = *target_resolution;
        if (th % 4 != 0 || tw % 4 != 0)
            throw std::invalid_argument("load_clip: target resolution must be divisible by 4");
        if (th != clip.h || tw != clip.w) {
            VideoClip resized;
            resized.t = clip.t;
            resized.h = th;
            resized.w = tw;
            resized.fps = clip.fps;
            resized.source_id = clip.source_id;
            resized.rgb.resize(static_cast<std::size_t>(clip.t) * th * tw * 3);
            MaskSequence rmask;
            rmask.t = clip.t;
            rmask.h = th;
            rmask.w = tw;
            rmask.labels.resize(static_cast<std::size_t>(clip.t) * th * tw);
            for (int t = 0; t < clip.t; ++t) {
                cv::Mat src(clip.h, clip.w, CV_8UC3, clip.frame(t));
                cv::Mat dst(th, tw, CV_8UC3, resized.frame(t));
                cv::resize(src, dst, dst.size(), 0, 0, cv::INTER_LINEAR);
                cv::Mat msrc(masks.h, masks.w, CV_8UC1,
                             const_cast<std::uint8_t*>(masks.frame(t)));
                cv::Mat mdst(th, tw, CV_8UC1,
                             rmask.labels.data() + static_cast<std::size_t>(t) * th * tw);
                cv::resize(msrc, mdst, mdst.size(), 0, 0, cv::INTER_NEAREST);
            }
            for (auto& v : rmask.labels) v = v ? 1 : 0;  // re-binarize
            clip = std::move(resized);
            masks = std::move(rmask);
        }
    }
    if (clip.h % 4 != 0 || clip.w % 4 != 0)
        throw std::invalid_argument("load_clip: clip resolution " + std::to_string(clip.h) + "x" +
                                    std::to_string(clip.w) + " not divisible by 4");
    return {std::move(clip), std::move(masks)};
}

void write_gray_png(const std::string& path, int h, int w, const std::vector<std::uint8_t>& gray) {
    cv::Mat m(h, w, CV_8UC1, const_cast<std::uint8_t*>(gray.data()));
    if (!cv::imwrite(path, m)) throw IoError("cannot write " + path);
}

}  // namespace vilocal
