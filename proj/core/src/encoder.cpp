#include "vilocal/encoder.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace vilocal {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Value-only multi-head attention over a packed [n, 3c] qkv matrix, processed
// in row chunks so the n x n score matrix is never materialized in full. Used
// on the inference path where full-resolution inputs make the materialized
// form both slow and memory-hungry.
Tensor fused_attention_value(const Tensor& qkv, int c, int heads) {
    const int n = qkv.dim(0);
    const int d = c / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    Tensor out = Tensor::uninitialized({n, c});
    RMat Q(n, d), Kt(d, n), V(n, d);
    const int chunk = std::min(n, 1024);
    RMat S(chunk, n);
    for (int hd = 0; hd < heads; ++hd) {
        for (int i = 0; i < n; ++i) {
            const double* row = qkv.data() + static_cast<std::int64_t>(i) * 3 * c + hd * d;
            for (int j = 0; j < d; ++j) {
                Q(i, j) = row[j] * inv_sqrt_d;
                Kt(j, i) = row[c + j];
                V(i, j) = row[2 * c + j];
            }
        }
        Eigen::Map<RMat, 0, Eigen::OuterStride<>> O(out.data() + hd * d, n, d,
                                                    Eigen::OuterStride<>(c));
        for (int r0 = 0; r0 < n; r0 += chunk) {
            int rows = std::min(chunk, n - r0);
            S.topRows(rows).noalias() = Q.middleRows(r0, rows) * Kt;
            for (int i = 0; i < rows; ++i) {
                auto row = S.row(i);
                double mx = row.maxCoeff();
                row = (row.array() - mx).exp();
                row /= row.sum();
            }
            O.middleRows(r0, rows).noalias() = S.topRows(rows) * V;
        }
    }
    return out;
}

// k3 s2 temporal reduction; the last downsampling stage drops the temporal
// padding (valid convolution) so the schedule lands on extent 1: 5 -> 3 -> 1.
int temporal_after_ds(int t, bool last) {
    if (last && t >= 3) return (t - 3) / 2 + 1;
    return (t - 1) / 2 + 1;
}

std::string blk(int stage, int block, const char* leaf) {
    return "s" + std::to_string(stage) + "/b" + std::to_string(block) + "/" + leaf;
}

}  // namespace

void EncoderConfig::validate() const {
    if (stage_channels.empty() || stage_channels.size() != stage_depths.size() ||
        stage_channels.size() != stage_downsample.size())
        throw std::invalid_argument("encoder config: stage schedule lists must be non-empty and equal length");
    int total_ds = 1;
    for (int f : stage_downsample) {
        if (f != 1 && f != 2) throw std::invalid_argument("encoder config: stage downsample factors must be 1 or 2");
        total_ds *= f;
    }
    if (stage_downsample[0] != 1)
        throw std::invalid_argument("encoder config: first stage cannot downsample (stem is stride 1)");
    if (total_ds != 4)
        throw std::invalid_argument("encoder config: total spatial downsample must be 4, got " +
                                    std::to_string(total_ds));
    if (stage_channels.back() != embed_dim)
        throw std::invalid_argument("encoder config: final stage channels must equal embed_dim");
    if (n_global_stages < 1 || n_global_stages > static_cast<int>(stage_channels.size()))
        throw std::invalid_argument("encoder config: bad global stage count");
    int global_c = stage_channels[stage_channels.size() - static_cast<std::size_t>(n_global_stages)];
    if (heads < 1 || global_c % heads != 0)
        throw std::invalid_argument("encoder config: heads must divide the global-stage channel count");
    if (in_t < 1 || in_h % 4 != 0 || in_w % 4 != 0)
        throw std::invalid_argument("encoder config: input H and W must be divisible by 4");
    if (mlp_ratio < 1) throw std::invalid_argument("encoder config: mlp_ratio must be >= 1");
    for (int d : stage_depths)
        if (d < 1) throw std::invalid_argument("encoder config: stage depths must be >= 1");
}

std::vector<int> EncoderConfig::stage_t() const {
    std::size_t last_ds = 0;
    for (std::size_t i = 0; i < stage_downsample.size(); ++i)
        if (stage_downsample[i] == 2) last_ds = i;
    std::vector<int> ts;
    int t = in_t;
    for (std::size_t i = 0; i < stage_downsample.size(); ++i) {
        if (i > 0 && stage_downsample[i] == 2) t = temporal_after_ds(t, i == last_ds);
        ts.push_back(t);
    }
    return ts;
}

std::vector<int> EncoderConfig::stage_h() const {
    std::vector<int> hs;
    int h = in_h;
    for (std::size_t i = 0; i < stage_downsample.size(); ++i) {
        if (i > 0 && stage_downsample[i] == 2) h /= 2;
        hs.push_back(h);
    }
    return hs;
}

std::vector<int> EncoderConfig::stage_w() const {
    std::vector<int> ws;
    int w = in_w;
    for (std::size_t i = 0; i < stage_downsample.size(); ++i) {
        if (i > 0 && stage_downsample[i] == 2) w /= 2;
        ws.push_back(w);
    }
    return ws;
}

Encoder::Encoder(EncoderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    const auto& ch = cfg_.stage_channels;
    const int n_stages = static_cast<int>(ch.size());
    const int first_global = n_stages - cfg_.n_global_stages;
    auto ts = cfg_.stage_t();
    auto hs = cfg_.stage_h();
    auto ws = cfg_.stage_w();

    params_.add("stem/w", he_normal({27 * cfg_.in_c, ch[0]}, 27 * cfg_.in_c, rng));
    params_.add("stem/b", Tensor({ch[0]}, 0.0));

    for (int s = 0; s < n_stages; ++s) {
        int c = ch[static_cast<std::size_t>(s)];
        if (s > 0) {
            int cprev = ch[static_cast<std::size_t>(s - 1)];
            std::string dsn = "ds" + std::to_string(s);
            if (cfg_.stage_downsample[static_cast<std::size_t>(s)] == 2) {
                params_.add(dsn + "/w", he_normal({27 * cprev, c}, 27 * cprev, rng));
            } else {
                params_.add(dsn + "/w", he_normal({cprev, c}, cprev, rng));
            }
            params_.add(dsn + "/b", Tensor({c}, 0.0));
        }
        bool global = s >= first_global;
        for (int b = 0; b < cfg_.stage_depths[static_cast<std::size_t>(s)]; ++b) {
            params_.add(blk(s, b, "ln1/g"), Tensor({c}, 1.0));
            params_.add(blk(s, b, "ln1/b"), Tensor({c}, 0.0));
            if (global) {
                params_.add(blk(s, b, "qkv/w"), scaled_normal({c, 3 * c}, std::sqrt(1.0 / c), rng));
                params_.add(blk(s, b, "qkv/b"), Tensor({3 * c}, 0.0));
                params_.add(blk(s, b, "proj/w"), scaled_normal({c, c}, std::sqrt(1.0 / c), rng));
                params_.add(blk(s, b, "proj/b"), Tensor({c}, 0.0));
            } else {
                params_.add(blk(s, b, "dw/w"), scaled_normal({27, c}, std::sqrt(1.0 / 27.0), rng));
                params_.add(blk(s, b, "dw/b"), Tensor({c}, 0.0));
                params_.add(blk(s, b, "pw/w"), he_normal({c, c}, c, rng));
                params_.add(blk(s, b, "pw/b"), Tensor({c}, 0.0));
            }
            int hidden = cfg_.mlp_ratio * c;
            params_.add(blk(s, b, "ln2/g"), Tensor({c}, 1.0));
            params_.add(blk(s, b, "ln2/b"), Tensor({c}, 0.0));
            params_.add(blk(s, b, "mlp/w1"), he_normal({c, hidden}, c, rng));
            params_.add(blk(s, b, "mlp/b1"), Tensor({hidden}, 0.0));
            params_.add(blk(s, b, "mlp/w2"), he_normal({hidden, c}, hidden, rng));
            params_.add(blk(s, b, "mlp/b2"), Tensor({c}, 0.0));
        }
    }
    // learned 3-D position embedding at the first global stage's resolution
    {
        int g = first_global;
        int n_tokens = ts[static_cast<std::size_t>(g)] * hs[static_cast<std::size_t>(g)] *
                       ws[static_cast<std::size_t>(g)];
        params_.add("pos", scaled_normal({n_tokens, ch[static_cast<std::size_t>(g)]}, 0.02, rng));
    }
    params_.add("final_ln/g", Tensor({cfg_.embed_dim}, 1.0));
    params_.add("final_ln/b", Tensor({cfg_.embed_dim}, 0.0));

    if (params_.param_count() > cfg_.param_budget)
        throw std::invalid_argument("encoder config: parameter count " + std::to_string(params_.param_count()) +
                                    " exceeds budget " + std::to_string(cfg_.param_budget));
}

Var Encoder::encode(const Tensor& noise) {
    const Shape& s = noise.shape();
    if (s.size() != 4 || s[0] != cfg_.in_t || s[1] != cfg_.in_h || s[2] != cfg_.in_w || s[3] != cfg_.in_c)
        throw std::invalid_argument("encode: input shape " + shape_str(s) + " does not match config");
    if (!noise.all_finite()) throw std::invalid_argument("encode: non-finite input");

    const auto& ch = cfg_.stage_channels;
    const int n_stages = static_cast<int>(ch.size());
    const int first_global = n_stages - cfg_.n_global_stages;
    auto ts = cfg_.stage_t();
    auto hs = cfg_.stage_h();
    auto ws = cfg_.stage_w();

    int t = cfg_.in_t, h = cfg_.in_h, w = cfg_.in_w;
    Var x = constant(noise, "input");
    {
        Conv3dSpec sp;  // 3x3x3 stride 1 same padding
        x = conv3d(x, params_.get("stem/w"), params_.get("stem/b"), sp);
        x = reshape(x, {t * h * w, ch[0]});
    }

    int last_ds = 0;
    for (int st = 0; st < n_stages; ++st)
        if (cfg_.stage_downsample[static_cast<std::size_t>(st)] == 2) last_ds = st;

    for (int st = 0; st < n_stages; ++st) {
        int c = ch[static_cast<std::size_t>(st)];
        if (st > 0) {
            int cprev = ch[static_cast<std::size_t>(st - 1)];
            std::string dsn = "ds" + std::to_string(st);
            if (cfg_.stage_downsample[static_cast<std::size_t>(st)] == 2) {
                x = reshape(x, {t, h, w, cprev});
                Conv3dSpec sp;
                sp.st = sp.sh = sp.sw = 2;
                if (st == last_ds && t >= 3) sp.pt = 0;  // complete the reduction toward extent 1
                x = conv3d(x, params_.get(dsn + "/w"), params_.get(dsn + "/b"), sp);
                t = ts[static_cast<std::size_t>(st)];
                h = hs[static_cast<std::size_t>(st)];
                w = ws[static_cast<std::size_t>(st)];
                x = reshape(x, {t * h * w, c});
            } else {
                x = linear(x, params_.get(dsn + "/w"), params_.get(dsn + "/b"));
            }
        }
        bool global = st >= first_global;
        if (global && st == first_global) x = add(x, params_.get("pos"));
        for (int b = 0; b < cfg_.stage_depths[static_cast<std::size_t>(st)]; ++b) {
            Var hpre = layer_norm(x, params_.get(blk(st, b, "ln1/g")), params_.get(blk(st, b, "ln1/b")));
            Var mixed;
            if (global) {
                int d = c / cfg_.heads;
                Var qkv = linear(hpre, params_.get(blk(st, b, "qkv/w")), params_.get(blk(st, b, "qkv/b")));
                Var o;
                if (inference_mode_active()) {
                    o = constant(fused_attention_value(qkv->value, c, cfg_.heads));
                } else {
                    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
                    std::vector<Var> heads_out;
                    for (int hd = 0; hd < cfg_.heads; ++hd) {
                        Var q = scale(slice_cols(qkv, hd * d, (hd + 1) * d), inv_sqrt_d);
                        Var k = slice_cols(qkv, c + hd * d, c + (hd + 1) * d);
                        Var v = slice_cols(qkv, 2 * c + hd * d, 2 * c + (hd + 1) * d);
                        Var att = softmax_lastdim(matmul(q, k, false, true));
                        heads_out.push_back(matmul(att, v));
                    }
                    o = concat_cols(heads_out);
                }
                mixed = linear(o, params_.get(blk(st, b, "proj/w")), params_.get(blk(st, b, "proj/b")));
            } else {
                Var h4 = reshape(hpre, {t, h, w, c});
                h4 = depthwise_conv3d(h4, params_.get(blk(st, b, "dw/w")), params_.get(blk(st, b, "dw/b")));
                mixed = linear(reshape(h4, {t * h * w, c}), params_.get(blk(st, b, "pw/w")),
                               params_.get(blk(st, b, "pw/b")));
            }
            x = add(x, mixed);
            Var m = layer_norm(x, params_.get(blk(st, b, "ln2/g")), params_.get(blk(st, b, "ln2/b")));
            m = linear(m, params_.get(blk(st, b, "mlp/w1")), params_.get(blk(st, b, "mlp/b1")));
            m = gelu(m);
            m = linear(m, params_.get(blk(st, b, "mlp/w2")), params_.get(blk(st, b, "mlp/b2")));
            x = add(x, m);
        }
    }

    x = layer_norm(x, params_.get("final_ln/g"), params_.get("final_ln/b"));
    // collapse the remaining temporal extent, middle-frame aligned by symmetry
    Var pooled = mean_axis0(x, t);
    return reshape(pooled, {h * w, cfg_.embed_dim});
}

Tensor Encoder::encode_value(const Tensor& noise) {
    InferenceModeGuard guard;
    return encode(noise)->value;
}

}  // namespace vilocal
