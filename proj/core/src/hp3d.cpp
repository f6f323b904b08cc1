#include "vilocal/hp3d.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace vilocal {

Hp3dKernel Hp3dKernel::laplacian() {
    Hp3dKernel k;
    for (int i = 0; i < 27; ++i) k.coeff[i] = -1.0 / 26.0;
    k.coeff[13] = 1.0;  // center tap
    return k;
}

Hp3dKernel Hp3dKernel::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("hp3d kernel: cannot open " + path);
    Hp3dKernel k;
    for (int i = 0; i < 27; ++i)
        if (!(in >> k.coeff[i])) throw std::runtime_error("hp3d kernel: expected 27 values in " + path);
    k.validate();
    return k;
}

double Hp3dKernel::sum() const {
    double s = 0.0;
    for (double c : coeff) s += c;
    return s;
}

void Hp3dKernel::validate() const {
    if (std::abs(sum()) > 1e-12) {
        std::ostringstream os;
        os << "hp3d kernel: coefficients must sum to 0, got " << sum();
        throw std::invalid_argument(os.str());
    }
    if (coeff[13] <= 0.0) throw std::invalid_argument("hp3d kernel: central coefficient must be positive");
}

Tensor hp3d_residual(const Tensor& unit_frames, const Hp3dKernel& kernel) {
    const Shape& s = unit_frames.shape();
    if (s.size() != 4 || s[0] != 5 || s[3] != 3)
        throw std::invalid_argument("hp3d_residual: expected [5,H,W,3] input, got " + shape_str(s));
    if (!unit_frames.all_finite()) throw std::invalid_argument("hp3d_residual: non-finite input");
    kernel.validate();

    const int T = s[0], H = s[1], W = s[2], C = s[3];
    Tensor out({T, H, W, C}, 0.0);
    auto at = [&](int t, int h, int w, int c) -> double {
        t = std::clamp(t, 0, T - 1);  // temporal replicate
        return unit_frames[((static_cast<std::int64_t>(t) * H + h) * W + w) * C + c];
    };
    // Spatial border ring of the residual stays zero so a constant volume maps
    // to an exactly zero residual everywhere.
    for (int t = 0; t < T; ++t)
        for (int h = 1; h + 1 < H; ++h)
            for (int w = 1; w + 1 < W; ++w)
                for (int c = 0; c < C; ++c) {
                    double acc = 0.0;
                    // Sliding dot-product (CNN-style): tap (dt,dh,dw) pairs
                    // with the sample displaced by +(dt-1) etc., so a unit
                    // impulse reproduces the flipped kernel. Accumulating
                    // sample deltas against the center exploits the zero-sum
                    // kernel: a constant volume cancels term by term, giving
                    // an exactly zero residual instead of rounding noise.
                    const double center = at(t, h, w, c);
                    for (int dt = 0; dt < 3; ++dt)
                        for (int dh = 0; dh < 3; ++dh)
                            for (int dw = 0; dw < 3; ++dw)
                                acc += kernel.coeff[(dt * 3 + dh) * 3 + dw] *
                                       (at(t + (dt - 1), h + (dh - 1), w + (dw - 1), c) - center);
                    out[((static_cast<std::int64_t>(t) * H + h) * W + w) * C + c] = acc;
                }
    return out;
}

}  // namespace vilocal
