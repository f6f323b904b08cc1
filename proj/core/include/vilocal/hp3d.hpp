#pragma once

#include "vilocal/tensor.hpp"

#include <string>

namespace vilocal {

// Fixed 3x3x3 high-pass filter applied per color channel. Coefficients sum to
// zero so any spatiotemporally constant volume maps to an exactly zero residual.
struct Hp3dKernel {
    // [temporal][spatial_row][spatial_col], flattened t-major, 27 values
    double coeff[27];

    // Spatiotemporal Laplacian: center 1, the other 26 taps -1/26.
    static Hp3dKernel laplacian();
    static Hp3dKernel from_file(const std::string& path);

    double sum() const;
    void validate() const;  // zero-sum within 1e-12, positive center
};

// unit_frames: [5,H,W,3] reals in [0,1]. Temporal borders replicate-padded;
// the one-pixel spatial border of the residual is zero. Output shape equals
// input shape.
Tensor hp3d_residual(const Tensor& unit_frames, const Hp3dKernel& kernel);

}  // namespace vilocal
