#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace vilocal {

using Shape = std::vector<int>;

namespace detail {
// std::allocator that default-initializes (leaves doubles uninitialized) so
// buffers that are fully overwritten right away skip the zero-fill pass.
template <class T>
struct NoInitAllocator : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = NoInitAllocator<U>;
    };
    template <class U>
    void construct(U* p) noexcept {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class A0, class... Args>
    void construct(U* p, A0&& a0, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<A0>(a0), std::forward<Args>(args)...);
    }
};
}  // namespace detail

using DoubleBuffer = std::vector<double, detail::NoInitAllocator<double>>;

// Dense row-major double tensor. All model math runs in double so that
// finite-difference gradient checks are meaningful.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    static Tensor from(Shape shape, std::vector<double> values);
    // Allocated but not filled; every element must be written before reading.
    static Tensor uninitialized(Shape shape);

    const Shape& shape() const { return dims_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    int dim(int i) const { return dims_.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(dims_.size()); }

    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }
    bool all_finite() const;
    Tensor reshaped(Shape shape) const;

    DoubleBuffer& raw() { return data_; }
    const DoubleBuffer& raw() const { return data_; }

private:
    Shape dims_;
    DoubleBuffer data_;
};

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over Tensor values.
// ---------------------------------------------------------------------------

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily by backward()
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;  // accumulates into parents' grads
    std::string name;

    Tensor& ensure_grad();
};

// Value-only evaluation: nodes built while a guard is alive keep neither
// parent links nor backward closures, so intermediate tensors are released as
// soon as their Var goes out of scope. backward() is unavailable on such
// graphs. Used by the *_value entry points to bound peak memory.
class InferenceModeGuard {
public:
    InferenceModeGuard();
    ~InferenceModeGuard();
    InferenceModeGuard(const InferenceModeGuard&) = delete;
    InferenceModeGuard& operator=(const InferenceModeGuard&) = delete;

private:
    bool prev_;
};
bool inference_mode_active();

Var constant(Tensor value, std::string name = "");
// Leaf with requires_grad=true; trainable parameters are these.
Var leaf(Tensor value, std::string name = "");

// Accumulates gradients of a scalar root into every reachable leaf.
void backward(const Var& root);

// Builds a graph node with a custom backward pass; backprop must accumulate
// into parents' grads via Node::ensure_grad().
Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop);

// Identity with a new shape (same element order).
Var reshape(const Var& x, Shape shape);

// --- elementwise / scalar ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var relu(const Var& a);
Var gelu(const Var& a);
Var sigmoid(const Var& a);

// --- reductions ---
Var sum_all(const Var& a);
Var mean_all(const Var& a);
// x viewed as [groups, group_size]; mean over axis 0 -> [group_size]
Var mean_axis0(const Var& a, int groups);

// --- linear algebra (2-D views [rows, cols]) ---
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
// y = x * w + bias, x:[n,k] w:[k,m] bias:[m]
Var linear(const Var& x, const Var& w, const Var& bias);

// --- indexing on 2-D views ---
Var gather_rows(const Var& x, const std::vector<int>& rows);
Var slice_cols(const Var& x, int col0, int col1);
Var concat_cols(const std::vector<Var>& parts);

// --- normalization / attention pieces ---
// LayerNorm over the last dimension of a [n, c] view.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_lastdim(const Var& x);
Var l2_normalize_rows(const Var& x, double eps = 1e-12);

// BatchNorm over a [n, c] view (statistics per column). Training mode uses
// batch statistics and updates the running buffers in place; eval mode uses
// the stored running statistics.
Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, double momentum = 0.1, double eps = 1e-5);

// --- 3-D convolution on [T,H,W,C] channels-last volumes ---
struct Conv3dSpec {
    int kt = 3, kh = 3, kw = 3;
    int st = 1, sh = 1, sw = 1;
    int pt = 1, ph = 1, pw = 1;  // zero padding
};
int conv_out_extent(int in, int k, int s, int p);
// w: [kt*kh*kw*cin, cout], bias: [cout]
Var conv3d(const Var& x, const Var& w, const Var& bias, const Conv3dSpec& spec);
// Depthwise: w [kt*kh*kw, c], bias [c]; stride 1, same padding.
Var depthwise_conv3d(const Var& x, const Var& w, const Var& bias);

// --- resampling ---
// x: [h, w] -> [factor*h, factor*w], bilinear, align_corners=false.
Var bilinear_upsample(const Var& x, int factor);

// Plain-value helpers (no graph).
Tensor bilinear_upsample_value(const Tensor& x, int factor);

}  // namespace vilocal
