#include "vilocal/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace vilocal {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

Tensor::Tensor(Shape shape, double fill) : dims_(std::move(shape)) {
    for (int d : dims_)
        if (d <= 0) throw std::invalid_argument("Tensor: non-positive extent in " + shape_str(dims_));
    data_.assign(static_cast<std::size_t>(shape_numel(dims_)), fill);
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
    Tensor t;
    t.dims_ = std::move(shape);
    if (shape_numel(t.dims_) != static_cast<std::int64_t>(values.size()))
        throw std::invalid_argument("Tensor::from: value count does not match " + shape_str(t.dims_));
    t.data_.assign(values.begin(), values.end());
    return t;
}

Tensor Tensor::uninitialized(Shape shape) {
    Tensor t;
    t.dims_ = std::move(shape);
    for (int d : t.dims_)
        if (d <= 0) throw std::invalid_argument("Tensor: non-positive extent in " + shape_str(t.dims_));
    t.data_.resize(static_cast<std::size_t>(shape_numel(t.dims_)));
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != size())
        throw std::invalid_argument("reshape: numel mismatch " + shape_str(dims_) + " -> " + shape_str(shape));
    Tensor t = *this;
    t.dims_ = std::move(shape);
    return t;
}

Tensor& Node::ensure_grad() {
    if (grad.size() == 0) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var constant(Tensor value, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = false;
    n->name = std::move(name);
    return n;
}

Var leaf(Tensor value, std::string name) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    n->name = std::move(name);
    return n;
}

namespace {
thread_local bool g_inference_mode = false;
}  // namespace

InferenceModeGuard::InferenceModeGuard() : prev_(g_inference_mode) { g_inference_mode = true; }
InferenceModeGuard::~InferenceModeGuard() { g_inference_mode = prev_; }
bool inference_mode_active() { return g_inference_mode; }

namespace {

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    if (g_inference_mode) return n;
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->value.shape()) +
                                    " vs " + shape_str(b->value.shape()));
}

void require_2d(const Var& x, const char* op) {
    if (x->value.ndim() != 2) throw std::invalid_argument(std::string(op) + ": expected 2-D view, got " + shape_str(x->value.shape()));
}

}  // namespace

Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backprop) {
    return make_node(std::move(value), std::move(parents), std::move(backprop));
}

void backward(const Var& root) {
    if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    // Iterative post-order topological sort.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    std::unordered_map<Node*, Var> keep;  // pin shared ownership during traversal
    keep[root.get()] = root;
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (!node->requires_grad) {
            stack.pop_back();
            continue;
        }
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx].get();
            keep[parent] = node->parents[idx];
            ++idx;
            if (!seen.count(parent) && parent->requires_grad) stack.push_back({parent, 0});
        } else {
            if (seen.insert(node).second) order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad()[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backprop && node->grad.size() != 0) node->backprop(*node);
    }
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x->value.reshaped(shape);
    return make_node(std::move(out), {x}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

// --- elementwise ---

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::uninitialized(a->value.shape());
    const double *av = a->value.data(), *bv = b->value.data();
    double* o = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) o[i] = av[i] + bv[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            Node& p = *n.parents[static_cast<std::size_t>(k)];
            if (!p.requires_grad) continue;
            Tensor& g = p.ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::uninitialized(a->value.shape());
    const double *av = a->value.data(), *bv = b->value.data();
    double* o = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) o[i] = av[i] - bv[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::uninitialized(a->value.shape());
    const double *av = a->value.data(), *bv = b->value.data();
    double* o = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) o[i] = av[i] * bv[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = Tensor::uninitialized(a->value.shape());
    const double* av = a->value.data();
    double* o = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) o[i] = av[i] * s;
    return make_node(std::move(out), {a}, [s](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * s;
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = Tensor::uninitialized(a->value.shape());
    const double* av = a->value.data();
    double* o = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) o[i] = av[i] + s;
    return make_node(std::move(out), {a}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    });
}

Var relu(const Var& a) {
    Tensor out = Tensor::uninitialized(a->value.shape());
    const double* av = a->value.data();
    double* o = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) o[i] = std::max(0.0, av[i]);
    return make_node(std::move(out), {a}, [](Node& n) {
        const Tensor& x = n.parents[0]->value;
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i)
            if (x[i] > 0.0) g[i] += n.grad[i];
    });
}

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
}

Var gelu(const Var& a) {
    // tanh approximation
    Tensor out = Tensor::uninitialized(a->value.shape());
    const double* av = a->value.data();
    for (std::int64_t i = 0; i < out.size(); ++i) {
        double x = av[i];
        out[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
    }
    return make_node(std::move(out), {a}, [](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) {
            double x = xv[i];
            double u = kGeluC * (x + 0.044715 * x * x * x);
            double t = std::tanh(u);
            double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
            double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
            g[i] += n.grad[i] * d;
        }
    });
}

Var sigmoid(const Var& a) {
    Tensor out = Tensor::uninitialized(a->value.shape());
    const double* av = a->value.data();
    double* o = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) o[i] = 1.0 / (1.0 + std::exp(-av[i]));
    return make_node(std::move(out), {a}, [](Node& n) {
        const Tensor& y = n.value;
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] * y[i] * (1.0 - y[i]);
    });
}

// --- reductions ---

Var sum_all(const Var& a) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
    return make_node(Tensor::from({1}, {s}), {a}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += n.grad[0];
    });
}

Var mean_all(const Var& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a->value.size()));
}

Var mean_axis0(const Var& a, int groups) {
    std::int64_t n = a->value.size();
    if (groups <= 0 || n % groups != 0) throw std::invalid_argument("mean_axis0: bad group count");
    std::int64_t m = n / groups;
    Tensor out({static_cast<int>(m)}, 0.0);
    for (int g = 0; g < groups; ++g)
        for (std::int64_t i = 0; i < m; ++i) out[i] += a->value[g * m + i];
    for (std::int64_t i = 0; i < m; ++i) out[i] /= groups;
    return make_node(std::move(out), {a}, [groups, m](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        double inv = 1.0 / groups;
        for (int k = 0; k < groups; ++k)
            for (std::int64_t i = 0; i < m; ++i) g[k * m + i] += n.grad[i] * inv;
    });
}

// --- linear algebra ---

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    int ar = a->value.dim(0), ac = a->value.dim(1);
    int br = b->value.dim(0), bc = b->value.dim(1);
    int m = trans_a ? ac : ar, k = trans_a ? ar : ac;
    int kb = trans_b ? bc : br, n = trans_b ? br : bc;
    if (k != kb)
        throw std::invalid_argument("matmul: inner dims " + shape_str(a->value.shape()) + " x " +
                                    shape_str(b->value.shape()));
    Tensor out = Tensor::uninitialized({m, n});
    {
        ECMap A(a->value.data(), ar, ac);
        ECMap B(b->value.data(), br, bc);
        EMap C(out.data(), m, n);
        if (!trans_a && !trans_b) C.noalias() = A * B;
        else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
        else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
        else C.noalias() = A.transpose() * B.transpose();
    }
    return make_node(std::move(out), {a, b}, [trans_a, trans_b, m, n](Node& nd) {
        Node& pa = *nd.parents[0];
        Node& pb = *nd.parents[1];
        ECMap G(nd.grad.data(), m, n);
        ECMap A(pa.value.data(), pa.value.dim(0), pa.value.dim(1));
        ECMap B(pb.value.data(), pb.value.dim(0), pb.value.dim(1));
        if (pa.requires_grad) {
            EMap GA(pa.ensure_grad().data(), pa.value.dim(0), pa.value.dim(1));
            if (!trans_a && !trans_b) GA.noalias() += G * B.transpose();
            else if (!trans_a && trans_b) GA.noalias() += G * B;
            else if (trans_a && !trans_b) GA.noalias() += B * G.transpose();
            else GA.noalias() += B.transpose() * G.transpose();
        }
        if (pb.requires_grad) {
            EMap GB(pb.ensure_grad().data(), pb.value.dim(0), pb.value.dim(1));
            if (!trans_a && !trans_b) GB.noalias() += A.transpose() * G;
            else if (trans_a && !trans_b) GB.noalias() += A * G;
            else if (!trans_a && trans_b) GB.noalias() += G.transpose() * A;
            else GB.noalias() += G.transpose() * A.transpose();
        }
    });
}

namespace {
// Adds bias [m] to every row of x [n, m].
Var add_row_bias(const Var& x, const Var& bias) {
    require_2d(x, "add_row_bias");
    int n = x->value.dim(0), m = x->value.dim(1);
    if (bias->value.size() != m) throw std::invalid_argument("bias size mismatch");
    Tensor out = Tensor::uninitialized(x->value.shape());
    const double *xv = x->value.data(), *bv = bias->value.data();
    double* o = out.data();
    for (int i = 0; i < n; ++i) {
        std::int64_t row = static_cast<std::int64_t>(i) * m;
        for (int j = 0; j < m; ++j) o[row + j] = xv[row + j] + bv[j];
    }
    return make_node(std::move(out), {x, bias}, [n, m](Node& nd) {
        if (nd.parents[0]->requires_grad) {
            Tensor& g = nd.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += nd.grad[i];
        }
        if (nd.parents[1]->requires_grad) {
            Tensor& g = nd.parents[1]->ensure_grad();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < m; ++j) g[j] += nd.grad[static_cast<std::int64_t>(i) * m + j];
        }
    });
}
}  // namespace

Var linear(const Var& x, const Var& w, const Var& bias) {
    return add_row_bias(matmul(x, w), bias);
}

// --- indexing ---

Var gather_rows(const Var& x, const std::vector<int>& rows) {
    require_2d(x, "gather_rows");
    int c = x->value.dim(1), nr = x->value.dim(0);
    Tensor out = Tensor::uninitialized({static_cast<int>(rows.size()), c});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        int r = rows[i];
        if (r < 0 || r >= nr) throw std::out_of_range("gather_rows: index out of range");
        std::copy_n(x->value.data() + static_cast<std::int64_t>(r) * c, c,
                    out.data() + static_cast<std::int64_t>(i) * c);
    }
    auto idx = rows;
    return make_node(std::move(out), {x}, [idx = std::move(idx), c](Node& nd) {
        Tensor& g = nd.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const double* src = nd.grad.data() + static_cast<std::int64_t>(i) * c;
            double* dst = g.data() + static_cast<std::int64_t>(idx[i]) * c;
            for (int j = 0; j < c; ++j) dst[j] += src[j];
        }
    });
}

Var slice_cols(const Var& x, int col0, int col1) {
    require_2d(x, "slice_cols");
    int n = x->value.dim(0), c = x->value.dim(1);
    if (col0 < 0 || col1 > c || col0 >= col1) throw std::invalid_argument("slice_cols: bad range");
    int w = col1 - col0;
    Tensor out = Tensor::uninitialized({n, w});
    for (int i = 0; i < n; ++i)
        std::copy_n(x->value.data() + static_cast<std::int64_t>(i) * c + col0, w,
                    out.data() + static_cast<std::int64_t>(i) * w);
    return make_node(std::move(out), {x}, [n, c, col0, w](Node& nd) {
        Tensor& g = nd.parents[0]->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double* src = nd.grad.data() + static_cast<std::int64_t>(i) * w;
            double* dst = g.data() + static_cast<std::int64_t>(i) * c + col0;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    int n = parts[0]->value.dim(0);
    int total = 0;
    std::vector<int> widths;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p->value.dim(0) != n) throw std::invalid_argument("concat_cols: row mismatch");
        widths.push_back(p->value.dim(1));
        total += p->value.dim(1);
    }
    Tensor out = Tensor::uninitialized({n, total});
    int off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        int w = widths[k];
        for (int i = 0; i < n; ++i)
            std::copy_n(parts[k]->value.data() + static_cast<std::int64_t>(i) * w, w,
                        out.data() + static_cast<std::int64_t>(i) * total + off);
        off += w;
    }
    return make_node(std::move(out), parts, [n, total, widths](Node& nd) {
        int off = 0;
        for (std::size_t k = 0; k < nd.parents.size(); ++k) {
            int w = widths[k];
            if (nd.parents[k]->requires_grad) {
                Tensor& g = nd.parents[k]->ensure_grad();
                for (int i = 0; i < n; ++i) {
                    const double* src = nd.grad.data() + static_cast<std::int64_t>(i) * total + off;
                    double* dst = g.data() + static_cast<std::int64_t>(i) * w;
                    for (int j = 0; j < w; ++j) dst[j] += src[j];
                }
            }
            off += w;
        }
    });
}

// --- normalization ---

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_2d(x, "layer_norm");
    int n = x->value.dim(0), c = x->value.dim(1);
    if (gamma->value.size() != c || beta->value.size() != c)
        throw std::invalid_argument("layer_norm: affine size mismatch");
    Tensor out = Tensor::uninitialized({n, c});
    // xhat / inv_std feed only the backward pass; skip them in inference mode.
    const bool keep_stats = !inference_mode_active();
    Tensor xhat = keep_stats ? Tensor::uninitialized({n, c}) : Tensor();
    Tensor inv_std = keep_stats ? Tensor::uninitialized({n}) : Tensor();
    const double* gv = gamma->value.data();
    const double* bv = beta->value.data();
    for (int i = 0; i < n; ++i) {
        const double* row = x->value.data() + static_cast<std::int64_t>(i) * c;
        double mean = 0.0;
        for (int j = 0; j < c; ++j) mean += row[j];
        mean /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= c;
        double is = 1.0 / std::sqrt(var + eps);
        double* orow = out.data() + static_cast<std::int64_t>(i) * c;
        if (keep_stats) {
            inv_std[i] = is;
            double* xr = xhat.data() + static_cast<std::int64_t>(i) * c;
            for (int j = 0; j < c; ++j) {
                double xh = (row[j] - mean) * is;
                xr[j] = xh;
                orow[j] = xh * gv[j] + bv[j];
            }
        } else {
            for (int j = 0; j < c; ++j) orow[j] = (row[j] - mean) * is * gv[j] + bv[j];
        }
    }
    return make_node(std::move(out), {x, gamma, beta},
                     [n, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pg = *nd.parents[1];
        Node& pb = *nd.parents[2];
        const Tensor& gam = pg.value;
        for (int i = 0; i < n; ++i) {
            const double* go = nd.grad.data() + static_cast<std::int64_t>(i) * c;
            const double* xh = xhat.data() + static_cast<std::int64_t>(i) * c;
            if (pg.requires_grad) {
                Tensor& gg = pg.ensure_grad();
                for (int j = 0; j < c; ++j) gg[j] += go[j] * xh[j];
            }
            if (pb.requires_grad) {
                Tensor& gb = pb.ensure_grad();
                for (int j = 0; j < c; ++j) gb[j] += go[j];
            }
            if (px.requires_grad) {
                double sum_g = 0.0, sum_gx = 0.0;
                for (int j = 0; j < c; ++j) {
                    double gh = go[j] * gam[j];
                    sum_g += gh;
                    sum_gx += gh * xh[j];
                }
                Tensor& gx = px.ensure_grad();
                double* gxr = gx.data() + static_cast<std::int64_t>(i) * c;
                for (int j = 0; j < c; ++j) {
                    double gh = go[j] * gam[j];
                    gxr[j] += inv_std[i] * (gh - sum_g / c - xh[j] * sum_gx / c);
                }
            }
        }
    });
}

Var softmax_lastdim(const Var& x) {
    require_2d(x, "softmax_lastdim");
    int n = x->value.dim(0), c = x->value.dim(1);
    Tensor out = Tensor::uninitialized({n, c});
    for (int i = 0; i < n; ++i) {
        const double* row = x->value.data() + static_cast<std::int64_t>(i) * c;
        double* o = out.data() + static_cast<std::int64_t>(i) * c;
        double mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            o[j] = std::exp(row[j] - mx);
            z += o[j];
        }
        for (int j = 0; j < c; ++j) o[j] /= z;
    }
    return make_node(std::move(out), {x}, [n, c](Node& nd) {
        Tensor& g = nd.parents[0]->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double* y = nd.value.data() + static_cast<std::int64_t>(i) * c;
            const double* go = nd.grad.data() + static_cast<std::int64_t>(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += y[j] * go[j];
            double* gr = g.data() + static_cast<std::int64_t>(i) * c;
            for (int j = 0; j < c; ++j) gr[j] += y[j] * (go[j] - dot);
        }
    });
}

Var l2_normalize_rows(const Var& x, double eps) {
    require_2d(x, "l2_normalize_rows");
    int n = x->value.dim(0), c = x->value.dim(1);
    Tensor out = Tensor::uninitialized({n, c});
    Tensor norms = Tensor::uninitialized({n});
    for (int i = 0; i < n; ++i) {
        const double* row = x->value.data() + static_cast<std::int64_t>(i) * c;
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += row[j] * row[j];
        double nrm = std::sqrt(s) + eps;
        norms[i] = nrm;
        for (int j = 0; j < c; ++j) out[static_cast<std::int64_t>(i) * c + j] = row[j] / nrm;
    }
    return make_node(std::move(out), {x}, [n, c, norms = std::move(norms)](Node& nd) {
        Tensor& g = nd.parents[0]->ensure_grad();
        for (int i = 0; i < n; ++i) {
            const double* y = nd.value.data() + static_cast<std::int64_t>(i) * c;
            const double* go = nd.grad.data() + static_cast<std::int64_t>(i) * c;
            double dot = 0.0;
            for (int j = 0; j < c; ++j) dot += y[j] * go[j];
            double* gr = g.data() + static_cast<std::int64_t>(i) * c;
            for (int j = 0; j < c; ++j) gr[j] += (go[j] - y[j] * dot) / norms[i];
        }
    });
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Tensor& running_mean,
               Tensor& running_var, bool training, double momentum, double eps) {
    require_2d(x, "batch_norm");
    int n = x->value.dim(0), c = x->value.dim(1);
    if (gamma->value.size() != c || beta->value.size() != c || running_mean.size() != c ||
        running_var.size() != c)
        throw std::invalid_argument("batch_norm: affine/buffer size mismatch");

    Tensor mean({c}, 0.0), var({c}, 0.0);
    if (training) {
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) mean[j] += x->value[static_cast<std::int64_t>(i) * c + j];
        for (int j = 0; j < c; ++j) mean[j] /= n;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                double d = x->value[static_cast<std::int64_t>(i) * c + j] - mean[j];
                var[j] += d * d;
            }
        for (int j = 0; j < c; ++j) var[j] /= n;
        for (int j = 0; j < c; ++j) {
            running_mean[j] = (1.0 - momentum) * running_mean[j] + momentum * mean[j];
            running_var[j] = (1.0 - momentum) * running_var[j] + momentum * var[j];
        }
    } else {
        mean = running_mean;
        var = running_var;
    }
    Tensor inv_std = Tensor::uninitialized({c});
    for (int j = 0; j < c; ++j) inv_std[j] = 1.0 / std::sqrt(var[j] + eps);
    Tensor out = Tensor::uninitialized({n, c}), xhat = Tensor::uninitialized({n, c});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            std::int64_t k = static_cast<std::int64_t>(i) * c + j;
            double xh = (x->value[k] - mean[j]) * inv_std[j];
            xhat[k] = xh;
            out[k] = xh * gamma->value[j] + beta->value[j];
        }
    return make_node(std::move(out), {x, gamma, beta},
                     [n, c, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pg = *nd.parents[1];
        Node& pb = *nd.parents[2];
        std::vector<double> sum_g(static_cast<std::size_t>(c), 0.0), sum_gx(static_cast<std::size_t>(c), 0.0);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) {
                std::int64_t k = static_cast<std::int64_t>(i) * c + j;
                sum_g[static_cast<std::size_t>(j)] += nd.grad[k];
                sum_gx[static_cast<std::size_t>(j)] += nd.grad[k] * xhat[k];
            }
        if (pg.requires_grad) {
            Tensor& gg = pg.ensure_grad();
            for (int j = 0; j < c; ++j) gg[j] += sum_gx[static_cast<std::size_t>(j)];
        }
        if (pb.requires_grad) {
            Tensor& gb = pb.ensure_grad();
            for (int j = 0; j < c; ++j) gb[j] += sum_g[static_cast<std::size_t>(j)];
        }
        if (px.requires_grad) {
            Tensor& gx = px.ensure_grad();
            const Tensor& gam = pg.value;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < c; ++j) {
                    std::int64_t k = static_cast<std::int64_t>(i) * c + j;
                    if (training) {
                        gx[k] += gam[j] * inv_std[j] *
                                 (nd.grad[k] - sum_g[static_cast<std::size_t>(j)] / n -
                                  xhat[k] * sum_gx[static_cast<std::size_t>(j)] / n);
                    } else {
                        gx[k] += gam[j] * inv_std[j] * nd.grad[k];
                    }
                }
        }
    });
}

// --- conv3d ---

int conv_out_extent(int in, int k, int s, int p) {
    int num = in + 2 * p - k;
    if (num < 0) throw std::invalid_argument("conv: kernel larger than padded input");
    return num / s + 1;
}

namespace {

struct ConvDims {
    int t, h, w, cin;
    int ot, oh, ow;
};

ConvDims conv_dims(const Shape& xs, const Conv3dSpec& sp) {
    if (xs.size() != 4) throw std::invalid_argument("conv3d: expected [T,H,W,C] input, got " + shape_str(xs));
    ConvDims d;
    d.t = xs[0]; d.h = xs[1]; d.w = xs[2]; d.cin = xs[3];
    d.ot = conv_out_extent(d.t, sp.kt, sp.st, sp.pt);
    d.oh = conv_out_extent(d.h, sp.kh, sp.sh, sp.ph);
    d.ow = conv_out_extent(d.w, sp.kw, sp.sw, sp.pw);
    return d;
}

// col: [ot*oh*ow, kt*kh*kw*cin]
Tensor im2col(const Tensor& x, const Conv3dSpec& sp, const ConvDims& d) {
    int kvol = sp.kt * sp.kh * sp.kw;
    Tensor col = Tensor::uninitialized({d.ot * d.oh * d.ow, kvol * d.cin});
    std::int64_t row = 0;
    for (int ot = 0; ot < d.ot; ++ot) {
        int t0 = ot * sp.st - sp.pt;
        for (int oh = 0; oh < d.oh; ++oh) {
            int h0 = oh * sp.sh - sp.ph;
            for (int ow = 0; ow < d.ow; ++ow, ++row) {
                int w0 = ow * sp.sw - sp.pw;
                double* dst = col.data() + row * kvol * d.cin;
                for (int dt = 0; dt < sp.kt; ++dt) {
                    int t = t0 + dt;
                    for (int dh = 0; dh < sp.kh; ++dh) {
                        int h = h0 + dh;
                        for (int dw = 0; dw < sp.kw; ++dw, dst += d.cin) {
                            int w = w0 + dw;
                            if (t < 0 || t >= d.t || h < 0 || h >= d.h || w < 0 || w >= d.w) {
                                std::fill_n(dst, d.cin, 0.0);  // zero padding
                                continue;
                            }
                            const double* src =
                                x.data() + ((static_cast<std::int64_t>(t) * d.h + h) * d.w + w) * d.cin;
                            std::copy_n(src, d.cin, dst);
                        }
                    }
                }
            }
        }
    }
    return col;
}

void col2im_accum(const Tensor& col, const Conv3dSpec& sp, const ConvDims& d, Tensor& gx) {
    int kvol = sp.kt * sp.kh * sp.kw;
    std::int64_t row = 0;
    for (int ot = 0; ot < d.ot; ++ot) {
        int t0 = ot * sp.st - sp.pt;
        for (int oh = 0; oh < d.oh; ++oh) {
            int h0 = oh * sp.sh - sp.ph;
            for (int ow = 0; ow < d.ow; ++ow, ++row) {
                int w0 = ow * sp.sw - sp.pw;
                const double* src = col.data() + row * kvol * d.cin;
                for (int dt = 0; dt < sp.kt; ++dt) {
                    int t = t0 + dt;
                    for (int dh = 0; dh < sp.kh; ++dh) {
                        int h = h0 + dh;
                        for (int dw = 0; dw < sp.kw; ++dw, src += d.cin) {
                            int w = w0 + dw;
                            if (t < 0 || t >= d.t || h < 0 || h >= d.h || w < 0 || w >= d.w) continue;
                            double* dst =
                                gx.data() + ((static_cast<std::int64_t>(t) * d.h + h) * d.w + w) * d.cin;
                            for (int c = 0; c < d.cin; ++c) dst[c] += src[c];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv3d(const Var& x, const Var& w, const Var& bias, const Conv3dSpec& spec) {
    ConvDims d = conv_dims(x->value.shape(), spec);
    int kvol = spec.kt * spec.kh * spec.kw;
    if (w->value.ndim() != 2 || w->value.dim(0) != kvol * d.cin)
        throw std::invalid_argument("conv3d: weight shape mismatch, want [" + std::to_string(kvol * d.cin) +
                                    ",cout] got " + shape_str(w->value.shape()));
    int cout = w->value.dim(1);
    if (bias->value.size() != cout) throw std::invalid_argument("conv3d: bias size mismatch");

    // A 1x1x1 stride-1 convolution is a plain per-position linear map; the
    // im2col matrix would just duplicate the input, so both passes read it
    // directly. For real kernels the column matrix is large (rows x 27*cin);
    // it is rebuilt during backward instead of being captured by the node,
    // which roughly halves the live memory of a training graph.
    const bool pointwise = kvol == 1 && spec.st == 1 && spec.sh == 1 && spec.sw == 1 && spec.pt == 0 &&
                           spec.ph == 0 && spec.pw == 0;
    std::int64_t rows = static_cast<std::int64_t>(d.ot) * d.oh * d.ow;
    Tensor out = Tensor::uninitialized({d.ot, d.oh, d.ow, cout});
    {
        Tensor col;
        if (!pointwise) col = im2col(x->value, spec, d);
        ECMap C(pointwise ? x->value.data() : col.data(), rows, kvol * d.cin);
        ECMap W(w->value.data(), kvol * d.cin, cout);
        EMap O(out.data(), rows, cout);
        O.noalias() = C * W;
        for (std::int64_t i = 0; i < rows; ++i)
            for (int j = 0; j < cout; ++j) out[i * cout + j] += bias->value[j];
    }
    return make_node(std::move(out), {x, w, bias}, [spec, d, cout, kvol, rows, pointwise](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pw = *nd.parents[1];
        Node& pb = *nd.parents[2];
        ECMap G(nd.grad.data(), rows, cout);
        if (pb.requires_grad) {
            Tensor& gb = pb.ensure_grad();
            for (std::int64_t i = 0; i < rows; ++i)
                for (int j = 0; j < cout; ++j) gb[j] += nd.grad[i * cout + j];
        }
        if (pw.requires_grad) {
            Tensor col;
            if (!pointwise) col = im2col(px.value, spec, d);
            ECMap C(pointwise ? px.value.data() : col.data(), rows, kvol * d.cin);
            EMap GW(pw.ensure_grad().data(), kvol * d.cin, cout);
            GW.noalias() += C.transpose() * G;
        }
        if (px.requires_grad) {
            ECMap W(pw.value.data(), kvol * d.cin, cout);
            if (pointwise) {
                EMap GX(px.ensure_grad().data(), rows, d.cin);
                GX.noalias() += G * W.transpose();
            } else {
                Tensor gcol = Tensor::uninitialized({static_cast<int>(rows), kvol * d.cin});
                EMap GC(gcol.data(), rows, kvol * d.cin);
                GC.noalias() = G * W.transpose();
                col2im_accum(gcol, spec, d, px.ensure_grad());
            }
        }
    });
}

Var depthwise_conv3d(const Var& x, const Var& w, const Var& bias) {
    Conv3dSpec sp;  // 3x3x3, stride 1, same padding
    ConvDims d = conv_dims(x->value.shape(), sp);
    int c = d.cin;
    if (w->value.ndim() != 2 || w->value.dim(0) != 27 || w->value.dim(1) != c)
        throw std::invalid_argument("depthwise_conv3d: weight must be [27,C]");
    if (bias->value.size() != c) throw std::invalid_argument("depthwise_conv3d: bias size mismatch");

    Tensor out = Tensor::uninitialized({d.t, d.h, d.w, c});
    const Tensor& xv = x->value;
    const double* bv = bias->value.data();
    const double* wv = w->value.data();
    // Taps accumulate row by row so the destination row stays cache-resident
    // across all 27 taps; the per-element tap order matches the naive loop.
    std::int64_t rowlen = static_cast<std::int64_t>(d.w) * c;
    for (int t = 0; t < d.t; ++t) {
        for (int h = 0; h < d.h; ++h) {
            double* dst = out.data() + (static_cast<std::int64_t>(t) * d.h + h) * rowlen;
            for (std::int64_t i = 0; i < rowlen; i += c) std::copy_n(bv, c, dst + i);
            int tap = 0;
            for (int dt = -1; dt <= 1; ++dt) {
                int ts = t + dt;
                if (ts < 0 || ts >= d.t) {
                    tap += 9;
                    continue;
                }
                for (int dh = -1; dh <= 1; ++dh) {
                    int hs = h + dh;
                    if (hs < 0 || hs >= d.h) {
                        tap += 3;
                        continue;
                    }
                    for (int dw = -1; dw <= 1; ++dw, ++tap) {
                        const double* wt = wv + static_cast<std::int64_t>(tap) * c;
                        int w0 = std::max(0, -dw), w1 = std::min(d.w, d.w - dw);
                        const double* src =
                            xv.data() + ((static_cast<std::int64_t>(ts) * d.h + hs) * d.w + w0 + dw) * c;
                        double* dp = dst + static_cast<std::int64_t>(w0) * c;
                        for (int wq = w0; wq < w1; ++wq, src += c, dp += c)
                            for (int j = 0; j < c; ++j) dp[j] += src[j] * wt[j];
                    }
                }
            }
        }
    }
    return make_node(std::move(out), {x, w, bias}, [d, c](Node& nd) {
        Node& px = *nd.parents[0];
        Node& pw = *nd.parents[1];
        Node& pb = *nd.parents[2];
        if (pb.requires_grad) {
            Tensor& gb = pb.ensure_grad();
            for (std::int64_t i = 0; i < nd.grad.size(); i += c)
                for (int j = 0; j < c; ++j) gb[j] += nd.grad[i + j];
        }
        int tap = 0;
        for (int dt = -1; dt <= 1; ++dt)
            for (int dh = -1; dh <= 1; ++dh)
                for (int dw = -1; dw <= 1; ++dw, ++tap) {
                    const double* wt = pw.value.data() + static_cast<std::int64_t>(tap) * c;
                    double* gw = pw.requires_grad
                                     ? pw.ensure_grad().data() + static_cast<std::int64_t>(tap) * c
                                     : nullptr;
                    for (int t = 0; t < d.t; ++t) {
                        int ts = t + dt;
                        if (ts < 0 || ts >= d.t) continue;
                        for (int h = 0; h < d.h; ++h) {
                            int hs = h + dh;
                            if (hs < 0 || hs >= d.h) continue;
                            int w0 = std::max(0, -dw), w1 = std::min(d.w, d.w - dw);
                            std::int64_t src_off =
                                ((static_cast<std::int64_t>(ts) * d.h + hs) * d.w + w0 + dw) * c;
                            std::int64_t out_off =
                                ((static_cast<std::int64_t>(t) * d.h + h) * d.w + w0) * c;
                            const double* go = nd.grad.data() + out_off;
                            const double* xs = px.value.data() + src_off;
                            double* gx = px.requires_grad ? px.ensure_grad().data() + src_off : nullptr;
                            for (int wq = w0; wq < w1; ++wq, go += c, xs += c) {
                                for (int j = 0; j < c; ++j) {
                                    if (gx) gx[j] += go[j] * wt[j];
                                    if (gw) gw[j] += go[j] * xs[j];
                                }
                                if (gx) gx += c;
                            }
                        }
                    }
                }
    });
}

// --- bilinear upsample ---

namespace {
// align_corners=false source coordinate
inline void bilerp_coords(int oi, int factor, int in_extent, int& i0, int& i1, double& w1) {
    double src = (oi + 0.5) / factor - 0.5;
    double fl = std::floor(src);
    i0 = static_cast<int>(fl);
    i1 = i0 + 1;
    w1 = src - fl;
    i0 = std::clamp(i0, 0, in_extent - 1);
    i1 = std::clamp(i1, 0, in_extent - 1);
}
}  // namespace

Tensor bilinear_upsample_value(const Tensor& x, int factor) {
    if (x.ndim() != 2) throw std::invalid_argument("bilinear_upsample: expected [h,w]");
    int h = x.dim(0), w = x.dim(1);
    int oh = h * factor, ow = w * factor;
    Tensor out = Tensor::uninitialized({oh, ow});
    for (int i = 0; i < oh; ++i) {
        int r0, r1; double wr;
        bilerp_coords(i, factor, h, r0, r1, wr);
        for (int j = 0; j < ow; ++j) {
            int c0, c1; double wc;
            bilerp_coords(j, factor, w, c0, c1, wc);
            double v = (1 - wr) * ((1 - wc) * x[static_cast<std::int64_t>(r0) * w + c0] +
                                   wc * x[static_cast<std::int64_t>(r0) * w + c1]) +
                       wr * ((1 - wc) * x[static_cast<std::int64_t>(r1) * w + c0] +
                             wc * x[static_cast<std::int64_t>(r1) * w + c1]);
            out[static_cast<std::int64_t>(i) * ow + j] = v;
        }
    }
    return out;
}

Var bilinear_upsample(const Var& x, int factor) {
    Tensor out = bilinear_upsample_value(x->value, factor);
    int h = x->value.dim(0), w = x->value.dim(1);
    return make_node(std::move(out), {x}, [h, w, factor](Node& nd) {
        Tensor& g = nd.parents[0]->ensure_grad();
        int oh = h * factor, ow = w * factor;
        for (int i = 0; i < oh; ++i) {
            int r0, r1; double wr;
            bilerp_coords(i, factor, h, r0, r1, wr);
            for (int j = 0; j < ow; ++j) {
                int c0, c1; double wc;
                bilerp_coords(j, factor, w, c0, c1, wc);
                double go = nd.grad[static_cast<std::int64_t>(i) * ow + j];
                g[static_cast<std::int64_t>(r0) * w + c0] += (1 - wr) * (1 - wc) * go;
                g[static_cast<std::int64_t>(r0) * w + c1] += (1 - wr) * wc * go;
                g[static_cast<std::int64_t>(r1) * w + c0] += wr * (1 - wc) * go;
                g[static_cast<std::int64_t>(r1) * w + c1] += wr * wc * go;
            }
        }
    });
}

}  // namespace vilocal
