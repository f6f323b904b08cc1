#include "vilocal/nn.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace vilocal {

Var ParamStore::add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw std::invalid_argument("ParamStore: duplicate parameter " + name);
    Var v = leaf(std::move(init), name);
    params_[name] = v;
    return v;
}

Var ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
    return it->second;
}

std::int64_t ParamStore::param_count() const {
    std::int64_t n = 0;
    for (const auto& [name, v] : params_) n += v->value.size();
    return n;
}

std::uint64_t fnv1a_bytes(const void* data, std::size_t n, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t tensor_map_checksum(const std::map<std::string, Tensor>& values) {
    std::uint64_t h = 14695981039346656037ULL;
    for (const auto& [name, t] : values) {
        h = fnv1a_bytes(name.data(), name.size(), h);
        for (int d : t.shape()) h = fnv1a_bytes(&d, sizeof(d), h);
        h = fnv1a_bytes(t.data(), static_cast<std::size_t>(t.size()) * sizeof(double), h);
    }
    return h;
}

std::uint64_t ParamStore::checksum() const {
    return tensor_map_checksum(snapshot());
}

void ParamStore::zero_grads() {
    for (auto& [name, v] : params_) v->grad = Tensor();
}

void ParamStore::set_requires_grad(bool on) {
    for (auto& [name, v] : params_) v->requires_grad = on;
}

std::map<std::string, Tensor> ParamStore::snapshot() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : params_) out[name] = v->value;
    return out;
}

void ParamStore::restore(const std::map<std::string, Tensor>& values) {
    if (values.size() != params_.size())
        throw std::invalid_argument("ParamStore::restore: parameter count mismatch");
    for (auto& [name, v] : params_) {
        auto it = values.find(name);
        if (it == values.end()) throw std::invalid_argument("ParamStore::restore: missing " + name);
        if (!(it->second.shape() == v->value.shape()))
            throw std::invalid_argument("ParamStore::restore: shape mismatch for " + name);
        v->value = it->second;
    }
}

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
    double stddev = std::sqrt(2.0 / fan_in);
    return scaled_normal(std::move(shape), stddev, rng);
}

Tensor scaled_normal(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape), 0.0);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
    return t;
}

AdamOptimizer::AdamOptimizer(ParamStore& params, Config cfg) : params_(params), cfg_(cfg) {
    for (const auto& [name, v] : params_.map()) {
        m_[name] = Tensor(v->value.shape(), 0.0);
        v_[name] = Tensor(v->value.shape(), 0.0);
    }
}

void AdamOptimizer::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (auto& [name, p] : params_.map()) {
        if (p->grad.size() == 0) continue;  // parameter not touched this step
        Tensor& m = m_[name];
        Tensor& v = v_[name];
        for (std::int64_t i = 0; i < p->value.size(); ++i) {
            double g = p->grad[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            double mhat = m[i] / bc1;
            double vhat = v[i] / bc2;
            p->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

std::map<std::string, Tensor> AdamOptimizer::state_snapshot() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, t] : m_) out["adam_m/" + name] = t;
    for (const auto& [name, t] : v_) out["adam_v/" + name] = t;
    out["adam_t"] = Tensor::from({1}, {static_cast<double>(t_)});
    return out;
}

void AdamOptimizer::restore_state(const std::map<std::string, Tensor>& state) {
    for (auto& [name, t] : m_) {
        auto it = state.find("adam_m/" + name);
        if (it == state.end()) throw std::invalid_argument("optimizer state: missing adam_m/" + name);
        t = it->second;
    }
    for (auto& [name, t] : v_) {
        auto it = state.find("adam_v/" + name);
        if (it == state.end()) throw std::invalid_argument("optimizer state: missing adam_v/" + name);
        t = it->second;
    }
    auto it = state.find("adam_t");
    if (it == state.end()) throw std::invalid_argument("optimizer state: missing step counter");
    t_ = static_cast<int>(it->second[0]);
}

}  // namespace vilocal
