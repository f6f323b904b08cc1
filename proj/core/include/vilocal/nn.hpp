#pragma once

#include "vilocal/rng.hpp"
#include "vilocal/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace vilocal {

// Named trainable parameters, ordered by name for deterministic iteration.
class ParamStore {
public:
    Var add(const std::string& name, Tensor init);
    Var get(const std::string& name) const;
    bool has(const std::string& name) const { return params_.count(name) != 0; }

    std::int64_t param_count() const;
    std::uint64_t checksum() const;  // FNV-1a over names, shapes and raw bytes
    void zero_grads();
    void set_requires_grad(bool on);

    std::map<std::string, Var>& map() { return params_; }
    const std::map<std::string, Var>& map() const { return params_; }

    std::map<std::string, Tensor> snapshot() const;
    // Replaces values; throws if a name or shape does not match.
    void restore(const std::map<std::string, Tensor>& values);

private:
    std::map<std::string, Var> params_;
};

std::uint64_t fnv1a_bytes(const void* data, std::size_t n, std::uint64_t h = 14695981039346656037ULL);
std::uint64_t tensor_map_checksum(const std::map<std::string, Tensor>& values);

// Initializers
Tensor he_normal(Shape shape, int fan_in, Rng& rng);
Tensor scaled_normal(Shape shape, double stddev, Rng& rng);

// Adaptive-moment gradient descent.
class AdamOptimizer {
public:
    struct Config {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    AdamOptimizer(ParamStore& params, Config cfg);
    void step();  // consumes .grad of every parameter
    int step_count() const { return t_; }

    std::map<std::string, Tensor> state_snapshot() const;  // m/v moments + counter
    void restore_state(const std::map<std::string, Tensor>& state);

private:
    ParamStore& params_;
    Config cfg_;
    int t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

}  // namespace vilocal
