#pragma once

#include "vilocal/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace vilocal {

struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Versioned binary archive of named parameter arrays plus the run config that
// produced them. Save -> load -> save is byte-identical.
struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    std::int64_t step = 0;
    std::string config_text;  // resolved run config snapshot
    std::map<std::string, Tensor> encoder_params;
    std::map<std::string, Tensor> decoder_params;    // empty after stage 1
    std::map<std::string, Tensor> optimizer_state;

    std::uint64_t encoder_checksum() const;
    std::uint64_t decoder_checksum() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vilocal
