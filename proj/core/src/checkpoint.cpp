#include "vilocal/checkpoint.hpp"

#include "vilocal/nn.hpp"

#include <cstring>
#include <fstream>

namespace vilocal {

namespace {

constexpr char kMagic[8] = {'V', 'L', 'C', 'K', 'P', 'T', '0', '\n'};

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void write_i64(std::ostream& out, std::int64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
std::int64_t read_i64(std::istream& in) {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

void write_string(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
    std::uint64_t n = read_u64(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

void write_section(std::ostream& out, const std::map<std::string, Tensor>& section) {
    write_u32(out, static_cast<std::uint32_t>(section.size()));
    for (const auto& [name, t] : section) {
        write_string(out, name);
        write_u32(out, static_cast<std::uint32_t>(t.ndim()));
        for (int d : t.shape()) write_u32(out, static_cast<std::uint32_t>(d));
        std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(double);
        write_u64(out, fnv1a_bytes(t.data(), bytes));
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(bytes));
    }
}

std::map<std::string, Tensor> read_section(std::istream& in, const std::string& path) {
    std::map<std::string, Tensor> section;
    std::uint32_t count = read_u32(in);
    for (std::uint32_t k = 0; k < count; ++k) {
        std::string name = read_string(in);
        std::uint32_t nd = read_u32(in);
        Shape shape;
        for (std::uint32_t i = 0; i < nd; ++i) shape.push_back(static_cast<int>(read_u32(in)));
        std::uint64_t expected = read_u64(in);
        Tensor t(shape, 0.0);
        std::size_t bytes = static_cast<std::size_t>(t.size()) * sizeof(double);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes));
        if (!in) throw IntegrityError("checkpoint " + path + ": truncated while reading " + name);
        std::uint64_t actual = fnv1a_bytes(t.data(), bytes);
        if (actual != expected)
            throw IntegrityError("checkpoint " + path + ": checksum mismatch for " + name + " (expected " +
                                 std::to_string(expected) + ", got " + std::to_string(actual) + ")");
        section[name] = std::move(t);
    }
    return section;
}

}  // namespace

std::uint64_t Checkpoint::encoder_checksum() const { return tensor_map_checksum(encoder_params); }
std::uint64_t Checkpoint::decoder_checksum() const { return tensor_map_checksum(decoder_params); }

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out.write(kMagic, sizeof(kMagic));
    write_u32(out, Checkpoint::kFormatVersion);
    write_i64(out, ckpt.step);
    write_string(out, ckpt.config_text);
    write_section(out, ckpt.encoder_params);
    write_section(out, ckpt.decoder_params);
    write_section(out, ckpt.optimizer_state);
    if (!out) throw std::runtime_error("write failure on checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[sizeof(kMagic)] = {};
    in.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IntegrityError("checkpoint " + path + ": bad magic");
    std::uint32_t version = read_u32(in);
    if (version != Checkpoint::kFormatVersion)
        throw IntegrityError("checkpoint " + path + ": unsupported format version " +
                             std::to_string(version));
    Checkpoint ckpt;
    ckpt.step = read_i64(in);
    ckpt.config_text = read_string(in);
    ckpt.encoder_params = read_section(in, path);
    ckpt.decoder_params = read_section(in, path);
    ckpt.optimizer_state = read_section(in, path);
    return ckpt;
}

}  // namespace vilocal
