#include "doctest.h"
#include "testutil.hpp"
#include "vilocal/checkpoint.hpp"
#include "vilocal/nn.hpp"
#include "vilocal/rng.hpp"

#include <fstream>

using namespace vilocal;

namespace {

Checkpoint sample_ckpt() {
    Rng rng(71);
    Checkpoint c;
    c.step = 42;
    c.config_text = "[train]\nseed = 7\n";
    c.encoder_params["stem/w"] = scaled_normal({3, 4}, 0.1, rng);
    c.encoder_params["stem/b"] = Tensor({4}, 0.25);
    c.decoder_params["conv1/w"] = scaled_normal({4, 2}, 0.1, rng);
    c.optimizer_state["m/stem/w"] = scaled_normal({3, 4}, 0.01, rng);
    return c;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("checkpoint round trip is lossless") {
    testutil::TempDir dir("ckpt");
    Checkpoint c = sample_ckpt();
    save_checkpoint(c, dir.file("a.ckpt"));
    Checkpoint back = load_checkpoint(dir.file("a.ckpt"));

    CHECK(back.step == 42);
    CHECK(back.config_text == c.config_text);
    REQUIRE(back.encoder_params.size() == 2);
    for (const auto& [name, t] : c.encoder_params) {
        REQUIRE(back.encoder_params.count(name) == 1);
        const Tensor& bt = back.encoder_params.at(name);
        REQUIRE(bt.shape() == t.shape());
        for (std::int64_t i = 0; i < t.size(); ++i) CHECK(bt[i] == t[i]);
    }
    CHECK(back.encoder_checksum() == c.encoder_checksum());
    CHECK(back.decoder_checksum() == c.decoder_checksum());
}

TEST_CASE("save-load-save is byte idempotent") {
    testutil::TempDir dir("ckpt");
    Checkpoint c = sample_ckpt();
    save_checkpoint(c, dir.file("a.ckpt"));
    Checkpoint back = load_checkpoint(dir.file("a.ckpt"));
    save_checkpoint(back, dir.file("b.ckpt"));
    CHECK(slurp(dir.file("a.ckpt")) == slurp(dir.file("b.ckpt")));
}

TEST_CASE("corruption is detected") {
    testutil::TempDir dir("ckpt");
    save_checkpoint(sample_ckpt(), dir.file("a.ckpt"));
    std::string bytes = slurp(dir.file("a.ckpt"));

    SUBCASE("flipped payload byte") {
        std::string bad = bytes;
        bad[bad.size() - 5] ^= 0x40;
        std::ofstream(dir.file("bad.ckpt"), std::ios::binary) << bad;
        CHECK_THROWS_AS(load_checkpoint(dir.file("bad.ckpt")), IntegrityError);
    }
    SUBCASE("wrong magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        std::ofstream(dir.file("bad.ckpt"), std::ios::binary) << bad;
        CHECK_THROWS_AS(load_checkpoint(dir.file("bad.ckpt")), IntegrityError);
    }
    SUBCASE("future format version") {
        std::string bad = bytes;
        bad[8] = char(Checkpoint::kFormatVersion + 1);  // little-endian u32 after the magic
        std::ofstream(dir.file("bad.ckpt"), std::ios::binary) << bad;
        CHECK_THROWS_AS(load_checkpoint(dir.file("bad.ckpt")), IntegrityError);
    }
    SUBCASE("truncated file") {
        std::string bad = bytes.substr(0, bytes.size() / 2);
        std::ofstream(dir.file("bad.ckpt"), std::ios::binary) << bad;
        CHECK_THROWS_AS(load_checkpoint(dir.file("bad.ckpt")), IntegrityError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS(load_checkpoint(dir.file("absent.ckpt")));
    }
}
