#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "vitp/checkpoint.hpp"

using namespace vitp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("vitp_ckpt_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

ModelConfig tiny_cfg() {
    ModelConfig cfg;
    cfg.image_px = 8;
    cfg.patch_px = 4;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.num_classes = 3;
    cfg.bias_mode = BiasMode::relative;
    return cfg;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("checkpoint round-trips parameters and moments bitwise") {
    TempDir tmp;
    ViTPModel model(tiny_cfg(), 21);
    OptimizerConfig ocfg;
    AdamW opt(ocfg, model.parameters());
    // take a few optimizer steps so the moments are nonzero
    for (int t = 0; t < 3; ++t) {
        for (auto& p : model.parameters()) {
            auto& g = p.tensor.ensure_grad();
            for (size_t i = 0; i < g.size(); ++i)
                g[i] = 0.01f * static_cast<float>(i % 7) - 0.02f;
        }
        opt.step(1e-3);
    }
    save_checkpoint(tmp.file("a.ckpt"), "seed = 21\n", 21, 150, model.parameters(), &opt);

    auto ckpt = load_checkpoint(tmp.file("a.ckpt"));
    CHECK(ckpt.version == kCheckpointVersion);
    CHECK(ckpt.config_text == "seed = 21\n");
    CHECK(ckpt.prng_id == kPrngId);
    CHECK(ckpt.seed == 21);
    CHECK(ckpt.step == 150);
    CHECK(ckpt.adam_steps == 3);

    ViTPModel fresh(tiny_cfg(), 99); // different seed, will be overwritten
    AdamW fresh_opt(ocfg, fresh.parameters());
    restore_model(ckpt, fresh.parameters());
    restore_optimizer(ckpt, fresh_opt);
    for (size_t i = 0; i < model.parameters().size(); ++i)
        CHECK(fresh.parameters()[i].tensor.value() == model.parameters()[i].tensor.value());
    for (size_t i = 0; i < opt.slots().size(); ++i) {
        CHECK(fresh_opt.slots()[i].m == opt.slots()[i].m);
        CHECK(fresh_opt.slots()[i].v == opt.slots()[i].v);
    }
    CHECK(fresh_opt.steps_taken() == 3);

    // re-saving the restored state reproduces the file byte for byte
    save_checkpoint(tmp.file("b.ckpt"), "seed = 21\n", 21, 150, fresh.parameters(), &fresh_opt);
    CHECK(slurp(tmp.file("a.ckpt")) == slurp(tmp.file("b.ckpt")));
}

TEST_CASE("corrupted magic is rejected as a format error") {
    TempDir tmp;
    ViTPModel model(tiny_cfg(), 3);
    save_checkpoint(tmp.file("x.ckpt"), "", 3, 0, model.parameters(), nullptr);
    auto bytes = slurp(tmp.file("x.ckpt"));
    bytes[0] = 'X';
    std::ofstream(tmp.file("x.ckpt"), std::ios::binary)
        .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    try {
        load_checkpoint(tmp.file("x.ckpt"));
        FAIL("expected format error");
    } catch (const Error& e) {
        CHECK(e.kind() == Error::Kind::format);
    }
}

TEST_CASE("unknown version is rejected as a version error") {
    TempDir tmp;
    ViTPModel model(tiny_cfg(), 3);
    save_checkpoint(tmp.file("x.ckpt"), "", 3, 0, model.parameters(), nullptr);
    auto bytes = slurp(tmp.file("x.ckpt"));
    bytes[8] = 9; // version field follows the 8-byte magic
    std::ofstream(tmp.file("x.ckpt"), std::ios::binary)
        .write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    try {
        load_checkpoint(tmp.file("x.ckpt"));
        FAIL("expected version error");
    } catch (const Error& e) {
        CHECK(e.kind() == Error::Kind::version);
    }
}

TEST_CASE("truncated files are rejected as truncation errors") {
    TempDir tmp;
    ViTPModel model(tiny_cfg(), 3);
    save_checkpoint(tmp.file("x.ckpt"), "cfg", 3, 7, model.parameters(), nullptr);
    auto bytes = slurp(tmp.file("x.ckpt"));
    for (size_t keep : {bytes.size() - 9, bytes.size() / 2, size_t(10)}) {
        std::ofstream(tmp.file("t.ckpt"), std::ios::binary)
            .write(bytes.data(), static_cast<std::streamsize>(keep));
        try {
            load_checkpoint(tmp.file("t.ckpt"));
            FAIL("expected truncation error");
        } catch (const Error& e) {
            CHECK(e.kind() == Error::Kind::truncation);
        }
    }
    // trailing garbage is a format error, not silence
    auto extra = bytes;
    extra.push_back('!');
    std::ofstream(tmp.file("g.ckpt"), std::ios::binary)
        .write(extra.data(), static_cast<std::streamsize>(extra.size()));
    try {
        load_checkpoint(tmp.file("g.ckpt"));
        FAIL("expected format error");
    } catch (const Error& e) {
        CHECK(e.kind() == Error::Kind::format);
    }
}

TEST_CASE("loading into a mismatched config names the offending tensor") {
    TempDir tmp;
    ViTPModel model(tiny_cfg(), 3);
    save_checkpoint(tmp.file("d1.ckpt"), "", 3, 0, model.parameters(), nullptr);
    auto ckpt = load_checkpoint(tmp.file("d1.ckpt"));

    auto deeper = tiny_cfg();
    deeper.depth = 3; // model wants blocks.2.*, checkpoint stops at blocks.1
    ViTPModel wrong(deeper, 3);
    try {
        restore_model(ckpt, wrong.parameters());
        FAIL("expected shape error");
    } catch (const Error& e) {
        CHECK(e.kind() == Error::Kind::shape);
        CHECK(std::string(e.what()).find("blocks.2") != std::string::npos);
    }

    auto wider = tiny_cfg();
    wider.embed_dim = 16;
    ViTPModel wide(wider, 3);
    try {
        restore_model(ckpt, wide.parameters());
        FAIL("expected shape error");
    } catch (const Error& e) {
        CHECK(e.kind() == Error::Kind::shape);
        CHECK(std::string(e.what()).find("patch_embed.w") != std::string::npos);
    }

    auto shallower = tiny_cfg();
    shallower.depth = 1; // checkpoint carries blocks.1.*, model does not
    ViTPModel shallow(shallower, 3);
    try {
        restore_model(ckpt, shallow.parameters());
        FAIL("expected shape error");
    } catch (const Error& e) {
        CHECK(e.kind() == Error::Kind::shape);
        CHECK(std::string(e.what()).find("blocks.1") != std::string::npos);
    }
}

TEST_CASE("missing checkpoint file reports the missing kind") {
    try {
        load_checkpoint("/nonexistent/path/to.ckpt");
        FAIL("expected missing error");
    } catch (const Error& e) {
        CHECK(e.kind() == Error::Kind::missing);
    }
}
