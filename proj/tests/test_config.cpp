#include <filesystem>
#include <fstream>
#include <functional>

#include "doctest.h"
#include "vitp/config.hpp"

using namespace vitp;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("vitp_cfg_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

fs::path write_cfg(const TempDir& dir, const std::string& name, const std::string& text) {
    fs::path p = dir.path / name;
    std::ofstream(p) << text;
    return p;
}

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_CASE("flags-only invocation yields the default desk configuration") {
    auto cfg = parse_run_config("", {});
    CHECK(cfg.preset == "desk-tiny");
    CHECK(cfg.model.image_px == 16);
    CHECK(cfg.model.depth == 2);
    CHECK(cfg.model.bias_mode == BiasMode::relative);
    CHECK(cfg.opt.batch_size == 128);
    CHECK(cfg.data.kind == DataKind::synthetic);
    CHECK(cfg.data.image_px == 16);       // mirrors the model
    CHECK(cfg.data.num_classes == 10);
    CHECK(cfg.data.seed == cfg.seed);
    CHECK(cfg.data.norm.mean[0] == 0.0);  // synthetic defaults to identity
    CHECK(cfg.data.norm.stdev[2] == 1.0);
    CHECK(cfg.out_dir == "run");
}

TEST_CASE("config file parsing handles comments, blanks, and spacing") {
    TempDir dir;
    auto p = write_cfg(dir, "a.cfg",
                       "# run setup\n"
                       "\n"
                       "depth = 3   # inline comment\n"
                       "  heads=4\n"
                       "embed_dim = 64\n");
    auto cfg = parse_run_config(p.string(), {});
    CHECK(cfg.model.depth == 3);
    CHECK(cfg.model.heads == 4);
    CHECK(cfg.model.embed_dim == 64);
}

TEST_CASE("unknown and malformed keys are reported with their line") {
    TempDir dir;
    auto p1 = write_cfg(dir, "b.cfg", "depth = 2\nwibble = 9\n");
    std::string msg = message_of([&] { parse_run_config(p1.string(), {}); });
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("wibble") != std::string::npos);

    auto p2 = write_cfg(dir, "c.cfg", "depth two\n");
    msg = message_of([&] { parse_run_config(p2.string(), {}); });
    CHECK(msg.find("line 1") != std::string::npos);

    auto p3 = write_cfg(dir, "d.cfg", "depth = two\n");
    msg = message_of([&] { parse_run_config(p3.string(), {}); });
    CHECK(msg.find("integer") != std::string::npos);
    CHECK(msg.find("depth") != std::string::npos);

    msg = message_of([&] { parse_run_config("", {"--augment", "maybe"}); });
    CHECK(msg.find("boolean") != std::string::npos);

    msg = message_of([&] { parse_run_config("", {"--norm_mean", "1,2"}); });
    CHECK(msg.find("three") != std::string::npos);

    CHECK_THROWS_WITH_AS(parse_run_config((dir.path / "nope.cfg").string(), {}),
                         doctest::Contains("not found"), Error);
}

TEST_CASE("flags override file values and support both spellings") {
    TempDir dir;
    auto p = write_cfg(dir, "e.cfg", "depth = 2\nheads = 2\nembed_dim = 32\n");
    auto cfg = parse_run_config(p.string(), {"--depth", "4", "--heads=8", "--embed_dim", "64"});
    CHECK(cfg.model.depth == 4);
    CHECK(cfg.model.heads == 8);
    CHECK(cfg.model.embed_dim == 64);

    CHECK_THROWS_AS(parse_run_config(p.string(), {"depth", "4"}), Error);  // missing --
    CHECK_THROWS_AS(parse_run_config(p.string(), {"--depth"}), Error);     // missing value
}

TEST_CASE("preset applies first so explicit dimensions always win") {
    // preset mentioned after the override still loses to it
    auto cfg = parse_run_config("", {"--depth", "5", "--preset", "desk-tiny"});
    CHECK(cfg.model.depth == 5);
    CHECK(cfg.model.embed_dim == 32); // rest of the preset intact

    // file sets the preset, flag overrides one dimension of it
    TempDir dir;
    auto p = write_cfg(dir, "f.cfg", "preset = tiny\n");
    auto tiny = parse_run_config(p.string(), {});
    auto cfg2 = parse_run_config(p.string(), {"--depth", "3"});
    CHECK(cfg2.model.depth == 3);
    CHECK(cfg2.model.embed_dim == tiny.model.embed_dim);
    CHECK(cfg2.model.image_px == tiny.model.image_px);

    CHECK_THROWS_AS(parse_run_config("", {"--preset", "mystery"}), Error);
}

TEST_CASE("invariant violations are rejected as config errors") {
    auto expect_config = [](const std::vector<std::string>& flags) {
        try {
            parse_run_config("", flags);
            FAIL_CHECK("accepted " << flags[0] << " " << (flags.size() > 1 ? flags[1] : ""));
        } catch (const Error& e) {
            CHECK(e.kind() == Error::Kind::config);
        }
    };
    expect_config({"--suppression", "5"});          // must be <= 0
    expect_config({"--image_px", "17"});            // not divisible by patch
    expect_config({"--eval_fraction", "1.5"});
    expect_config({"--label_smoothing", "1.0"});
    expect_config({"--hist_bins", "1"});
    expect_config({"--ablate_axis", "everything"});
    expect_config({"--data_kind", "cifar-binary"}); // 16px image, no path
    expect_config({"--beta1", "1.5"});
    expect_config({"--gelu", "relu"});
}

TEST_CASE("cifar source demands matching geometry and picks its normalization") {
    TempDir dir;
    std::vector<std::string> base = {"--data_kind", "cifar-binary", "--data_path",
                                     (dir.path / "cifar").string(),  "--image_px",
                                     "32",          "--patch_px",    "8"};
    auto cfg = parse_run_config("", base);
    CHECK(cfg.data.kind == DataKind::cifar_binary);
    CHECK(cfg.data.norm.mean[0] == doctest::Approx(0.4914)); // 10-class constants

    auto flags100 = base;
    flags100.insert(flags100.end(), {"--num_classes", "100"});
    auto cfg100 = parse_run_config("", flags100);
    CHECK(cfg100.data.norm.mean[0] == doctest::Approx(0.5071));

    auto custom = base;
    custom.insert(custom.end(), {"--norm_mean", "0.5,0.5,0.5", "--norm_std", "0.2,0.2,0.2"});
    auto cfgc = parse_run_config("", custom);
    CHECK(cfgc.data.norm.mean[0] == 0.5);
    CHECK(cfgc.data.norm.stdev[1] == 0.2);
}

TEST_CASE("resolved text reparses to the same resolved text") {
    TempDir dir;
    auto cfg = parse_run_config(
        "", {"--preset", "tiny", "--depth", "3", "--seed", "9", "--label_smoothing", "0.1",
             "--base_lr", "0.003", "--augment", "true", "--out_dir", (dir.path / "o").string()});
    std::string text = cfg.resolved_text();
    auto p = write_cfg(dir, "resolved.cfg", text);
    auto cfg2 = parse_run_config(p.string(), {});
    CHECK(cfg2.resolved_text() == text);
    CHECK(cfg2.model.depth == 3);
    CHECK(cfg2.seed == 9);
    CHECK(cfg2.opt.peak_lr() == cfg.opt.peak_lr());

    // derived quantities (lr scaling rule, bias decay fallback) are pinned
    // to explicit numbers in the text, so resolution happens exactly once
    auto derived = parse_run_config("", {});
    auto p2 = write_cfg(dir, "resolved2.cfg", derived.resolved_text());
    auto derived2 = parse_run_config(p2.string(), {});
    CHECK(derived2.opt.peak_lr() == derived.opt.peak_lr());
    CHECK(derived2.opt.resolved_bias_decay() == derived.opt.resolved_bias_decay());
    CHECK(derived2.resolved_text() == derived.resolved_text());
}
