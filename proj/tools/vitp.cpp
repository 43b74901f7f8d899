#include <algorithm>
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "vitp/analysis.hpp"
#include "vitp/checkpoint.hpp"
#include "vitp/config.hpp"
#include "vitp/gradcheck.hpp"
#include "vitp/ops.hpp"
#include "vitp/train.hpp"

using namespace vitp;

namespace {

const char* kUsage =
    "usage: vitp <command> [--config FILE] [--key value | --key=value]...\n"
    "\n"
    "commands:\n"
    "  train      run the configured training job into out_dir\n"
    "  eval       top-1 holdout accuracy of --checkpoint\n"
    "  mad        mean attention distance CSV for --checkpoint\n"
    "  bias-hist  focal-bias histogram CSV for --checkpoint\n"
    "  schedule   print the focal window sides of the configured model\n"
    "  gradcheck  finite-difference audit of the full model gradient\n"
    "  ablate     train every cell of the configured ablation grid\n"
    "\n"
    "Keys accept the same names as the config file. Checkpoint-reading\n"
    "commands start from the config snapshot stored in the checkpoint, then\n"
    "apply the file and flags on top.\n"
    "\n"
    "exit codes: 0 ok, 1 config error, 2 missing file, 3 internal error\n";

struct Args {
    std::string config_file;
    std::vector<std::string> flags;
};

Args split_args(int argc, char** argv) {
    Args a;
    for (int i = 2; i < argc; ++i) {
        std::string s = argv[i];
        if (s == "--config") {
            if (i + 1 >= argc) fail(Error::Kind::config, "--config is missing a value");
            a.config_file = argv[++i];
        } else if (s.rfind("--config=", 0) == 0) {
            a.config_file = s.substr(9);
        } else {
            a.flags.push_back(std::move(s));
        }
    }
    return a;
}

// Shared setup for the checkpoint-reading commands.
struct LoadedRun {
    RunConfig cfg;
    CheckpointData ckpt;
    ViTPModel model;
};

LoadedRun load_run(const Args& a) {
    RunConfig probe = parse_run_config(a.config_file, a.flags);
    if (probe.checkpoint.empty())
        fail(Error::Kind::config, "this command needs --checkpoint <file>");
    CheckpointData ckpt = load_checkpoint(probe.checkpoint);
    RunConfig cfg = parse_run_config_layers(ckpt.config_text, a.config_file, a.flags);
    ViTPModel model(cfg.model, cfg.seed);
    restore_model(ckpt, model.parameters());
    return {std::move(cfg), std::move(ckpt), std::move(model)};
}

Tensor holdout_batch(const RunConfig& cfg, int want) {
    auto split = load_split(cfg);
    auto b = std::min<size_t>(static_cast<size_t>(want), split.holdout.size());
    if (b == 0) fail(Error::Kind::config, "holdout split is empty");
    auto floats = split.holdout.image_floats();
    Tensor images = Tensor::zeros({static_cast<int64_t>(b), static_cast<int64_t>(floats)});
    std::copy_n(split.holdout.image(0), b * floats, images.value().data());
    return images;
}

int cmd_train(const Args& a) {
    auto cfg = parse_run_config(a.config_file, a.flags);
    auto res = train_loop(cfg);
    std::printf("steps=%lld\n", static_cast<long long>(res.steps_run));
    std::printf("final_step=%lld\n", static_cast<long long>(res.final_step));
    std::printf("initial_loss=%.10g\n", res.initial_loss);
    std::printf("final_loss=%.10g\n", res.final_loss);
    std::printf("eval_acc=%.10g\n", res.final_eval_acc);
    std::printf("checkpoint=%s\n", res.checkpoint_path.c_str());
    return 0;
}

int cmd_eval(const Args& a) {
    auto run = load_run(a);
    auto split = load_split(run.cfg);
    double acc = evaluate(run.model, split.holdout, run.cfg.opt.batch_size);
    std::printf("eval_acc=%.10g\n", acc);
    std::printf("n=%zu\n", split.holdout.size());
    return 0;
}

int cmd_mad(const Args& a) {
    auto run = load_run(a);
    auto report = mad_report(run.model, holdout_batch(run.cfg, run.cfg.mad_batch));
    std::fputs(mad_csv(report).c_str(), stdout);
    return 0;
}

int cmd_bias_hist(const Args& a) {
    auto run = load_run(a);
    if (run.cfg.model.bias_mode == BiasMode::none)
        fail(Error::Kind::config, "bias-hist: this model has no focal bias");
    auto hist =
        bias_histogram(run.model, run.cfg.hist_bins, run.cfg.hist_lo, run.cfg.hist_hi);
    std::fputs(histogram_csv(hist).c_str(), stdout);
    return 0;
}

void print_sides(const std::vector<int>& sides) {
    std::string line = "[";
    for (size_t i = 0; i < sides.size(); ++i) {
        if (i) line += ",";
        line += std::to_string(sides[i]);
    }
    line += "]";
    std::puts(line.c_str());
}

int cmd_schedule(const Args& a) {
    auto cfg = parse_run_config(a.config_file, a.flags);
    const auto& m = cfg.model;
    auto sched = build_window_schedule(m.mrfa_mode, m.depth, m.heads, m.grid());
    if (m.mrfa_mode == ScheduleMode::mrfa_w) {
        print_sides(sched.sides[0]); // every layer shares the row
    } else {
        for (const auto& row : sched.sides) print_sides(row);
    }
    return 0;
}

int cmd_gradcheck(const Args& a) {
    auto cfg = parse_run_config(a.config_file, a.flags);
    ViTPModelT<double> model(cfg.model, cfg.seed);
    if (model.param_count() > 5000)
        std::fprintf(stderr,
                     "auditing %lld parameters at two forwards each; consider a smaller model\n",
                     static_cast<long long>(model.param_count()));
    auto images = randomize_for_gradcheck(model, 1, cfg.seed);
    std::vector<int> labels{cfg.model.num_classes - 1};
    auto f = [&](TapeT<double>* tape) {
        return cross_entropy_mean(tape, model.forward(tape, images), labels);
    };
    auto report = grad_check_params<double>(f, model.parameters(), 1e-3, 1e-8);
    std::printf("max_rel_err=%.6g\n", report.max_rel_err);
    std::printf("worst_param=%s\n", report.worst_param.c_str());
    std::printf("checked=%zu\n", report.checked);
    std::printf("skipped=%zu\n", report.skipped);
    if (report.max_rel_err < 1e-5) return 0;
    std::fprintf(stderr, "error: analytic gradient disagrees with finite differences\n");
    return 3;
}

int cmd_ablate(const Args& a) {
    auto cfg = parse_run_config(a.config_file, a.flags);
    for (const auto& dir : run_ablation(cfg)) std::puts(dir.c_str());
    return 0;
}

int dispatch(int argc, char** argv) {
    std::string cmd = argv[1];
    if (cmd == "help" || cmd == "--help" || cmd == "-h") {
        std::fputs(kUsage, stdout);
        return 0;
    }
    Args a = split_args(argc, argv);
    if (cmd == "train") return cmd_train(a);
    if (cmd == "eval") return cmd_eval(a);
    if (cmd == "mad") return cmd_mad(a);
    if (cmd == "bias-hist") return cmd_bias_hist(a);
    if (cmd == "schedule") return cmd_schedule(a);
    if (cmd == "gradcheck") return cmd_gradcheck(a);
    if (cmd == "ablate") return cmd_ablate(a);
    fail(Error::Kind::config, "unknown command '" + cmd + "'");
}

int exit_code(Error::Kind kind) {
    switch (kind) {
        case Error::Kind::config: return 1;
        case Error::Kind::missing: return 2;
        default: return 3;
    }
}

} // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fputs(kUsage, stderr);
        return 1;
    }
    try {
        return dispatch(argc, argv);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
