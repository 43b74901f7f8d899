#include "vitp/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace vitp {

namespace {

struct KeyValue {
    std::string key, value, where; // where = "line N" or "flag --key"
};

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void bad(const KeyValue& kv, const std::string& what) {
    fail(Error::Kind::config, "config " + kv.where + ": " + what);
}

int64_t parse_int(const KeyValue& kv) {
    char* end = nullptr;
    long long v = std::strtoll(kv.value.c_str(), &end, 10);
    if (kv.value.empty() || *end != '\0')
        bad(kv, "key '" + kv.key + "' expects an integer, got '" + kv.value + "'");
    return v;
}

double parse_double(const KeyValue& kv) {
    char* end = nullptr;
    double v = std::strtod(kv.value.c_str(), &end);
    if (kv.value.empty() || *end != '\0')
        bad(kv, "key '" + kv.key + "' expects a number, got '" + kv.value + "'");
    return v;
}

bool parse_bool(const KeyValue& kv) {
    if (kv.value == "true" || kv.value == "1" || kv.value == "yes") return true;
    if (kv.value == "false" || kv.value == "0" || kv.value == "no") return false;
    bad(kv, "key '" + kv.key + "' expects a boolean, got '" + kv.value + "'");
}

std::array<double, 3> parse_triple(const KeyValue& kv) {
    std::array<double, 3> out{};
    std::istringstream in(kv.value);
    std::string part;
    for (size_t i = 0; i < 3; ++i) {
        if (!std::getline(in, part, ','))
            bad(kv, "key '" + kv.key + "' expects three comma-separated numbers");
        KeyValue sub{kv.key, trim(part), kv.where};
        out[i] = parse_double(sub);
    }
    if (std::getline(in, part))
        bad(kv, "key '" + kv.key + "' expects exactly three numbers");
    return out;
}

GeluKind gelu_from_string(const KeyValue& kv) {
    if (kv.value == "erf") return GeluKind::erf;
    if (kv.value == "tanh") return GeluKind::tanh_approx;
    bad(kv, "key 'gelu' expects erf or tanh, got '" + kv.value + "'");
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void apply(RunConfig& cfg, const KeyValue& kv, bool* norm_set) {
    const std::string& k = kv.key;
    auto& m = cfg.model;
    auto& o = cfg.opt;
    auto& d = cfg.data;
    if (k == "preset") return; // handled up front
    // model
    else if (k == "image_px") m.image_px = static_cast<int>(parse_int(kv));
    else if (k == "patch_px") m.patch_px = static_cast<int>(parse_int(kv));
    else if (k == "depth") m.depth = static_cast<int>(parse_int(kv));
    else if (k == "embed_dim") m.embed_dim = static_cast<int>(parse_int(kv));
    else if (k == "heads") m.heads = static_cast<int>(parse_int(kv));
    else if (k == "mlp_ratio") m.mlp_ratio = parse_double(kv);
    else if (k == "num_classes") m.num_classes = static_cast<int>(parse_int(kv));
    else if (k == "bias_mode") {
        try {
            m.bias_mode = bias_mode_from_string(kv.value);
        } catch (const Error& e) {
            bad(kv, e.what());
        }
    } else if (k == "learnable_bias") m.learnable_bias = parse_bool(kv);
    else if (k == "decay_enabled") m.decay_enabled = parse_bool(kv);
    else if (k == "suppression") m.suppression_v = parse_double(kv);
    else if (k == "mrfa_mode") {
        try {
            m.mrfa_mode = schedule_mode_from_string(kv.value);
        } catch (const Error& e) {
            bad(kv, e.what());
        }
    } else if (k == "gelu") m.gelu_kind = gelu_from_string(kv);
    else if (k == "dropout") m.dropout = parse_double(kv);
    else if (k == "drop_path") m.drop_path = parse_double(kv);
    // optimizer
    else if (k == "batch_size") o.batch_size = static_cast<int>(parse_int(kv));
    else if (k == "base_lr") o.base_lr = parse_double(kv);
    else if (k == "beta1") o.beta1 = parse_double(kv);
    else if (k == "beta2") o.beta2 = parse_double(kv);
    else if (k == "adam_eps") o.eps = parse_double(kv);
    else if (k == "weight_decay") o.weight_decay = parse_double(kv);
    else if (k == "bias_decay") o.bias_decay = parse_double(kv);
    else if (k == "warmup_epochs") o.warmup_epochs = static_cast<int>(parse_int(kv));
    else if (k == "epochs") o.total_epochs = static_cast<int>(parse_int(kv));
    else if (k == "grad_clip") o.grad_clip = parse_double(kv);
    // data
    else if (k == "data_kind") {
        try {
            d.kind = data_kind_from_string(kv.value);
        } catch (const Error& e) {
            bad(kv, e.what());
        }
    } else if (k == "data_path") d.path = kv.value;
    else if (k == "data_n") d.n = static_cast<int>(parse_int(kv));
    else if (k == "norm_mean") {
        d.norm.mean = parse_triple(kv);
        *norm_set = true;
    } else if (k == "norm_std") {
        d.norm.stdev = parse_triple(kv);
        *norm_set = true;
    }
    // run
    else if (k == "seed") cfg.seed = static_cast<uint64_t>(parse_int(kv));
    else if (k == "out_dir") cfg.out_dir = kv.value;
    else if (k == "max_steps") cfg.max_steps = parse_int(kv);
    else if (k == "checkpoint_every") cfg.checkpoint_every = parse_int(kv);
    else if (k == "augment") cfg.augment = parse_bool(kv);
    else if (k == "label_smoothing") cfg.label_smoothing = parse_double(kv);
    else if (k == "eval_fraction") cfg.eval_fraction = parse_double(kv);
    else if (k == "resume") cfg.resume = kv.value;
    else if (k == "checkpoint") cfg.checkpoint = kv.value;
    else if (k == "ablate_axis") cfg.ablate_axis = kv.value;
    else if (k == "parallel") cfg.parallel = parse_bool(kv);
    else if (k == "hist_bins") cfg.hist_bins = static_cast<int>(parse_int(kv));
    else if (k == "hist_lo") cfg.hist_lo = parse_double(kv);
    else if (k == "hist_hi") cfg.hist_hi = parse_double(kv);
    else if (k == "mad_batch") cfg.mad_batch = static_cast<int>(parse_int(kv));
    else bad(kv, "unknown key '" + k + "'");
}

// ctx prefixes the location tag, e.g. "checkpoint config " for embedded text.
std::vector<KeyValue> stream_pairs(std::istream& in, const std::string& ctx) {
    std::vector<KeyValue> pairs;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::string t = trim(line);
        if (t.empty()) continue;
        size_t eq = t.find('=');
        std::string where = ctx + "line " + std::to_string(lineno);
        if (eq == std::string::npos)
            fail(Error::Kind::config,
                 "config " + where + ": expected 'key = value', got '" + t + "'");
        KeyValue kv{trim(t.substr(0, eq)), trim(t.substr(eq + 1)), where};
        if (kv.key.empty())
            fail(Error::Kind::config, "config " + where + ": missing key before '='");
        pairs.push_back(std::move(kv));
    }
    return pairs;
}

std::vector<KeyValue> flag_pairs(const std::vector<std::string>& args) {
    std::vector<KeyValue> pairs;
    for (size_t i = 0; i < args.size(); ++i) {
        const std::string& a = args[i];
        if (a.rfind("--", 0) != 0)
            fail(Error::Kind::config, "expected --key, got '" + a + "'");
        std::string body = a.substr(2), key, value;
        size_t eq = body.find('=');
        if (eq != std::string::npos) {
            key = body.substr(0, eq);
            value = body.substr(eq + 1);
        } else {
            key = body;
            if (i + 1 >= args.size())
                fail(Error::Kind::config, "flag --" + key + " is missing a value");
            value = args[++i];
        }
        pairs.push_back({key, value, "flag --" + key});
    }
    return pairs;
}

} // namespace

RunConfig parse_run_config(const std::string& file_path,
                           const std::vector<std::string>& flag_args) {
    return parse_run_config_layers("", file_path, flag_args);
}

RunConfig parse_run_config_layers(const std::string& base_text, const std::string& file_path,
                                  const std::vector<std::string>& flag_args) {
    std::vector<KeyValue> pairs;
    if (!base_text.empty()) {
        std::istringstream base(base_text);
        pairs = stream_pairs(base, "checkpoint config ");
    }
    if (!file_path.empty()) {
        std::ifstream in(file_path);
        if (!in) fail(Error::Kind::missing, "config file not found: " + file_path);
        auto file = stream_pairs(in, "");
        pairs.insert(pairs.end(), file.begin(), file.end());
    }
    auto flags = flag_pairs(flag_args);
    pairs.insert(pairs.end(), flags.begin(), flags.end());

    RunConfig cfg;
    // the last preset mention wins, and it applies before everything else
    for (const auto& kv : pairs)
        if (kv.key == "preset") {
            try {
                cfg.model = model_preset(kv.value);
            } catch (const Error& e) {
                bad(kv, e.what());
            }
            cfg.preset = kv.value;
        }
    bool norm_set = false;
    for (const auto& kv : pairs) apply(cfg, kv, &norm_set);

    // dataset geometry mirrors the model; normalization defaults depend on
    // the source unless given explicitly
    cfg.data.seed = cfg.seed;
    cfg.data.image_px = cfg.model.image_px;
    cfg.data.num_classes = cfg.model.num_classes;
    if (!norm_set)
        cfg.data.norm = cfg.data.kind == DataKind::synthetic ? NormConstants::identity()
                        : cfg.model.num_classes == 100       ? NormConstants::cifar100()
                                                             : NormConstants::cifar10();
    if (cfg.out_dir.empty()) {
        const char* env = std::getenv("VITP_OUT_DIR");
        cfg.out_dir = env && *env ? env : "run";
    }
    cfg.validate();
    return cfg;
}

void RunConfig::validate() const {
    model.validate();
    opt.validate();
    if (data.kind == DataKind::cifar_binary) {
        if (model.image_px != 32)
            fail(Error::Kind::config, "cifar-binary images are 32x32, config says image_px = " +
                                          std::to_string(model.image_px));
        if (model.num_classes != 10 && model.num_classes != 100)
            fail(Error::Kind::config, "cifar-binary needs num_classes 10 or 100");
        if (data.path.empty())
            fail(Error::Kind::config, "cifar-binary needs data_path");
    } else if (data.n < 2) {
        fail(Error::Kind::config, "synthetic dataset needs data_n >= 2");
    }
    for (double s : data.norm.stdev)
        if (s <= 0.0) fail(Error::Kind::config, "norm_std entries must be positive");
    if (eval_fraction <= 0.0 || eval_fraction >= 1.0)
        fail(Error::Kind::config, "eval_fraction must lie in (0,1)");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0)
        fail(Error::Kind::config, "label_smoothing must lie in [0,1)");
    if (max_steps < 0 || checkpoint_every < 0)
        fail(Error::Kind::config, "max_steps and checkpoint_every must be nonnegative");
    if (hist_bins < 2 || !(hist_lo < hist_hi))
        fail(Error::Kind::config, "histogram needs hist_bins >= 2 and hist_lo < hist_hi");
    if (mad_batch < 1) fail(Error::Kind::config, "mad_batch must be >= 1");
    if (ablate_axis != "variants" && ablate_axis != "suppression")
        fail(Error::Kind::config, "ablate_axis must be variants or suppression, got '" + ablate_axis +
                                      "'");
}

std::string RunConfig::resolved_text() const {
    std::string s = "# resolved configuration\n";
    auto kv = [&s](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };
    auto kd = [&](const std::string& k, double v) { kv(k, fmt_double(v)); };
    auto ki = [&](const std::string& k, int64_t v) { kv(k, std::to_string(v)); };
    auto kb = [&](const std::string& k, bool v) { kv(k, v ? "true" : "false"); };
    kv("preset", preset);
    ki("image_px", model.image_px);
    ki("patch_px", model.patch_px);
    ki("depth", model.depth);
    ki("embed_dim", model.embed_dim);
    ki("heads", model.heads);
    kd("mlp_ratio", model.mlp_ratio);
    ki("num_classes", model.num_classes);
    kv("bias_mode", to_string(model.bias_mode));
    kb("learnable_bias", model.learnable_bias);
    kb("decay_enabled", model.decay_enabled);
    kd("suppression", model.suppression_v);
    kv("mrfa_mode", to_string(model.mrfa_mode));
    kv("gelu", model.gelu_kind == GeluKind::erf ? "erf" : "tanh");
    kd("dropout", model.dropout);
    kd("drop_path", model.drop_path);
    ki("batch_size", opt.batch_size);
    kd("base_lr", opt.peak_lr()); // resolved, even when the rule derived it
    kd("beta1", opt.beta1);
    kd("beta2", opt.beta2);
    kd("adam_eps", opt.eps);
    kd("weight_decay", opt.weight_decay);
    kd("bias_decay", opt.resolved_bias_decay());
    ki("warmup_epochs", opt.warmup_epochs);
    ki("epochs", opt.total_epochs);
    kd("grad_clip", opt.grad_clip);
    kv("data_kind", to_string(data.kind));
    if (!data.path.empty()) kv("data_path", data.path);
    ki("data_n", data.n);
    kv("norm_mean", fmt_double(data.norm.mean[0]) + "," + fmt_double(data.norm.mean[1]) + "," +
                        fmt_double(data.norm.mean[2]));
    kv("norm_std", fmt_double(data.norm.stdev[0]) + "," + fmt_double(data.norm.stdev[1]) + "," +
                       fmt_double(data.norm.stdev[2]));
    ki("seed", static_cast<int64_t>(seed));
    kv("out_dir", out_dir);
    ki("max_steps", max_steps);
    ki("checkpoint_every", checkpoint_every);
    kb("augment", augment);
    kd("label_smoothing", label_smoothing);
    kd("eval_fraction", eval_fraction);
    if (!resume.empty()) kv("resume", resume);
    if (!checkpoint.empty()) kv("checkpoint", checkpoint);
    kv("ablate_axis", ablate_axis);
    kb("parallel", parallel);
    ki("hist_bins", hist_bins);
    kd("hist_lo", hist_lo);
    kd("hist_hi", hist_hi);
    ki("mad_batch", mad_batch);
    return s;
}

} // namespace vitp
