#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vitp/data.hpp"
#include "vitp/model.hpp"
#include "vitp/optimizer.hpp"

namespace vitp {

// Everything a run needs, assembled from defaults, an optional `key = value`
// config file (# comments), and --key value flag overrides, in that order.
// A preset key is applied before the other keys regardless of where it
// appears, so explicit dimensions always win over the preset.
struct RunConfig {
    std::string preset = "desk-tiny";
    ModelConfig model = model_preset("desk-tiny");
    OptimizerConfig opt;
    DatasetSource data;

    uint64_t seed = 1;
    std::string out_dir;          // empty -> $VITP_OUT_DIR, then "run"
    int64_t max_steps = 0;        // 0 = the epoch budget decides
    int64_t checkpoint_every = 0; // in steps; 0 = final checkpoint only
    bool augment = false;
    double label_smoothing = 0.0;
    double eval_fraction = 0.2; // synthetic holdout share
    std::string resume;         // checkpoint to continue from
    std::string checkpoint;     // input for analysis subcommands
    std::string ablate_axis = "variants"; // variants | suppression
    bool parallel = false;
    int hist_bins = 22;
    double hist_lo = -105.0, hist_hi = 5.0;
    int mad_batch = 8;

    void validate() const;

    // Canonical, re-parseable listing of every key. Parsing this text back
    // yields an identical configuration.
    std::string resolved_text() const;
};

// file_path may be empty (flags-only invocation). Flags are --key value or
// --key=value pairs. Unknown keys, unparseable values, and invariant
// violations are config errors naming the key and source line.
RunConfig parse_run_config(const std::string& file_path,
                           const std::vector<std::string>& flag_args);

// Same resolution, seeded with a base snapshot (the text a checkpoint
// carries); the file and flags override it.
RunConfig parse_run_config_layers(const std::string& base_text, const std::string& file_path,
                                  const std::vector<std::string>& flag_args);

} // namespace vitp
