#pragma once

#include <string>
#include <vector>

#include "vitp/config.hpp"
#include "vitp/data.hpp"
#include "vitp/model.hpp"

namespace vitp {

struct TrainResult {
    int64_t steps_run = 0;       // steps executed by this invocation
    int64_t final_step = 0;      // global step after the run
    double initial_loss = 0.0;   // first executed step (0 if none ran)
    double final_loss = 0.0;     // last executed step
    double final_eval_acc = 0.0; // holdout accuracy of the final weights
    std::string checkpoint_path; // the final.ckpt written at the end
};

// Train/holdout pair for a source. CIFAR uses its published train/test
// split; the synthetic generator is split by index, first (1 - f) train,
// last f holdout, which keeps both sides stratified since labels cycle.
struct SplitData {
    Dataset train, holdout;
};

SplitData load_split(const RunConfig& cfg);

// Top-1 accuracy over the whole dataset, batched, no augmentation.
double evaluate(ViTPModel& model, const Dataset& data, int batch_size);

// Mean |v| over the raw focal bias tables; 0 when the model has none.
double bias_mean_abs(const ViTPModel& model);

// Runs the configured training job. Writes into cfg.out_dir:
//   resolved.cfg            the full configuration, reparseable
//   step.csv                step,lr,train_loss  (one row per executed step)
//   epoch.csv               epoch,eval_acc,bias_mean_abs  (at epoch ends)
//   checkpoints/step_*.ckpt at the checkpoint_every cadence
//   checkpoints/final.ckpt  always
// A non-finite loss aborts with diagnostics on stderr. Resuming restores
// weights, moments and the global step from cfg.resume and continues on
// the same deterministic sample/augmentation/dropout streams, so an
// interrupted run reproduces the uninterrupted one exactly.
TrainResult train_loop(const RunConfig& cfg);

// Trains one run per ablation cell under cfg.out_dir/<cell>/ and collects
// results into cfg.out_dir/ablation.csv. Axis "variants" crosses the three
// window schedules with {fixed, learnable, learnable-decay} bias variants;
// axis "suppression" sweeps the init suppression value over
// {-100, -50, -10, -5, -1, 0}. Returns the cell directories in run order.
std::vector<std::string> run_ablation(const RunConfig& cfg);

} // namespace vitp
