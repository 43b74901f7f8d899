#include "vitp/train.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include "vitp/checkpoint.hpp"
#include "vitp/ops.hpp"
#include "vitp/optimizer.hpp"

namespace fs = std::filesystem;

namespace vitp {

namespace {

std::string fmt_row(const char* fmt, double a, double b) {
    char buf[96];
    std::snprintf(buf, sizeof buf, fmt, a, b);
    return buf;
}

// Splits by index without reshuffling: labels cycle through the classes,
// so contiguous ranges stay close to uniform over classes.
SplitData split_by_fraction(Dataset full, double holdout_fraction) {
    auto n = full.size();
    auto hold_n = static_cast<size_t>(static_cast<double>(n) * holdout_fraction);
    hold_n = std::clamp<size_t>(hold_n, 1, n - 1);
    size_t train_n = n - hold_n, floats = full.image_floats();
    SplitData out;
    out.train.image_px = out.holdout.image_px = full.image_px;
    out.train.num_classes = out.holdout.num_classes = full.num_classes;
    out.train.images.assign(full.images.begin(),
                            full.images.begin() + static_cast<int64_t>(train_n * floats));
    out.train.labels.assign(full.labels.begin(), full.labels.begin() + static_cast<int64_t>(train_n));
    out.holdout.images.assign(full.images.begin() + static_cast<int64_t>(train_n * floats),
                              full.images.end());
    out.holdout.labels.assign(full.labels.begin() + static_cast<int64_t>(train_n), full.labels.end());
    return out;
}

// Gathers one batch into a [b x 3*s*s] tensor, applying the keyed
// augmentation draws when enabled.
Tensor gather_batch(const Dataset& data, const std::vector<int64_t>& order, size_t pos, int bs,
                    const RunConfig& cfg, int64_t epoch, std::vector<int>* labels,
                    std::vector<int64_t>* picked) {
    int s = data.image_px;
    auto floats = data.image_floats();
    Tensor images = Tensor::zeros({bs, static_cast<int64_t>(floats)});
    float* dst = images.value().data();
    labels->clear();
    picked->clear();
    for (int j = 0; j < bs; ++j) {
        int64_t idx = order[(pos + static_cast<size_t>(j)) % order.size()];
        picked->push_back(idx);
        labels->push_back(data.labels[static_cast<size_t>(idx)]);
        float* img = dst + static_cast<size_t>(j) * floats;
        std::copy_n(data.image(static_cast<size_t>(idx)), floats, img);
        if (cfg.augment) {
            auto rng = sample_rng(cfg.seed, epoch, idx);
            augment_image(img, s, rng);
        }
    }
    return images;
}

void dump_divergence(int64_t step, const std::vector<int64_t>& batch, ViTPModel& model) {
    std::fprintf(stderr, "loss is not finite at step %lld\nbatch indices:",
                 static_cast<long long>(step));
    for (int64_t i : batch) std::fprintf(stderr, " %lld", static_cast<long long>(i));
    std::fprintf(stderr, "\nparameter L2 norms:\n");
    for (const auto& p : model.parameters()) {
        double sq = 0.0;
        for (float v : p.tensor.value()) sq += static_cast<double>(v) * v;
        std::fprintf(stderr, "  %-24s %.6g\n", p.name.c_str(), std::sqrt(sq));
    }
}

std::string checkpoint_name(int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step_%06lld.ckpt", static_cast<long long>(step));
    return buf;
}

} // namespace

SplitData load_split(const RunConfig& cfg) {
    // geometry and seed always follow the model / run, even for configs
    // assembled in code rather than parsed
    DatasetSource src = cfg.data;
    src.seed = cfg.seed;
    src.image_px = cfg.model.image_px;
    src.num_classes = cfg.model.num_classes;
    if (src.kind == DataKind::cifar_binary) {
        SplitData out;
        out.train = load_dataset(src, true);
        out.holdout = load_dataset(src, false);
        return out;
    }
    return split_by_fraction(load_dataset(src, true), cfg.eval_fraction);
}

double evaluate(ViTPModel& model, const Dataset& data, int batch_size) {
    if (data.size() == 0) fail(Error::Kind::usage, "evaluate: empty dataset");
    auto floats = data.image_floats();
    size_t correct = 0, done = 0;
    while (done < data.size()) {
        auto b = std::min<size_t>(static_cast<size_t>(batch_size), data.size() - done);
        Tensor images = Tensor::zeros({static_cast<int64_t>(b), static_cast<int64_t>(floats)});
        std::copy_n(data.image(done), b * floats, images.value().data());
        auto logits = model.forward(nullptr, images);
        const float* lv = logits.value().data();
        auto c = logits.dim(1);
        for (size_t j = 0; j < b; ++j) {
            const float* row = lv + static_cast<int64_t>(j) * c;
            int best = static_cast<int>(std::max_element(row, row + c) - row);
            if (best == data.labels[done + j]) ++correct;
        }
        done += b;
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

double bias_mean_abs(const ViTPModel& model) {
    double sum = 0.0;
    int64_t count = 0;
    for (const auto& layer : model.bias_params())
        for (const auto& t : layer) {
            for (float v : t.value()) sum += std::abs(static_cast<double>(v));
            count += t.numel();
        }
    return count ? sum / static_cast<double>(count) : 0.0;
}

TrainResult train_loop(const RunConfig& cfg) {
    cfg.validate();
    fs::path out(cfg.out_dir);
    fs::create_directories(out / "checkpoints");
    {
        std::ofstream rc(out / "resolved.cfg");
        rc << cfg.resolved_text();
        if (!rc) fail(Error::Kind::internal, "cannot write " + (out / "resolved.cfg").string());
    }

    SplitData data = load_split(cfg);
    auto train_n = data.train.size();
    int bs = std::min<int>(cfg.opt.batch_size, static_cast<int>(train_n));

    OptimizerConfig ocfg = cfg.opt;
    ocfg.steps_per_epoch = std::max<int64_t>(1, static_cast<int64_t>(train_n) / bs);
    int64_t spe = ocfg.steps_per_epoch;
    int64_t end_step = ocfg.total_steps();
    if (cfg.max_steps > 0) end_step = std::min(end_step, cfg.max_steps);

    ViTPModel model(cfg.model, cfg.seed);
    AdamW opt(ocfg, model.parameters());

    int64_t start_step = 0;
    if (!cfg.resume.empty()) {
        CheckpointData ckpt = load_checkpoint(cfg.resume);
        if (ckpt.prng_id != kPrngId)
            fail(Error::Kind::version, "checkpoint PRNG scheme '" + ckpt.prng_id +
                                           "' does not match this build ('" + kPrngId + "')");
        restore_model(ckpt, model.parameters());
        restore_optimizer(ckpt, opt);
        start_step = static_cast<int64_t>(ckpt.step);
    }

    std::ofstream step_csv(out / "step.csv");
    std::ofstream epoch_csv(out / "epoch.csv");
    step_csv << "step,lr,train_loss\n";
    epoch_csv << "epoch,eval_acc,bias_mean_abs\n";

    std::string config_text = cfg.resolved_text();
    TrainResult res;
    std::vector<int> labels;
    std::vector<int64_t> picked, order;
    int64_t order_epoch = -1;

    for (int64_t step = start_step; step < end_step; ++step) {
        int64_t epoch = step / spe;
        if (epoch != order_epoch) {
            order = epoch_order(train_n, cfg.seed, epoch);
            order_epoch = epoch;
        }
        size_t pos = static_cast<size_t>(step % spe) * static_cast<size_t>(bs);
        Tensor images = gather_batch(data.train, order, pos, bs, cfg, epoch, &labels, &picked);

        opt.zero_grad();
        Tape tape;
        DropState drop{detail::mix_key(cfg.seed, static_cast<uint64_t>(step)), true};
        auto logits = model.forward(&tape, images, nullptr, drop);
        auto loss = cross_entropy_mean(&tape, logits, labels, static_cast<float>(cfg.label_smoothing));
        double loss_v = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(loss_v)) {
            dump_divergence(step, picked, model);
            fail(Error::Kind::internal, "training diverged at step " + std::to_string(step));
        }
        tape.backward(loss);
        double lr = lr_at(step, ocfg);
        opt.step(lr);

        if (step == start_step) res.initial_loss = loss_v;
        res.final_loss = loss_v;
        ++res.steps_run;
        step_csv << step << "," << fmt_row("%.10g,%.10g", lr, loss_v) << "\n";

        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < end_step) {
            auto p = out / "checkpoints" / checkpoint_name(step + 1);
            save_checkpoint(p.string(), config_text, cfg.seed, static_cast<uint64_t>(step + 1),
                            model.parameters(), &opt);
        }
        if ((step + 1) % spe == 0) {
            double acc = evaluate(model, data.holdout, bs);
            epoch_csv << epoch << "," << fmt_row("%.10g,%.10g", acc, bias_mean_abs(model)) << "\n";
        }
    }

    res.final_step = std::max(start_step, end_step);
    res.final_eval_acc = evaluate(model, data.holdout, bs);
    auto final_path = out / "checkpoints" / "final.ckpt";
    save_checkpoint(final_path.string(), config_text, cfg.seed,
                    static_cast<uint64_t>(res.final_step), model.parameters(), &opt);
    res.checkpoint_path = final_path.string();
    if (!step_csv || !epoch_csv)
        fail(Error::Kind::internal, "failed writing training logs under " + cfg.out_dir);
    return res;
}

namespace {

struct Cell {
    std::string name;
    RunConfig cfg;
};

std::vector<Cell> ablation_cells(const RunConfig& base) {
    std::vector<Cell> cells;
    if (base.ablate_axis == "variants") {
        const ScheduleMode modes[] = {ScheduleMode::mrfa_d, ScheduleMode::mrfa_w,
                                      ScheduleMode::mrfa_dw};
        const char* variants[] = {"fixed", "learnable", "learnable-decay"};
        for (auto mode : modes)
            for (const char* variant : variants) {
                Cell cell{std::string(to_string(mode)) + "_" + variant, base};
                cell.cfg.model.mrfa_mode = mode;
                cell.cfg.model.learnable_bias = std::string(variant) != "fixed";
                cell.cfg.model.decay_enabled = std::string(variant) == "learnable-decay";
                cells.push_back(std::move(cell));
            }
    } else {
        for (double v : {-100.0, -50.0, -10.0, -5.0, -1.0, 0.0}) {
            char name[24];
            std::snprintf(name, sizeof name, "v_%g", v);
            Cell cell{name, base};
            cell.cfg.model.suppression_v = v;
            cells.push_back(std::move(cell));
        }
    }
    for (size_t i = 0; i < cells.size(); ++i) {
        auto& c = cells[i].cfg;
        c.out_dir = (fs::path(base.out_dir) / cells[i].name).string();
        c.seed = detail::mix_key(base.seed, i);
    }
    return cells;
}

} // namespace

std::vector<std::string> run_ablation(const RunConfig& cfg) {
    cfg.validate();
    auto cells = ablation_cells(cfg);
    std::vector<TrainResult> results(cells.size());

    if (cfg.parallel && cells.size() > 1) {
        std::atomic<size_t> next{0};
        std::exception_ptr first_error;
        std::mutex err_mu;
        auto worker = [&] {
            for (size_t i = next.fetch_add(1); i < cells.size(); i = next.fetch_add(1)) {
                try {
                    results[i] = train_loop(cells[i].cfg);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(err_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        };
        size_t nthreads = std::min<size_t>(cells.size(), std::thread::hardware_concurrency());
        std::vector<std::thread> pool;
        for (size_t i = 0; i < std::max<size_t>(nthreads, 1); ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
        if (first_error) std::rethrow_exception(first_error);
    } else {
        for (size_t i = 0; i < cells.size(); ++i) results[i] = train_loop(cells[i].cfg);
    }

    fs::path out(cfg.out_dir);
    std::ofstream summary(out / "ablation.csv");
    summary << "run,steps,final_loss,eval_acc\n";
    std::vector<std::string> dirs;
    for (size_t i = 0; i < cells.size(); ++i) {
        summary << cells[i].name << "," << results[i].steps_run << ","
                << fmt_row("%.10g,%.10g", results[i].final_loss, results[i].final_eval_acc) << "\n";
        dirs.push_back(cells[i].cfg.out_dir);
    }
    if (!summary) fail(Error::Kind::internal, "failed writing " + (out / "ablation.csv").string());
    return dirs;
}

} // namespace vitp
