#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "vitp/errors.hpp"
#include "vitp/rng.hpp"

namespace vitp {

// Per-channel pixel statistics used to normalize decoded images. These are
// data constants recorded in the run config, not learned quantities. The
// named factories carry the widely used CIFAR training statistics.
struct NormConstants {
    std::array<double, 3> mean{0.0, 0.0, 0.0};
    std::array<double, 3> stdev{1.0, 1.0, 1.0};

    static NormConstants identity() { return {}; }
    static NormConstants cifar10() {
        return {{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}};
    }
    static NormConstants cifar100() {
        return {{0.5071, 0.4865, 0.4409}, {0.2673, 0.2564, 0.2762}};
    }
};

// In-memory dataset: n images of 3 channel-major planes, already normalized.
struct Dataset {
    int image_px = 0;
    int num_classes = 0;
    std::vector<float> images; // size() * 3 * image_px * image_px
    std::vector<int> labels;

    size_t size() const { return labels.size(); }
    size_t image_floats() const { return 3u * static_cast<size_t>(image_px) * image_px; }
    const float* image(size_t i) const { return images.data() + i * image_floats(); }
};

enum class DataKind { synthetic, cifar_binary };

std::string to_string(DataKind kind);
DataKind data_kind_from_string(const std::string& s);

// Where samples come from. For cifar-binary, `path` is the directory holding
// the standard batch files and num_classes selects the 3073-byte (CIFAR-10)
// or 3074-byte (CIFAR-100, coarse+fine labels) record layout. For synthetic,
// the generator is fully determined by (seed, n, num_classes, image_px) and
// the images are emitted pre-normalized (identity constants).
struct DatasetSource {
    DataKind kind = DataKind::synthetic;
    std::string path;
    uint64_t seed = 1;
    int n = 2000;
    int image_px = 16;
    int num_classes = 10;
    NormConstants norm = NormConstants::identity();
};

// Loads the train or test split from the standard CIFAR binary batches:
// data_batch_1..5.bin / test_batch.bin for 10 classes, train.bin / test.bin
// for 100. Pixels decode as planar R,G,B rows and normalize per channel.
Dataset load_cifar_binary(const std::string& dir, int num_classes, bool train,
                          const NormConstants& norm);

// Deterministic class-dependent bars: class c draws a bright 2-pixel bar
// (horizontal for even c, vertical for odd) at a class-determined position
// in channel c%3, over Gaussian background noise. Labels are i % classes,
// so class counts differ by at most one.
Dataset synth_dataset(uint64_t seed, int n, int classes, int image_px);

// Resolves a DatasetSource; train selects the training split for cifar
// (synthetic splitting is the harness's concern).
Dataset load_dataset(const DatasetSource& src, bool train);

// In-place horizontal mirror of a 3-plane channel-major image.
void hflip(float* img, int s);

// Reflect-pads each plane by `pad` pixels on every side.
std::vector<float> pad_reflect(const float* img, int s, int pad);

// Copies the s x s crop anchored at (dy, dx) out of a reflect-padded image.
void crop_into(float* dst, const std::vector<float>& padded, int s, int pad, int dy, int dx);

// Training-time augmentation: horizontal flip with p=0.5, then pad-4 reflect
// and a random crop back to s x s. Evaluation skips this entirely.
void augment_image(float* img, int s, std::mt19937_64& rng);

// Stable per-sample stream: the augmentation draws for (seed, epoch, index)
// never depend on batch composition or worker scheduling.
inline std::mt19937_64 sample_rng(uint64_t seed, int64_t epoch, int64_t index) {
    return std::mt19937_64(
        detail::mix_key(detail::mix_key(seed, static_cast<uint64_t>(epoch)) ^ 0x61756758ull,
                        static_cast<uint64_t>(index)));
}

// Deterministic shuffle defining epoch batch composition.
std::vector<int64_t> epoch_order(size_t n, uint64_t seed, int64_t epoch);

} // namespace vitp
