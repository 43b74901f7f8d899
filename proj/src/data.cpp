#include "vitp/data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace vitp {

std::string to_string(DataKind kind) {
    return kind == DataKind::synthetic ? "synthetic" : "cifar-binary";
}

DataKind data_kind_from_string(const std::string& s) {
    if (s == "synthetic") return DataKind::synthetic;
    if (s == "cifar-binary") return DataKind::cifar_binary;
    fail(Error::Kind::config, "unknown data kind '" + s + "' (synthetic | cifar-binary)");
}

namespace {

constexpr int kCifarPx = 32;
constexpr size_t kCifarPixels = 3 * 32 * 32;

void decode_cifar_file(const std::string& path, int num_classes, const NormConstants& norm,
                       Dataset& out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Error::Kind::missing, "cifar batch file not found: " + path);
    std::vector<unsigned char> raw((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
    size_t label_bytes = num_classes == 100 ? 2 : 1;
    size_t record = label_bytes + kCifarPixels;
    if (raw.empty() || raw.size() % record != 0)
        fail(Error::Kind::format, path + ": size " + std::to_string(raw.size()) +
                                      " is not a multiple of the " + std::to_string(record) +
                                      "-byte record");
    size_t records = raw.size() / record;
    out.images.reserve(out.images.size() + records * kCifarPixels);
    out.labels.reserve(out.labels.size() + records);
    for (size_t r = 0; r < records; ++r) {
        const unsigned char* rec = raw.data() + r * record;
        // CIFAR-100 records carry (coarse, fine); the fine label is the class
        int label = rec[label_bytes - 1];
        if (label >= num_classes)
            fail(Error::Kind::format, path + ": record " + std::to_string(r) + " label " +
                                          std::to_string(label) + " out of range [0," +
                                          std::to_string(num_classes) + ")");
        out.labels.push_back(label);
        const unsigned char* px = rec + label_bytes;
        for (int c = 0; c < 3; ++c) {
            auto mean = static_cast<float>(norm.mean[static_cast<size_t>(c)]);
            auto inv = static_cast<float>(1.0 / norm.stdev[static_cast<size_t>(c)]);
            for (size_t i = 0; i < kCifarPixels / 3; ++i) {
                float v = static_cast<float>(px[static_cast<size_t>(c) * (kCifarPixels / 3) + i]) /
                          255.0f;
                out.images.push_back((v - mean) * inv);
            }
        }
    }
}

} // namespace

Dataset load_cifar_binary(const std::string& dir, int num_classes, bool train,
                          const NormConstants& norm) {
    if (num_classes != 10 && num_classes != 100)
        fail(Error::Kind::config,
             "cifar-binary supports 10 or 100 classes, got " + std::to_string(num_classes));
    std::vector<std::string> files;
    if (num_classes == 10) {
        if (train)
            for (int i = 1; i <= 5; ++i)
                files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
        else
            files.push_back(dir + "/test_batch.bin");
    } else {
        files.push_back(dir + (train ? "/train.bin" : "/test.bin"));
    }
    Dataset out;
    out.image_px = kCifarPx;
    out.num_classes = num_classes;
    for (const auto& f : files) decode_cifar_file(f, num_classes, norm, out);
    return out;
}

Dataset synth_dataset(uint64_t seed, int n, int classes, int image_px) {
    if (classes < 2) fail(Error::Kind::config, "synthetic dataset needs >= 2 classes");
    if (n < 1 || image_px < 4)
        fail(Error::Kind::config, "synthetic dataset needs n >= 1 and image_px >= 4");
    Dataset out;
    out.image_px = image_px;
    out.num_classes = classes;
    size_t plane = static_cast<size_t>(image_px) * image_px;
    out.images.resize(static_cast<size_t>(n) * 3 * plane);
    out.labels.resize(static_cast<size_t>(n));
    int bands_h = (classes + 1) / 2, bands_v = classes / 2;
    for (int i = 0; i < n; ++i) {
        int label = i % classes;
        out.labels[static_cast<size_t>(i)] = label;
        // a fresh stream per index keeps the dataset independent of n
        std::mt19937_64 rng(detail::mix_key(seed, static_cast<uint64_t>(i)));
        std::normal_distribution<double> noise(0.0, 0.25);
        float* img = out.images.data() + static_cast<size_t>(i) * 3 * plane;
        for (size_t k = 0; k < 3 * plane; ++k) img[k] = static_cast<float>(noise(rng));
        bool horizontal = label % 2 == 0;
        int band = label / 2, bands = horizontal ? bands_h : bands_v;
        int lo = 0, hi = image_px - 2; // bar is 2 pixels thick
        int pos = bands > 1 ? lo + band * (hi - lo) / (bands - 1) : (lo + hi) / 2;
        std::uniform_int_distribution<int> jitter(-1, 1);
        pos = std::clamp(pos + jitter(rng), lo, hi);
        float* chan = img + static_cast<size_t>(label % 3) * plane;
        for (int t = 0; t < 2; ++t)
            for (int k = 0; k < image_px; ++k) {
                size_t at = horizontal ? static_cast<size_t>(pos + t) * image_px + k
                                       : static_cast<size_t>(k) * image_px + (pos + t);
                chan[at] += 2.0f;
            }
    }
    return out;
}

Dataset load_dataset(const DatasetSource& src, bool train) {
    if (src.kind == DataKind::synthetic)
        return synth_dataset(src.seed, src.n, src.num_classes, src.image_px);
    return load_cifar_binary(src.path, src.num_classes, train, src.norm);
}

void hflip(float* img, int s) {
    for (int c = 0; c < 3; ++c) {
        float* plane = img + static_cast<size_t>(c) * s * s;
        for (int r = 0; r < s; ++r)
            std::reverse(plane + static_cast<size_t>(r) * s, plane + static_cast<size_t>(r) * s + s);
    }
}

std::vector<float> pad_reflect(const float* img, int s, int pad) {
    if (pad >= s)
        fail(Error::Kind::usage,
             "reflect pad " + std::to_string(pad) + " needs image side > pad, got " +
                 std::to_string(s));
    int ps = s + 2 * pad;
    std::vector<float> out(static_cast<size_t>(3) * ps * ps);
    auto reflect = [&](int x) {
        if (x < 0) x = -x;
        if (x >= s) x = 2 * s - 2 - x;
        return x;
    };
    for (int c = 0; c < 3; ++c) {
        const float* src = img + static_cast<size_t>(c) * s * s;
        float* dst = out.data() + static_cast<size_t>(c) * ps * ps;
        for (int r = 0; r < ps; ++r)
            for (int k = 0; k < ps; ++k)
                dst[static_cast<size_t>(r) * ps + k] =
                    src[static_cast<size_t>(reflect(r - pad)) * s + reflect(k - pad)];
    }
    return out;
}

void crop_into(float* dst, const std::vector<float>& padded, int s, int pad, int dy, int dx) {
    int ps = s + 2 * pad;
    if (dy < 0 || dx < 0 || dy > 2 * pad || dx > 2 * pad)
        fail(Error::Kind::usage, "crop offset (" + std::to_string(dy) + "," + std::to_string(dx) +
                                     ") outside [0," + std::to_string(2 * pad) + "]");
    for (int c = 0; c < 3; ++c) {
        const float* src = padded.data() + static_cast<size_t>(c) * ps * ps;
        float* out = dst + static_cast<size_t>(c) * s * s;
        for (int r = 0; r < s; ++r)
            for (int k = 0; k < s; ++k)
                out[static_cast<size_t>(r) * s + k] =
                    src[static_cast<size_t>(r + dy) * ps + (k + dx)];
    }
}

void augment_image(float* img, int s, std::mt19937_64& rng) {
    if (std::uniform_int_distribution<int>(0, 1)(rng) == 1) hflip(img, s);
    auto padded = pad_reflect(img, s, 4);
    std::uniform_int_distribution<int> off(0, 8);
    int dy = off(rng), dx = off(rng);
    crop_into(img, padded, s, 4, dy, dx);
}

std::vector<int64_t> epoch_order(size_t n, uint64_t seed, int64_t epoch) {
    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), int64_t(0));
    std::mt19937_64 rng(detail::mix_key(seed ^ 0x73687566ull, static_cast<uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

} // namespace vitp
