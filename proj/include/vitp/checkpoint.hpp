#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vitp/model.hpp"
#include "vitp/optimizer.hpp"

namespace vitp {

// Versioned binary container for a training state. Layout, all little-endian:
//   8 bytes  magic "VITPCKPT"
//   u32      format version (currently 1)
//   u32+text resolved config snapshot
//   u32+text PRNG algorithm id
//   u64      master seed (streams are position-keyed, so id + seed + step is
//            the complete generator state)
//   u64      global step
//   u64      optimizer steps taken
//   u32      tensor count, then per tensor:
//              u32+name, u32 ndim, u64 dims[ndim], f32 data
//   8 bytes  end marker "VITPEND\0"
// Optimizer moments ride along as tensors named adam.m.<param> / adam.v.<param>.

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr const char* kPrngId = "mt19937-position-keyed";

struct CheckpointTensor {
    std::vector<int64_t> shape;
    std::vector<float> data;
};

struct CheckpointData {
    uint32_t version = 0;
    std::string config_text;
    std::string prng_id;
    uint64_t seed = 0;
    uint64_t step = 0;
    uint64_t adam_steps = 0;
    std::vector<std::pair<std::string, CheckpointTensor>> tensors;

    const CheckpointTensor* find(const std::string& name) const;
};

// opt may be null for parameter-only snapshots.
void save_checkpoint(const std::string& path, const std::string& config_text, uint64_t seed,
                     uint64_t step, const std::vector<ParamT<float>>& params, const AdamW* opt);

CheckpointData load_checkpoint(const std::string& path);

// Copies checkpoint tensors into the live parameter handles. Every parameter
// must appear with a matching shape, and every non-moment checkpoint tensor
// must land somewhere; either violation is a shape error naming the tensor.
void restore_model(const CheckpointData& ckpt, std::vector<ParamT<float>>& params);

// Restores moment vectors and the step counter.
void restore_optimizer(const CheckpointData& ckpt, AdamW& opt);

} // namespace vitp
