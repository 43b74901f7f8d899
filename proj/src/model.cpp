#include "vitp/model.hpp"

namespace vitp {

const char* to_string(BiasMode mode) {
    switch (mode) {
        case BiasMode::none: return "none";
        case BiasMode::absolute: return "absolute";
        case BiasMode::relative: return "relative";
    }
    return "?";
}

BiasMode bias_mode_from_string(const std::string& s) {
    if (s == "none") return BiasMode::none;
    if (s == "absolute") return BiasMode::absolute;
    if (s == "relative") return BiasMode::relative;
    fail(Error::Kind::config, "unknown bias mode '" + s + "' (expected none, absolute or relative)");
}

void ModelConfig::validate() const {
    if (image_px < 1 || patch_px < 1)
        fail(Error::Kind::config, "image_px and patch_px must be positive");
    if (image_px % patch_px != 0)
        fail(Error::Kind::config, "image size " + std::to_string(image_px) +
                                      " is not divisible by patch size " + std::to_string(patch_px));
    if (patches_per_side() < 2)
        fail(Error::Kind::config, "need at least a 2x2 patch grid, got " +
                                      std::to_string(patches_per_side()) + "x" +
                                      std::to_string(patches_per_side()));
    if (depth < 1) fail(Error::Kind::config, "depth must be >= 1");
    if (embed_dim < 1 || heads < 1)
        fail(Error::Kind::config, "embed_dim and heads must be positive");
    if (embed_dim % heads != 0)
        fail(Error::Kind::config, "embed_dim " + std::to_string(embed_dim) +
                                      " is not divisible by heads " + std::to_string(heads));
    if (mlp_ratio <= 0 || mlp_hidden() < 1) fail(Error::Kind::config, "mlp_ratio must be positive");
    if (num_classes < 2) fail(Error::Kind::config, "num_classes must be >= 2");
    if (suppression_v > 0)
        fail(Error::Kind::config, "suppression value must be <= 0, got " + std::to_string(suppression_v));
    if (dropout < 0 || dropout >= 1 || drop_path < 0 || drop_path >= 1)
        fail(Error::Kind::config, "dropout and drop_path rates must lie in [0, 1)");
}

ModelConfig model_preset(const std::string& name) {
    ModelConfig cfg;
    if (name == "desk-tiny") {
        // Defaults above: 16px image, 4px patch, depth 2, dim 32, 2 heads.
        return cfg;
    }
    cfg.image_px = 32;
    cfg.patch_px = 2;
    cfg.depth = 12;
    cfg.num_classes = 100;
    if (name == "tiny") {
        cfg.embed_dim = 192;
        cfg.heads = 3;
    } else if (name == "small") {
        cfg.embed_dim = 384;
        cfg.heads = 6;
    } else if (name == "base") {
        cfg.embed_dim = 768;
        cfg.heads = 12;
    } else {
        fail(Error::Kind::config,
             "unknown preset '" + name + "' (expected desk-tiny, tiny, small or base)");
    }
    return cfg;
}

} // namespace vitp
