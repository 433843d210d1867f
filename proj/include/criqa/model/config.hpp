#pragma once

#include <string>

#include <json.hpp>

#include "criqa/error.hpp"

namespace criqa {

enum class EncoderMode { trainable, frozen_external };

inline std::string to_string(EncoderMode mode) {
    return mode == EncoderMode::trainable ? "trainable" : "frozen_external";
}

inline EncoderMode encoder_mode_from_string(const std::string& name) {
    if (name == "trainable") return EncoderMode::trainable;
    if (name == "frozen_external") return EncoderMode::frozen_external;
    throw ConfigError("unknown encoder mode '" + name + "'");
}

/// Architecture hyperparameters. Desk defaults keep a forward pass in the
/// tens of milliseconds on one CPU core; embed_dim 384 with mlp_hidden 1536
/// restores the full-scale configuration.
struct ModelConfig {
    int patch_size = 14;
    int embed_dim = 64;
    int encoder_depth = 2;
    int decoder_layers = 2;
    int attention_heads = 4;
    int mlp_hidden = 256;
    int in_channels = 3;
    int max_grid = 24;  // positional table covers grids up to max_grid x max_grid
    EncoderMode encoder_mode = EncoderMode::trainable;

    void validate() const {
        if (patch_size < 2) throw ConfigError("ModelConfig: patch_size must be >= 2");
        if (embed_dim < 1 || encoder_depth < 1 || decoder_layers < 1 ||
            attention_heads < 1 || mlp_hidden < 1 || in_channels < 1 || max_grid < 1) {
            throw ConfigError("ModelConfig: all counts must be >= 1");
        }
        if (embed_dim % attention_heads != 0) {
            throw ConfigError("ModelConfig: embed_dim (" + std::to_string(embed_dim) +
                              ") not divisible by attention_heads (" +
                              std::to_string(attention_heads) + ")");
        }
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"patch_size", c.patch_size},
                       {"embed_dim", c.embed_dim},
                       {"encoder_depth", c.encoder_depth},
                       {"decoder_layers", c.decoder_layers},
                       {"attention_heads", c.attention_heads},
                       {"mlp_hidden", c.mlp_hidden},
                       {"in_channels", c.in_channels},
                       {"max_grid", c.max_grid},
                       {"encoder_mode", to_string(c.encoder_mode)}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("patch_size").get_to(c.patch_size);
    j.at("embed_dim").get_to(c.embed_dim);
    j.at("encoder_depth").get_to(c.encoder_depth);
    j.at("decoder_layers").get_to(c.decoder_layers);
    j.at("attention_heads").get_to(c.attention_heads);
    j.at("mlp_hidden").get_to(c.mlp_hidden);
    j.at("in_channels").get_to(c.in_channels);
    j.at("max_grid").get_to(c.max_grid);
    c.encoder_mode = encoder_mode_from_string(j.at("encoder_mode").get<std::string>());
}

}  // namespace criqa
