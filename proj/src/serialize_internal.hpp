#pragma once

#include <json.hpp>

#include "sinklab/model.hpp"

namespace sinklab {

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"layers", cfg.layers},
                          {"d_model", cfg.d_model},
                          {"heads", cfg.heads},
                          {"d_ff", cfg.d_ff},
                          {"vocab", cfg.vocab},
                          {"max_seq", cfg.max_seq},
                          {"rope_base", cfg.rope_base},
                          {"norm", cfg.norm == NormKind::Rms ? "rms" : "layernorm"},
                          {"audio_embed_dim", cfg.audio_embed_dim},
                          {"video_embed_dim", cfg.video_embed_dim}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.layers = j.at("layers").get<int64_t>();
    cfg.d_model = j.at("d_model").get<int64_t>();
    cfg.heads = j.at("heads").get<int64_t>();
    cfg.d_ff = j.at("d_ff").get<int64_t>();
    cfg.vocab = j.at("vocab").get<int64_t>();
    cfg.max_seq = j.at("max_seq").get<int64_t>();
    cfg.rope_base = j.at("rope_base").get<double>();
    const std::string norm = j.at("norm").get<std::string>();
    SINKLAB_CHECK(norm == "rms" || norm == "layernorm", "unknown norm kind: " << norm);
    cfg.norm = norm == "rms" ? NormKind::Rms : NormKind::LayerNorm;
    cfg.audio_embed_dim = j.at("audio_embed_dim").get<int64_t>();
    cfg.video_embed_dim = j.at("video_embed_dim").get<int64_t>();
    return cfg;
}

inline LoraTarget lora_target_from_name(const std::string& s) {
    if (s == "wq") return LoraTarget::Wq;
    if (s == "wk") return LoraTarget::Wk;
    if (s == "wv") return LoraTarget::Wv;
    if (s == "wo") return LoraTarget::Wo;
    throw std::invalid_argument("unknown lora target: " + s);
}

}  // namespace sinklab
