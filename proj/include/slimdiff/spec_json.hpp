#pragma once

#include "slimdiff/schedule.hpp"
#include "slimdiff/unet.hpp"
#include "slimdiff/vae.hpp"

#include <json.hpp>

#include <string>

namespace slimdiff {

inline void to_json(nlohmann::json& j, const LevelSpec& l) {
    j = nlohmann::json{{"width", l.width},
                       {"blocks", l.blocks},
                       {"operator", to_string(l.op)},
                       {"attention", to_string(l.attention)}};
    if (l.attention == AttentionKind::qgam) j["qgam_queries"] = l.qgam_queries;
}

inline void from_json(const nlohmann::json& j, LevelSpec& l) {
    l.width = j.at("width").get<Index>();
    l.blocks = j.value("blocks", 1);
    l.op = operator_from_string(j.value("operator", std::string("standard")));
    l.attention = attention_from_string(j.value("attention", std::string("none")));
    l.qgam_queries = j.value("qgam_queries", Index(64));
}

inline void to_json(nlohmann::json& j, const ToyUNetSpec& s) {
    j = nlohmann::json{{"levels", s.levels},
                       {"deepest_removed", s.deepest_removed},
                       {"time_conditioning", s.time_conditioning},
                       {"in_channels", s.in_channels},
                       {"out_channels", s.out_channels},
                       {"time_embed_dim", s.time_embed_dim},
                       {"time_hidden", s.time_hidden}};
}

inline void from_json(const nlohmann::json& j, ToyUNetSpec& s) {
    s.levels = j.at("levels").get<std::vector<LevelSpec>>();
    s.deepest_removed = j.value("deepest_removed", 0);
    s.time_conditioning = j.value("time_conditioning", true);
    s.in_channels = j.value("in_channels", Index(4));
    s.out_channels = j.value("out_channels", Index(4));
    s.time_embed_dim = j.value("time_embed_dim", Index(32));
    s.time_hidden = j.value("time_hidden", Index(32));
    s.validate();
}

inline void to_json(nlohmann::json& j, const ToyVAESpec& s) {
    j = nlohmann::json{{"in_channels", s.in_channels},
                       {"widths", s.widths},
                       {"latent_channels", s.latent_channels}};
}

inline void from_json(const nlohmann::json& j, ToyVAESpec& s) {
    s.in_channels = j.value("in_channels", Index(1));
    s.widths = j.at("widths").get<std::vector<Index>>();
    s.latent_channels = j.value("latent_channels", Index(4));
    s.validate();
}

}  // namespace slimdiff
