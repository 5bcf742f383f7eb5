#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cmr/data.hpp"
#include "cmr/heads.hpp"

namespace cmr {

struct LevelTap {
    std::size_t text_layer;
    std::size_t video_layer;
};

struct RunConfig {
    std::uint64_t seed = 7;
    std::size_t batch = 32;
    std::size_t epochs = 20;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double temperature = 0.07;
    double alpha = 1.0;
    double beta = 1.0;
    double momentum = 0.9;      // desk-scale default; 0.999 reachable via config
    std::size_t bank_size_video = 512;
    std::size_t bank_size_text = 512;

    std::size_t hidden = 64;
    std::size_t video_layers = 4;
    std::size_t video_heads = 4;
    std::size_t text_layers = 4;
    std::size_t text_heads = 4;
    std::size_t intermediate = 64;
    std::size_t vocab = 512;
    std::size_t max_seq = 88;

    std::size_t proj_hidden = 256;
    std::size_t out_dim = 64;

    std::string levels = "1:1,last:last";  // text_layer:video_layer per level
    std::string aggregation = "mean";
    std::string loss = "infonce";          // infonce | triplet
    double margin = 0.2;
    std::string key_source = "momentum";   // momentum | query

    std::string data = "synthetic";        // synthetic | <dir with videos/texts.hitf>
    std::size_t pairs = 128;
    std::size_t latent = 16;
    double noise = 0.05;
    std::size_t experts = 2;
    std::size_t tokens_per_expert = 8;
    std::size_t d_in = 32;
    std::size_t text_len_min = 80;
    std::size_t text_len_max = 80;

    void validate() const;
    std::vector<LevelTap> resolve_levels() const;
    SyntheticSpec synthetic_spec() const;

    // ordered key=value text; basis for config hashing and checkpoints
    std::string canonical() const;
    std::uint64_t hash() const;
};

// "#" comments, blank lines allowed, key=value otherwise.
std::map<std::string, std::string> parse_config_file(const std::string& path);
std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                     const std::string& origin);

// Applies key=value pairs onto a config; unknown keys are config errors.
void apply_overrides(RunConfig& cfg, const std::map<std::string, std::string>& kv);

}  // namespace cmr
