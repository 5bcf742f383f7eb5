#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmr/encoder.hpp"

namespace cmr {

struct SyntheticSpec {
    std::size_t num_pairs = 128;
    std::size_t latent_dim = 16;
    double noise = 0.05;
    std::size_t num_experts = 2;
    std::size_t tokens_per_expert = 8;
    std::size_t d_in = 32;
    std::size_t text_len_min = 80;
    std::size_t text_len_max = 80;
    std::size_t vocab_size = 512;

    void validate() const;
};

struct Dataset {
    std::vector<VisualInput> videos;
    std::vector<TextInput> texts;  // index-aligned with videos
    std::size_t size() const { return videos.size(); }
};

// Pair i derives from latent z_i: expert rows are A_e * z_i + noise, token
// ids are a deterministic hash of quantized z components. Same seed, same
// dataset.
Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// HITF feature files: magic "HITF", u8 version=1, u8 dtype (1 = f64le,
// 2 = u32le), u32le ndims, ndims x u32le extents, payload row-major.
struct FeatureFile {
    std::uint8_t dtype = 1;
    std::vector<std::size_t> dims;
    std::vector<double> f64;        // dtype 1
    std::vector<std::uint32_t> u32; // dtype 2
};

void write_feature_file(const std::string& path, const FeatureFile& f);
FeatureFile load_feature_file(const std::string& path);

// Dataset <-> file pair (videos.hitf f64 [N x E*T x d_in], texts.hitf u32
// [N x max_len], zero-padded after END).
void write_dataset(const Dataset& ds, const SyntheticSpec& spec, const std::string& dir);
Dataset load_dataset(const std::string& dir, std::size_t num_experts,
                     std::size_t tokens_per_expert);

}  // namespace cmr
