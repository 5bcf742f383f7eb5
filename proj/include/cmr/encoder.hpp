#pragma once

#include <string>
#include <vector>

#include "cmr/autodiff.hpp"
#include "cmr/errors.hpp"

namespace cmr {

struct EncoderConfig {
    std::size_t num_layers = 2;
    std::size_t num_heads = 4;
    std::size_t hidden = 64;
    std::size_t intermediate = 64;
    std::size_t max_seq = 32;
    // text only
    std::size_t vocab_size = 256;
    // video only
    std::size_t num_experts = 2;
    std::size_t tokens_per_expert = 8;
    std::size_t d_in = 32;

    void validate(bool is_video) const;
    std::size_t video_seq_len() const { return num_experts * tokens_per_expert; }
};

// Raw per-expert feature rows for one video. Rows past `valid[e]` are
// padding: they still occupy their slots but are masked out of attention
// and pooling, whatever values they carry.
struct VisualInput {
    std::vector<Tensor> expert_rows;      // one [n_e x d_in] matrix per expert
    std::vector<std::size_t> valid;       // real row count per expert; empty => all rows real
};

// Token ids for one caption, CLS first and END at the last real position.
struct TextInput {
    std::vector<std::size_t> ids;
    std::size_t pad_to = 0;               // 0 => no padding beyond ids

    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kCls = 1;
    static constexpr std::size_t kEnd = 2;
    static constexpr std::size_t kReserved = 3;

    // wraps content ids with CLS/END framing
    static TextInput make(const std::vector<std::size_t>& content_ids);
};

struct EncodedInput {
    Tensor tokens;                        // [L x hidden]
    std::vector<double> mask;             // length L, 1 = real
};

// Token features after every transformer block; index 0 is the embedded input.
struct LayerTrace {
    std::vector<Tensor> layers;
    const Tensor& layer(std::size_t i) const { return layers.at(i); }
    std::size_t depth() const { return layers.size() - 1; }
};

// One transformer encoder stack plus its input-embedding tables, owned by a
// ParamStore under `prefix`. The same class serves query and key roles; the
// role is decided by which store is passed in and whether a tape records.
class ModalEncoder {
public:
    enum class Kind { Video, Text };

    ModalEncoder(Kind kind, std::string prefix, EncoderConfig cfg, ParamStore* store)
        : kind_(kind), prefix_(std::move(prefix)), cfg_(cfg), store_(store) {
        cfg_.validate(kind_ == Kind::Video);
    }

    void init(Rng& rng);

    EncodedInput build_visual_input(Tape* t, const VisualInput& in) const;
    EncodedInput build_text_input(Tape* t, const TextInput& in) const;
    EncodedInput build_input(Tape* t, const VisualInput& v) const { return build_visual_input(t, v); }
    EncodedInput build_input(Tape* t, const TextInput& x) const { return build_text_input(t, x); }

    LayerTrace encode(Tape* t, const EncodedInput& in) const;

    const EncoderConfig& config() const { return cfg_; }
    Kind kind() const { return kind_; }
    bool has_cls() const { return kind_ == Kind::Text; }

    // encoder forward-pass accounting (dual-stream O(M+N) checks)
    static long forward_count;
    static void reset_forward_count() { forward_count = 0; }

private:
    Tensor p(Tape* t, const std::string& suffix) const;
    void add_param(Rng& rng, const std::string& suffix, std::vector<std::size_t> shape,
                   double stddev);

    Kind kind_;
    std::string prefix_;
    EncoderConfig cfg_;
    ParamStore* store_;
};

}  // namespace cmr
