#include "cmr/encoder.hpp"

#include <cmath>

namespace cmr {

long ModalEncoder::forward_count = 0;

void EncoderConfig::validate(bool is_video) const {
    if (num_layers < 1) throw ConfigError("encoder needs at least one layer");
    if (hidden % num_heads != 0)
        throw ConfigError("hidden (" + std::to_string(hidden) +
                          ") must be divisible by num_heads (" + std::to_string(num_heads) + ")");
    if (is_video) {
        if (num_experts < 1 || tokens_per_expert < 1)
            throw ConfigError("video encoder needs num_experts >= 1 and tokens_per_expert >= 1");
    } else {
        if (vocab_size <= TextInput::kReserved)
            throw ConfigError("vocab_size must exceed the reserved token ids");
        if (max_seq < 2) throw ConfigError("text max_seq must allow CLS and END");
    }
}

TextInput TextInput::make(const std::vector<std::size_t>& content_ids) {
    TextInput in;
    in.ids.reserve(content_ids.size() + 2);
    in.ids.push_back(kCls);
    for (auto id : content_ids) in.ids.push_back(id);
    in.ids.push_back(kEnd);
    return in;
}

void ModalEncoder::add_param(Rng& rng, const std::string& suffix,
                             std::vector<std::size_t> shape, double stddev) {
    Tensor t = Tensor::zeros(std::move(shape));
    if (stddev > 0.0)
        for (auto& x : t.data) x = rng.normal(0.0, stddev);
    store_->add(prefix_ + "." + suffix, std::move(t));
}

void ModalEncoder::init(Rng& rng) {
    const double w = 0.02;
    if (kind_ == Kind::Video) {
        add_param(rng, "in_proj.w", {cfg_.d_in, cfg_.hidden}, w);
        add_param(rng, "in_proj.b", {cfg_.hidden}, 0.0);
        add_param(rng, "seg", {2, cfg_.hidden}, w);
        // positions are slot-within-expert, shared across experts
        add_param(rng, "pos", {cfg_.tokens_per_expert, cfg_.hidden}, w);
        add_param(rng, "expert", {cfg_.num_experts, cfg_.hidden}, w);
    } else {
        add_param(rng, "tok", {cfg_.vocab_size, cfg_.hidden}, w);
        add_param(rng, "seg", {2, cfg_.hidden}, w);
        add_param(rng, "pos", {cfg_.max_seq, cfg_.hidden}, w);
    }
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
        std::string lp = "layer" + std::to_string(l) + ".";
        for (const char* nm : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
            add_param(rng, lp + nm, {cfg_.hidden, cfg_.hidden}, w);
        for (const char* nm : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
            add_param(rng, lp + nm, {cfg_.hidden}, 0.0);
        store_->add(prefix_ + "." + lp + "ln1.g", Tensor::full({cfg_.hidden}, 1.0));
        add_param(rng, lp + "ln1.b", {cfg_.hidden}, 0.0);
        add_param(rng, lp + "ff.w1", {cfg_.hidden, cfg_.intermediate}, w);
        add_param(rng, lp + "ff.b1", {cfg_.intermediate}, 0.0);
        add_param(rng, lp + "ff.w2", {cfg_.intermediate, cfg_.hidden}, w);
        add_param(rng, lp + "ff.b2", {cfg_.hidden}, 0.0);
        store_->add(prefix_ + "." + lp + "ln2.g", Tensor::full({cfg_.hidden}, 1.0));
        add_param(rng, lp + "ln2.b", {cfg_.hidden}, 0.0);
    }
}

Tensor ModalEncoder::p(Tape* t, const std::string& suffix) const {
    return ops::param(t, store_->get(prefix_ + "." + suffix));
}

EncodedInput ModalEncoder::build_visual_input(Tape* t, const VisualInput& in) const {
    if (kind_ != Kind::Video)
        throw InputError("visual input fed to a text encoder");
    if (in.expert_rows.size() != cfg_.num_experts)
        throw InputError("expert count mismatch: got " +
                         std::to_string(in.expert_rows.size()) + ", config expects " +
                         std::to_string(cfg_.num_experts));
    std::size_t seq = cfg_.video_seq_len();
    Tensor raw = Tensor::zeros({seq, cfg_.d_in});
    std::vector<double> mask(seq, 0.0);
    std::vector<std::size_t> seg_ids(seq), pos_ids(seq), expert_ids(seq);
    for (std::size_t e = 0; e < cfg_.num_experts; ++e) {
        const Tensor& rows = in.expert_rows[e];
        if (rows.ndim() != 2 || rows.cols() != cfg_.d_in)
            throw InputError("expert " + std::to_string(e) + " feature width " +
                             (rows.ndim() == 2 ? std::to_string(rows.cols()) : std::string("?")) +
                             " != d_in " + std::to_string(cfg_.d_in));
        if (rows.rows() > cfg_.tokens_per_expert)
            throw InputError("expert " + std::to_string(e) + " supplies " +
                             std::to_string(rows.rows()) + " rows > tokens_per_expert " +
                             std::to_string(cfg_.tokens_per_expert));
        std::size_t valid = in.valid.empty() ? rows.rows() : in.valid[e];
        if (valid > rows.rows())
            throw InputError("expert valid count exceeds supplied rows");
        for (std::size_t s = 0; s < cfg_.tokens_per_expert; ++s) {
            std::size_t i = e * cfg_.tokens_per_expert + s;
            if (s < rows.rows())
                std::copy(rows.data.begin() + s * cfg_.d_in,
                          rows.data.begin() + (s + 1) * cfg_.d_in,
                          raw.data.begin() + i * cfg_.d_in);
            mask[i] = (s < valid) ? 1.0 : 0.0;
            seg_ids[i] = (s < valid) ? 1 : 0;
            pos_ids[i] = s;
            expert_ids[i] = e;
        }
    }
    // V = proj(F_v) + M_v + P_v + E
    Tensor tok = ops::add_rowvec(t, ops::matmul(t, raw, p(t, "in_proj.w")), p(t, "in_proj.b"));
    tok = ops::add(t, tok, ops::gather_rows(t, p(t, "seg"), seg_ids));
    tok = ops::add(t, tok, ops::gather_rows(t, p(t, "pos"), pos_ids));
    tok = ops::add(t, tok, ops::gather_rows(t, p(t, "expert"), expert_ids));
    return {std::move(tok), std::move(mask)};
}

EncodedInput ModalEncoder::build_text_input(Tape* t, const TextInput& in) const {
    if (kind_ != Kind::Text)
        throw InputError("text input fed to a video encoder");
    std::size_t len = in.ids.size();
    if (len < 2 || in.ids.front() != TextInput::kCls || in.ids.back() != TextInput::kEnd)
        throw InputError("text input must be framed as CLS ... END");
    std::size_t seq = std::max(len, in.pad_to);
    if (seq > cfg_.max_seq)
        throw InputError("text length " + std::to_string(seq) + " exceeds max_seq " +
                         std::to_string(cfg_.max_seq));
    std::vector<std::size_t> ids(seq, TextInput::kPad), seg_ids(seq), pos_ids(seq);
    std::vector<double> mask(seq, 0.0);
    for (std::size_t i = 0; i < seq; ++i) {
        if (i < len) {
            if (in.ids[i] >= cfg_.vocab_size)
                throw InputError("token id " + std::to_string(in.ids[i]) +
                                 " >= vocab_size " + std::to_string(cfg_.vocab_size));
            ids[i] = in.ids[i];
            mask[i] = 1.0;
        }
        seg_ids[i] = (i < len) ? 1 : 0;
        pos_ids[i] = i;
    }
    // T = F_t + M_t + P_t
    Tensor tok = ops::gather_rows(t, p(t, "tok"), ids);
    tok = ops::add(t, tok, ops::gather_rows(t, p(t, "seg"), seg_ids));
    tok = ops::add(t, tok, ops::gather_rows(t, p(t, "pos"), pos_ids));
    return {std::move(tok), std::move(mask)};
}

LayerTrace ModalEncoder::encode(Tape* t, const EncodedInput& in) const {
    ++forward_count;
    std::size_t dh = cfg_.hidden / cfg_.num_heads;
    double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    LayerTrace trace;
    trace.layers.push_back(in.tokens);
    Tensor x = in.tokens;
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
        std::string lp = "layer" + std::to_string(l) + ".";
        Tensor q = ops::add_rowvec(t, ops::matmul(t, x, p(t, lp + "attn.wq")), p(t, lp + "attn.bq"));
        Tensor k = ops::add_rowvec(t, ops::matmul(t, x, p(t, lp + "attn.wk")), p(t, lp + "attn.bk"));
        Tensor v = ops::add_rowvec(t, ops::matmul(t, x, p(t, lp + "attn.wv")), p(t, lp + "attn.bv"));
        std::vector<Tensor> heads;
        heads.reserve(cfg_.num_heads);
        for (std::size_t h = 0; h < cfg_.num_heads; ++h) {
            Tensor qh = ops::slice_cols(t, q, h * dh, (h + 1) * dh);
            Tensor kh = ops::slice_cols(t, k, h * dh, (h + 1) * dh);
            Tensor vh = ops::slice_cols(t, v, h * dh, (h + 1) * dh);
            Tensor scores = ops::scale(t, ops::matmul_nt(t, qh, kh), att_scale);
            Tensor attn = ops::softmax_rows(t, scores, in.mask);
            heads.push_back(ops::matmul(t, attn, vh));
        }
        Tensor ctx = ops::concat_cols(t, heads);
        Tensor att_out =
            ops::add_rowvec(t, ops::matmul(t, ctx, p(t, lp + "attn.wo")), p(t, lp + "attn.bo"));
        x = ops::layer_norm(t, ops::add(t, x, att_out), p(t, lp + "ln1.g"), p(t, lp + "ln1.b"));
        Tensor ff = ops::add_rowvec(
            t, ops::matmul(t, ops::relu(t, ops::add_rowvec(t, ops::matmul(t, x, p(t, lp + "ff.w1")),
                                                           p(t, lp + "ff.b1"))),
                           p(t, lp + "ff.w2")),
            p(t, lp + "ff.b2"));
        x = ops::layer_norm(t, ops::add(t, x, ff), p(t, lp + "ln2.g"), p(t, lp + "ln2.b"));
        trace.layers.push_back(x);
    }
    return trace;
}

}  // namespace cmr
