#include "cmr/model.hpp"

namespace cmr {

namespace {

EncoderConfig video_config(const RunConfig& c) {
    EncoderConfig e;
    e.num_layers = c.video_layers;
    e.num_heads = c.video_heads;
    e.hidden = c.hidden;
    e.intermediate = c.intermediate;
    e.num_experts = c.experts;
    e.tokens_per_expert = c.tokens_per_expert;
    e.d_in = c.d_in;
    return e;
}

EncoderConfig text_config(const RunConfig& c) {
    EncoderConfig e;
    e.num_layers = c.text_layers;
    e.num_heads = c.text_heads;
    e.hidden = c.hidden;
    e.intermediate = c.intermediate;
    e.max_seq = c.max_seq;
    e.vocab_size = c.vocab;
    return e;
}

}  // namespace

Model::Model(const RunConfig& cfg)
    : cfg_(cfg), taps_(cfg.resolve_levels()),
      agg_(aggregation_from_string(cfg.aggregation)) {
    video_q_ = std::make_unique<ModalEncoder>(ModalEncoder::Kind::Video, "video",
                                              video_config(cfg), &q_);
    video_k_ = std::make_unique<ModalEncoder>(ModalEncoder::Kind::Video, "video",
                                              video_config(cfg), &k_);
    text_q_ = std::make_unique<ModalEncoder>(ModalEncoder::Kind::Text, "text",
                                             text_config(cfg), &q_);
    text_k_ = std::make_unique<ModalEncoder>(ModalEncoder::Kind::Text, "text",
                                             text_config(cfg), &k_);
    for (std::size_t l = 0; l < taps_.size(); ++l) {
        std::string lv = std::to_string(l);
        vheads_q_.emplace_back("video.head" + lv, cfg.hidden, cfg.proj_hidden, cfg.out_dim, &q_);
        theads_q_.emplace_back("text.head" + lv, cfg.hidden, cfg.proj_hidden, cfg.out_dim, &q_);
        vheads_k_.emplace_back("video.head" + lv, cfg.hidden, cfg.proj_hidden, cfg.out_dim, &k_);
        theads_k_.emplace_back("text.head" + lv, cfg.hidden, cfg.proj_hidden, cfg.out_dim, &k_);
    }
}

void Model::init(Rng& rng) {
    // query and key stores are initialized in the same declaration order;
    // init_key_from_query then makes them exact copies.
    video_q_->init(rng);
    text_q_->init(rng);
    for (auto& h : vheads_q_) h.init(rng);
    for (auto& h : theads_q_) h.init(rng);
    Rng throwaway(1);  // key init values are irrelevant, overwritten below
    video_k_->init(throwaway);
    text_k_->init(throwaway);
    for (auto& h : vheads_k_) h.init(throwaway);
    for (auto& h : theads_k_) h.init(throwaway);
    mirror_ = std::make_unique<MomentumMirror>(&q_, &k_, cfg_.momentum);
    mirror_->init_key_from_query();
}

std::vector<std::vector<Tensor>> Model::embed_videos(Tape* t, Role role,
                                                     const std::vector<VisualInput>& batch,
                                                     bool training) const {
    const ModalEncoder& enc = video_encoder(role);
    const auto& heads = role == Role::Query ? vheads_q_ : vheads_k_;
    std::vector<LayerTrace> traces;
    std::vector<std::vector<double>> masks;
    traces.reserve(batch.size());
    for (const auto& v : batch) {
        EncodedInput in = enc.build_visual_input(t, v);
        traces.push_back(enc.encode(t, in));
        masks.push_back(std::move(in.mask));
    }
    std::vector<std::vector<Tensor>> out;
    out.reserve(taps_.size());
    for (std::size_t l = 0; l < taps_.size(); ++l)
        out.push_back(extract_level(t, traces, masks, taps_[l].video_layer, agg_,
                                    enc.has_cls(), heads[l], training));
    return out;
}

std::vector<std::vector<Tensor>> Model::embed_texts(Tape* t, Role role,
                                                    const std::vector<TextInput>& batch,
                                                    bool training) const {
    const ModalEncoder& enc = text_encoder(role);
    const auto& heads = role == Role::Query ? theads_q_ : theads_k_;
    std::vector<LayerTrace> traces;
    std::vector<std::vector<double>> masks;
    traces.reserve(batch.size());
    for (const auto& x : batch) {
        EncodedInput in = enc.build_text_input(t, x);
        traces.push_back(enc.encode(t, in));
        masks.push_back(std::move(in.mask));
    }
    std::vector<std::vector<Tensor>> out;
    out.reserve(taps_.size());
    for (std::size_t l = 0; l < taps_.size(); ++l)
        out.push_back(extract_level(t, traces, masks, taps_[l].text_layer, agg_,
                                    enc.has_cls(), heads[l], training));
    return out;
}

namespace {

std::vector<LevelEmbedding> to_index(const std::vector<std::vector<Tensor>>& levels,
                                     std::size_t n) {
    std::vector<LevelEmbedding> out(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t l = 0; l < levels.size(); ++l)
            out[i].levels.push_back(levels[l][i].data);
    return out;
}

}  // namespace

std::vector<LevelEmbedding> Model::index_videos(const std::vector<VisualInput>& batch) const {
    return to_index(embed_videos(nullptr, Role::Query, batch, /*training=*/false),
                    batch.size());
}

std::vector<LevelEmbedding> Model::index_texts(const std::vector<TextInput>& batch) const {
    return to_index(embed_texts(nullptr, Role::Query, batch, /*training=*/false),
                    batch.size());
}

}  // namespace cmr
