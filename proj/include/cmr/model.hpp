#pragma once

#include <memory>

#include "cmr/config.hpp"
#include "cmr/eval.hpp"
#include "cmr/heads.hpp"
#include "cmr/mcc.hpp"

namespace cmr {

enum class Role { Query, Key };

// Both modality encoders in query and key roles plus one projection head per
// (modality, level, role). Query parameters live in `q`, key parameters in
// `k`; the mirror keeps them paired by name.
class Model {
public:
    explicit Model(const RunConfig& cfg);

    void init(Rng& rng);

    ParamStore& query_store() { return q_; }
    ParamStore& key_store() { return k_; }
    const ParamStore& query_store() const { return q_; }
    const ParamStore& key_store() const { return k_; }
    MomentumMirror& mirror() { return *mirror_; }

    std::size_t num_levels() const { return taps_.size(); }
    const std::vector<LevelTap>& taps() const { return taps_; }

    // levels[l][i]: unit vector for instance i at level l.
    // Role::Key embeddings must be produced with tape == nullptr.
    std::vector<std::vector<Tensor>> embed_videos(Tape* t, Role role,
                                                  const std::vector<VisualInput>& batch,
                                                  bool training) const;
    std::vector<std::vector<Tensor>> embed_texts(Tape* t, Role role,
                                                 const std::vector<TextInput>& batch,
                                                 bool training) const;

    // plain-value embeddings for retrieval (query encoders, eval mode)
    std::vector<LevelEmbedding> index_videos(const std::vector<VisualInput>& batch) const;
    std::vector<LevelEmbedding> index_texts(const std::vector<TextInput>& batch) const;

    const ModalEncoder& video_encoder(Role r) const {
        return r == Role::Query ? *video_q_ : *video_k_;
    }
    const ModalEncoder& text_encoder(Role r) const {
        return r == Role::Query ? *text_q_ : *text_k_;
    }

private:
    RunConfig cfg_;
    std::vector<LevelTap> taps_;
    Aggregation agg_;
    ParamStore q_, k_;
    std::unique_ptr<ModalEncoder> video_q_, video_k_, text_q_, text_k_;
    std::vector<ProjectionHead> vheads_q_, vheads_k_, theads_q_, theads_k_;
    std::unique_ptr<MomentumMirror> mirror_;
};

}  // namespace cmr
