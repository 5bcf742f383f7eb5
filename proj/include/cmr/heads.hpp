#pragma once

#include <string>
#include <vector>

#include "cmr/encoder.hpp"

namespace cmr {

enum class Aggregation { Mean, Max, Cls };

Aggregation aggregation_from_string(const std::string& s);
std::string to_string(Aggregation a);

// Pool token features down to one vector. `has_cls` states whether token 0
// is a CLS marker; requesting Cls without one is a config error.
Tensor aggregate(Tape* t, const Tensor& tokens, const std::vector<double>& mask,
                 Aggregation method, bool has_cls);

// linear -> batch-norm -> relu -> linear, one instance per
// (modality, level, role). Running BN statistics live in the store as
// non-trainable buffers so they ride along in checkpoints.
class ProjectionHead {
public:
    ProjectionHead(std::string prefix, std::size_t in_dim, std::size_t hidden,
                   std::size_t out_dim, ParamStore* store)
        : prefix_(std::move(prefix)), in_dim_(in_dim), hidden_(hidden),
          out_dim_(out_dim), store_(store) {}

    void init(Rng& rng);

    // x: [B x in_dim] -> [B x out_dim]; training toggles batch vs running stats
    Tensor forward(Tape* t, const Tensor& x, bool training) const;

    std::size_t out_dim() const { return out_dim_; }

private:
    std::string prefix_;
    std::size_t in_dim_, hidden_, out_dim_;
    ParamStore* store_;
};

// Tap one trace layer for a batch, aggregate, project, normalize.
// Returns one unit vector per instance.
std::vector<Tensor> extract_level(Tape* t, const std::vector<LayerTrace>& traces,
                                  const std::vector<std::vector<double>>& masks,
                                  std::size_t layer, Aggregation method, bool has_cls,
                                  const ProjectionHead& head, bool training);

}  // namespace cmr
