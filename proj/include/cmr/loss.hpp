#pragma once

#include <vector>

#include "cmr/autodiff.hpp"
#include "cmr/mcc.hpp"

namespace cmr {

struct LossWeights {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 0.07;
};

// [positive, negatives...] cosine row for one query against a bank snapshot.
// All inputs are unit vectors, so dot products are cosines.
Tensor similarity_row(Tape* t, const Tensor& query, const Tensor& positive_key,
                      const Tensor& bank_snapshot);

// In-batch variant used when banks are disabled: negatives are the other
// batch keys.
Tensor similarity_row_in_batch(Tape* t, const Tensor& query,
                               const std::vector<Tensor>& keys, std::size_t self);

Tensor infonce(Tape* t, const Tensor& row, double gamma);

// Symmetric InfoNCE over one matching level: mean over the batch of
// (video->text row vs text bank) + (text->video row vs video bank).
// Empty snapshots (capacity 0) switch both directions to in-batch negatives.
Tensor level_loss(Tape* t, const std::vector<Tensor>& video_q,
                  const std::vector<Tensor>& text_q,
                  const std::vector<Tensor>& video_k,
                  const std::vector<Tensor>& text_k,
                  const Tensor& video_bank_snapshot, const Tensor& text_bank_snapshot,
                  double gamma);

// L = alpha * L1 + beta * L2
Tensor total_loss(Tape* t, const Tensor& l1, const Tensor& l2, const LossWeights& w);

// Max-violation triplet ranking alternative over an in-batch similarity
// matrix (diagonal = positives), both directions, mean over batch.
Tensor triplet_level_loss(Tape* t, const std::vector<Tensor>& video_q,
                          const std::vector<Tensor>& text_k, double margin);

}  // namespace cmr
