#include "cmr/loss.hpp"

#include <cmath>

#include "cmr/errors.hpp"

namespace cmr {

Tensor similarity_row(Tape* t, const Tensor& query, const Tensor& positive_key,
                      const Tensor& bank_snapshot) {
    if (query.shape != positive_key.shape)
        throw TensorError("similarity_row: query/key dimension mismatch");
    if (bank_snapshot.ndim() != 2 || bank_snapshot.cols() != query.shape[0])
        throw TensorError("similarity_row: bank dimension mismatch");
    Tensor pos = ops::dot(t, query, positive_key);
    if (bank_snapshot.rows() == 0) return pos;
    Tensor negs = ops::matvec_const(t, bank_snapshot, query);
    return ops::concat(t, {pos, negs});
}

Tensor similarity_row_in_batch(Tape* t, const Tensor& query,
                               const std::vector<Tensor>& keys, std::size_t self) {
    std::vector<Tensor> parts;
    parts.reserve(keys.size());
    parts.push_back(ops::dot(t, query, keys[self]));
    for (std::size_t j = 0; j < keys.size(); ++j)
        if (j != self) parts.push_back(ops::dot(t, query, keys[j]));
    return ops::concat(t, parts);
}

Tensor infonce(Tape* t, const Tensor& row, double gamma) {
    return ops::infonce(t, row, gamma);
}

Tensor level_loss(Tape* t, const std::vector<Tensor>& video_q,
                  const std::vector<Tensor>& text_q,
                  const std::vector<Tensor>& video_k,
                  const std::vector<Tensor>& text_k,
                  const Tensor& video_bank_snapshot, const Tensor& text_bank_snapshot,
                  double gamma) {
    std::size_t b = video_q.size();
    if (b == 0) throw TensorError("level_loss: empty batch");
    if (text_q.size() != b || video_k.size() != b || text_k.size() != b)
        throw TensorError("level_loss: batch size mismatch across streams");
    bool in_batch = video_bank_snapshot.rows() == 0 || text_bank_snapshot.rows() == 0;
    Tensor acc = Tensor::scalar_of(0.0);
    for (std::size_t i = 0; i < b; ++i) {
        Tensor row_vt = in_batch
                            ? similarity_row_in_batch(t, video_q[i], text_k, i)
                            : similarity_row(t, video_q[i], text_k[i], text_bank_snapshot);
        Tensor row_tv = in_batch
                            ? similarity_row_in_batch(t, text_q[i], video_k, i)
                            : similarity_row(t, text_q[i], video_k[i], video_bank_snapshot);
        acc = ops::add(t, acc, ops::add(t, ops::infonce(t, row_vt, gamma),
                                        ops::infonce(t, row_tv, gamma)));
    }
    return ops::scale(t, acc, 1.0 / static_cast<double>(b));
}

Tensor total_loss(Tape* t, const Tensor& l1, const Tensor& l2, const LossWeights& w) {
    if (!std::isfinite(w.alpha) || !std::isfinite(w.beta))
        throw ConfigError("loss weights must be finite");
    return ops::add(t, ops::scale(t, l1, w.alpha), ops::scale(t, l2, w.beta));
}

Tensor triplet_level_loss(Tape* t, const std::vector<Tensor>& video_q,
                          const std::vector<Tensor>& text_k, double margin) {
    std::size_t b = video_q.size();
    if (b < 2) throw TensorError("triplet loss requires batch >= 2");
    if (text_k.size() != b) throw TensorError("triplet loss: batch size mismatch");
    std::size_t d = video_q[0].shape[0];
    // stack queries into [B x d]; keys form a constant [B x d] block
    Tensor keys = Tensor::zeros({b, d});
    for (std::size_t j = 0; j < b; ++j)
        std::copy(text_k[j].data.begin(), text_k[j].data.end(), keys.data.begin() + j * d);
    std::vector<Tensor> rows;
    rows.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
        Tensor r = ops::matvec_const(t, keys, video_q[i]);
        r.shape = {1, b};
        rows.push_back(std::move(r));
    }
    Tensor sim = Tensor::zeros({b, b});
    std::vector<int> nodes(b);
    bool tracked = false;
    for (std::size_t i = 0; i < b; ++i) {
        std::copy(rows[i].data.begin(), rows[i].data.end(), sim.data.begin() + i * b);
        nodes[i] = rows[i].node;
        tracked |= rows[i].tracked();
    }
    if (t && tracked) {
        sim.node = t->push(b * b, [=](Tape& tp, const std::vector<double>& g) {
            for (std::size_t i = 0; i < b; ++i)
                if (nodes[i] >= 0) tp.accum(nodes[i], g.data() + i * b, b);
        });
    }
    return ops::triplet_hinge(t, sim, margin);
}

}  // namespace cmr
