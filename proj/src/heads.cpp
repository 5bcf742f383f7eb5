#include "cmr/heads.hpp"

namespace cmr {

Aggregation aggregation_from_string(const std::string& s) {
    if (s == "mean") return Aggregation::Mean;
    if (s == "max") return Aggregation::Max;
    if (s == "cls") return Aggregation::Cls;
    throw ConfigError("unknown aggregation method: " + s);
}

std::string to_string(Aggregation a) {
    switch (a) {
        case Aggregation::Mean: return "mean";
        case Aggregation::Max: return "max";
        case Aggregation::Cls: return "cls";
    }
    return "?";
}

Tensor aggregate(Tape* t, const Tensor& tokens, const std::vector<double>& mask,
                 Aggregation method, bool has_cls) {
    switch (method) {
        case Aggregation::Mean:
            return ops::masked_mean_pool(t, tokens, mask);
        case Aggregation::Max:
            return ops::masked_max_pool(t, tokens, mask);
        case Aggregation::Cls:
            if (!has_cls)
                throw ConfigError("cls aggregation requested on input without CLS framing");
            if (mask.empty() || mask[0] == 0.0)
                throw InputError("cls aggregation on empty sequence");
            return ops::row(t, tokens, 0);
    }
    throw ConfigError("unreachable aggregation method");
}

void ProjectionHead::init(Rng& rng) {
    const double w = 0.02;
    auto randmat = [&](std::vector<std::size_t> shape) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (auto& x : t.data) x = rng.normal(0.0, w);
        return t;
    };
    store_->add(prefix_ + ".fc1.w", randmat({in_dim_, hidden_}));
    store_->add(prefix_ + ".fc1.b", Tensor::zeros({hidden_}));
    store_->add(prefix_ + ".bn.g", Tensor::full({hidden_}, 1.0));
    store_->add(prefix_ + ".bn.b", Tensor::zeros({hidden_}));
    store_->add(prefix_ + ".bn.rm", Tensor::zeros({hidden_}), /*trainable=*/false);
    store_->add(prefix_ + ".bn.rv", Tensor::full({hidden_}, 1.0), /*trainable=*/false);
    store_->add(prefix_ + ".fc2.w", randmat({hidden_, out_dim_}));
    store_->add(prefix_ + ".fc2.b", Tensor::zeros({out_dim_}));
}

Tensor ProjectionHead::forward(Tape* t, const Tensor& x, bool training) const {
    auto p = [&](const char* s) -> Tensor { return ops::param(t, store_->get(prefix_ + s)); };
    Tensor h = ops::add_rowvec(t, ops::matmul(t, x, p(".fc1.w")), p(".fc1.b"));
    h = ops::batch_norm(t, h, p(".bn.g"), p(".bn.b"),
                        &store_->get(prefix_ + ".bn.rm").value.data,
                        &store_->get(prefix_ + ".bn.rv").value.data, training);
    h = ops::relu(t, h);
    return ops::add_rowvec(t, ops::matmul(t, h, p(".fc2.w")), p(".fc2.b"));
}

std::vector<Tensor> extract_level(Tape* t, const std::vector<LayerTrace>& traces,
                                  const std::vector<std::vector<double>>& masks,
                                  std::size_t layer, Aggregation method, bool has_cls,
                                  const ProjectionHead& head, bool training) {
    if (traces.empty()) throw InputError("extract_level on empty batch");
    if (traces.size() != masks.size())
        throw InputError("trace/mask batch size mismatch");
    std::size_t b = traces.size();
    std::vector<Tensor> pooled;
    pooled.reserve(b);
    std::size_t d = traces[0].layer(layer).cols();
    for (std::size_t i = 0; i < b; ++i) {
        Tensor v = aggregate(t, traces[i].layer(layer), masks[i], method, has_cls);
        // reshape to a single-row matrix for stacking
        Tensor r = v;
        r.shape = {1, d};
        pooled.push_back(std::move(r));
    }
    // stack rows: concat along rows via a small copy op
    Tensor stacked = Tensor::zeros({b, d});
    std::vector<int> nodes(b);
    bool tracked = false;
    for (std::size_t i = 0; i < b; ++i) {
        std::copy(pooled[i].data.begin(), pooled[i].data.end(), stacked.data.begin() + i * d);
        nodes[i] = pooled[i].node;
        tracked |= pooled[i].tracked();
    }
    if (t && tracked) {
        stacked.node = t->push(b * d, [=](Tape& tp, const std::vector<double>& g) {
            for (std::size_t i = 0; i < b; ++i)
                if (nodes[i] >= 0) tp.accum(nodes[i], g.data() + i * d, d);
        });
    }
    Tensor projected = head.forward(t, stacked, training);
    std::vector<Tensor> out;
    out.reserve(b);
    for (std::size_t i = 0; i < b; ++i)
        out.push_back(ops::l2_normalize(t, ops::row(t, projected, i)));
    return out;
}

}  // namespace cmr
