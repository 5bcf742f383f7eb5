#include "cmr/mcc.hpp"

#include "cmr/errors.hpp"

#include <cmath>

namespace cmr {

void MemoryBank::init_random(Rng& rng) {
    for (std::size_t i = 0; i < capacity_; ++i) {
        double nrm = 0.0;
        for (std::size_t j = 0; j < dim_; ++j) {
            double v = rng.normal();
            storage_[i * dim_ + j] = v;
            nrm += v * v;
        }
        nrm = std::sqrt(nrm);
        if (nrm <= 1e-12) {  // astronomically unlikely; retry the row
            --i;
            continue;
        }
        for (std::size_t j = 0; j < dim_; ++j) storage_[i * dim_ + j] /= nrm;
    }
    cursor_ = 0;
}

void MemoryBank::enqueue(const std::vector<Tensor>& batch) {
    if (batch.empty()) return;
    if (batch.size() > capacity_)
        throw TensorError("enqueue batch larger than bank capacity");
    for (const Tensor& v : batch) {
        if (v.ndim() != 1 || v.shape[0] != dim_)
            throw TensorError("enqueue vector dimension mismatch");
        double nrm = 0.0;
        for (double x : v.data) nrm += x * x;
        nrm = std::sqrt(nrm);
        if (std::abs(nrm - 1.0) > 1e-6)
            throw TensorError("enqueue vector is not unit-norm (norm " +
                              std::to_string(nrm) + ")");
        std::copy(v.data.begin(), v.data.end(), storage_.begin() + cursor_ * dim_);
        cursor_ = (cursor_ + 1) % capacity_;
    }
}

Tensor MemoryBank::snapshot() const {
    return Tensor::mat(capacity_, dim_, storage_);
}

MomentumMirror::MomentumMirror(ParamStore* query, ParamStore* key, double m)
    : query_(query), key_(key), m_(m) {
    set_coefficient(m);
    // pairing must be a bijection over trainable names
    for (const auto& name : query_->names())
        if (query_->get(name).trainable && !key_->contains(name))
            throw ConfigError("query parameter " + name + " has no key twin");
    for (const auto& name : key_->names())
        if (key_->get(name).trainable && !query_->contains(name))
            throw ConfigError("key parameter " + name + " has no query twin");
}

void MomentumMirror::set_coefficient(double m) {
    if (m < 0.0 || m >= 1.0)
        throw ConfigError("momentum coefficient must lie in [0,1)");
    m_ = m;
}

void MomentumMirror::init_key_from_query() {
    for (const auto& name : query_->names()) {
        const Parameter& q = query_->get(name);
        if (!q.trainable) continue;
        Parameter& k = key_->get(name);
        if (k.value.shape != q.value.shape)
            throw ConfigError("mirrored parameter shape mismatch for " + name);
        k.value.data = q.value.data;
    }
}

void MomentumMirror::momentum_update() {
    for (const auto& name : query_->names()) {
        const Parameter& q = query_->get(name);
        if (!q.trainable) continue;
        Parameter& k = key_->get(name);
        for (std::size_t i = 0; i < k.value.data.size(); ++i)
            k.value.data[i] = m_ * k.value.data[i] + (1.0 - m_) * q.value.data[i];
    }
}

}  // namespace cmr
