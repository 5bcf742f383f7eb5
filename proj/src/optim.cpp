#include "cmr/optim.hpp"

#include <cmath>

namespace cmr {

void AdamW::step(ParamStore& store) {
    ++step_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (const auto& name : store.names()) {
        Parameter& p = store.get(name);
        if (!p.trainable) continue;
        if (!p.has_grad())
            throw TensorError("adamw_step: missing gradient for parameter " + p.name);
        auto& slot = slots_[p.name];
        std::size_t n = p.value.size();
        if (slot.m.empty()) {
            slot.m.assign(n, 0.0);
            slot.v.assign(n, 0.0);
        }
        for (std::size_t i = 0; i < n; ++i) {
            double g = p.grad[i];
            slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
            slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g;
            double mhat = slot.m[i] / bc1;
            double vhat = slot.v[i] / bc2;
            p.value.data[i] -=
                cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                           cfg_.weight_decay * p.value.data[i]);
        }
    }
}

}  // namespace cmr
