#pragma once

#include <map>
#include <string>
#include <vector>

#include "cmr/autodiff.hpp"

namespace cmr {

// AdamW with decoupled weight decay:
//   m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
//   p <- p - lr * (mhat / (sqrt(vhat) + eps) + wd * p)
class AdamW {
public:
    struct Config {
        double lr = 1e-3;
        double weight_decay = 0.0;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    explicit AdamW(Config cfg) : cfg_(cfg) {}

    // Updates every trainable parameter in `store` that took part in the
    // backward pass. A trainable parameter without a gradient buffer is a
    // contract violation and is reported by name.
    void step(ParamStore& store);
    void zero_grads(ParamStore& store) { store.zero_grads(); }

    long step_count() const { return step_; }
    const Config& config() const { return cfg_; }

    struct Slot {
        std::vector<double> m, v;
    };
    // exposed for checkpointing
    std::map<std::string, Slot>& slots() { return slots_; }
    long& step_ref() { return step_; }

private:
    Config cfg_;
    long step_ = 0;
    std::map<std::string, Slot> slots_;
};

}  // namespace cmr
