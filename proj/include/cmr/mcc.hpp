#pragma once

#include <string>
#include <vector>

#include "cmr/autodiff.hpp"

namespace cmr {

// Fixed-capacity FIFO of unit-norm key vectors. Always full: initialized
// with seeded random directions, each enqueue overwrites the oldest batch.
class MemoryBank {
public:
    MemoryBank(std::size_t capacity, std::size_t dim)
        : capacity_(capacity), dim_(dim), storage_(capacity * dim, 0.0) {}

    void init_random(Rng& rng);

    // Replaces the oldest `batch.size()` rows in arrival order.
    void enqueue(const std::vector<Tensor>& batch);

    // Read-only copy of the contents; never tracked, so no gradient can
    // reach bank rows.
    Tensor snapshot() const;

    std::size_t capacity() const { return capacity_; }
    std::size_t dim() const { return dim_; }
    std::size_t cursor() const { return cursor_; }

    // checkpointing access
    std::vector<double>& raw() { return storage_; }
    const std::vector<double>& raw() const { return storage_; }
    void set_cursor(std::size_t c) { cursor_ = c % (capacity_ ? capacity_ : 1); }

private:
    std::size_t capacity_, dim_;
    std::vector<double> storage_;
    std::size_t cursor_ = 0;  // next row to overwrite (the oldest)
};

// Bijective pairing of same-named query and key parameters across both
// modalities. Key parameters are written only here: by the initial copy
// and by the momentum step theta_k <- m*theta_k + (1-m)*theta_q.
class MomentumMirror {
public:
    MomentumMirror(ParamStore* query, ParamStore* key, double m);

    void init_key_from_query();
    void momentum_update();

    double coefficient() const { return m_; }
    void set_coefficient(double m);

private:
    ParamStore* query_;
    ParamStore* key_;
    double m_;
};

}  // namespace cmr
