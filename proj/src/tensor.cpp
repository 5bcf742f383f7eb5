#include "cmr/tensor.hpp"

#include <cmath>

namespace cmr {

// splitmix64
std::uint64_t Rng::next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal(double mean, double stddev) {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(2.0 * M_PI * u2);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw TensorError("Rng::index on empty range");
    return static_cast<std::size_t>(next_u64() % n);
}

void Rng::shuffle(std::vector<std::size_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = index(i);
        std::swap(v[i - 1], v[j]);
    }
}

std::string Rng::save_state() const {
    return std::to_string(state_);
}

void Rng::restore_state(const std::string& s) {
    state_ = std::stoull(s);
}

}  // namespace cmr
