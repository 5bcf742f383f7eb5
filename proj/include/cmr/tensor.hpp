#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmr {

class TensorError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense row-major f64 tensor. `node` links the value into the active Tape
// when gradients are being recorded; -1 means untracked.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    int node = -1;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (size() != data.size())
            throw TensorError("tensor data length does not match shape");
    }

    std::size_t size() const {
        std::size_t n = 1;
        for (auto e : shape) n *= e;
        return shape.empty() ? 0 : n;
    }
    std::size_t ndim() const { return shape.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }
    bool tracked() const { return node >= 0; }
    bool is_scalar() const { return shape.size() == 1 && shape[0] == 1; }

    double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
    double scalar() const {
        if (!is_scalar()) throw TensorError("tensor is not a scalar");
        return data[0];
    }

    static Tensor zeros(std::vector<std::size_t> s) {
        Tensor t;
        t.shape = std::move(s);
        t.data.assign(t.size(), 0.0);
        return t;
    }
    static Tensor full(std::vector<std::size_t> s, double v) {
        Tensor t = zeros(std::move(s));
        for (auto& x : t.data) x = v;
        return t;
    }
    static Tensor scalar_of(double v) { return Tensor({1}, {v}); }
    static Tensor vec(std::vector<double> d) {
        std::size_t n = d.size();
        return Tensor({n}, std::move(d));
    }
    static Tensor mat(std::size_t r, std::size_t c, std::vector<double> d) {
        return Tensor({r, c}, std::move(d));
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i)
            os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }
};

// Deterministic seeded generator. Normal draws use Box-Muller on two fresh
// uniforms per call so the full state is the raw 64-bit engine state, which
// keeps checkpoint save/restore exact.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next_u64();
    double uniform();                       // [0,1)
    double normal(double mean = 0.0, double stddev = 1.0);
    std::size_t index(std::size_t n);       // [0,n)
    void shuffle(std::vector<std::size_t>& v);

    std::string save_state() const;
    void restore_state(const std::string& s);

private:
    std::uint64_t state_;
};

}  // namespace cmr
