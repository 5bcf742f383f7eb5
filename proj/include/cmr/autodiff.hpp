#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmr/tensor.hpp"

namespace cmr {

// A named trainable value. The gradient buffer is allocated lazily on the
// first backward pass that reaches the parameter; key-encoder parameters
// never get one.
struct Parameter {
    std::string name;
    Tensor value;
    std::vector<double> grad;   // empty until used
    bool trainable = true;      // false for buffers (e.g. batch-norm stats)

    bool has_grad() const { return !grad.empty(); }
    void zero_grad() { grad.clear(); }
};

class ParamStore {
public:
    Parameter& add(const std::string& name, Tensor init, bool trainable = true);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const;

    // insertion order, stable across runs
    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }
    void zero_grads();

private:
    std::map<std::string, std::unique_ptr<Parameter>> params_;
    std::vector<std::string> order_;
};

// Per-forward-pass gradient tape. Freed with the Tape object after backward.
// One tape is confined to one thread.
class Tape {
public:
    using BackFn = std::function<void(Tape&, const std::vector<double>&)>;

    int push(std::size_t grad_size, BackFn back);
    int watch(Parameter& p);
    void accum(int node, const double* g, std::size_t n);
    void accum(int node, const std::vector<double>& g) { accum(node, g.data(), g.size()); }
    const std::vector<double>& grad(int node) const { return nodes_[node].grad; }

    // Reverse sweep from a scalar loss; parameter gradients are accumulated
    // additively into Parameter::grad.
    void backward(const Tensor& loss);

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<double> grad;
        BackFn back;
        Parameter* sink = nullptr;
        bool touched = false;
    };
    std::vector<Node> nodes_;
    std::unordered_map<const Parameter*, int> watched_;
};

// All ops record onto `t` when t != nullptr and any input is tracked.
// Passing t == nullptr is the no-record mode used by key encoders.
namespace ops {

Tensor param(Tape* t, Parameter& p);

Tensor matmul(Tape* t, const Tensor& a, const Tensor& b);
Tensor matmul_nt(Tape* t, const Tensor& a, const Tensor& b);
Tensor add(Tape* t, const Tensor& a, const Tensor& b);
Tensor add_rowvec(Tape* t, const Tensor& m, const Tensor& v);
Tensor mul(Tape* t, const Tensor& a, const Tensor& b);
Tensor scale(Tape* t, const Tensor& a, double c);
Tensor relu(Tape* t, const Tensor& a);
// col_mask empty => no masking; otherwise col_mask[j]==0 forces weight 0.
Tensor softmax_rows(Tape* t, const Tensor& a, const std::vector<double>& col_mask = {});
Tensor layer_norm(Tape* t, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-8);
Tensor concat_cols(Tape* t, const std::vector<Tensor>& parts);
Tensor slice_cols(Tape* t, const Tensor& a, std::size_t c0, std::size_t c1);
Tensor row(Tape* t, const Tensor& a, std::size_t i);
Tensor concat(Tape* t, const std::vector<Tensor>& vecs);  // 1-D concat
Tensor gather_rows(Tape* t, const Tensor& table, const std::vector<std::size_t>& ids);
Tensor masked_mean_pool(Tape* t, const Tensor& tokens, const std::vector<double>& mask);
Tensor masked_max_pool(Tape* t, const Tensor& tokens, const std::vector<double>& mask);
Tensor l2_normalize(Tape* t, const Tensor& v);
Tensor dot(Tape* t, const Tensor& a, const Tensor& b);
// rows of `m` (k x d, plain data) dotted with tracked vector v; gradient
// flows into v only.
Tensor matvec_const(Tape* t, const Tensor& m, const Tensor& v);
Tensor sum(Tape* t, const Tensor& a);
Tensor infonce(Tape* t, const Tensor& similarity_row, double gamma);
Tensor triplet_hinge(Tape* t, const Tensor& sim_matrix, double margin);

// Training mode normalizes with batch statistics (batch >= 2 required) and
// updates the running buffers in place; eval mode uses the frozen buffers.
Tensor batch_norm(Tape* t, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::vector<double>* running_mean, std::vector<double>* running_var,
                  bool training, double momentum = 0.1, double eps = 1e-8);

}  // namespace ops
}  // namespace cmr
