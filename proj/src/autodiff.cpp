#include "cmr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "cmr/kernels.hpp"

namespace cmr {

Parameter& ParamStore::add(const std::string& name, Tensor init, bool trainable) {
    if (params_.count(name))
        throw TensorError("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = std::move(init);
    p->trainable = trainable;
    Parameter& ref = *p;
    params_.emplace(name, std::move(p));
    order_.push_back(name);
    return ref;
}

Parameter& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw TensorError("unknown parameter: " + name);
    return *it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw TensorError("unknown parameter: " + name);
    return *it->second;
}

bool ParamStore::contains(const std::string& name) const {
    return params_.count(name) != 0;
}

void ParamStore::zero_grads() {
    for (auto& [_, p] : params_) p->zero_grad();
}

int Tape::push(std::size_t grad_size, BackFn back) {
    Node n;
    n.grad.assign(grad_size, 0.0);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size() - 1);
}

int Tape::watch(Parameter& p) {
    auto it = watched_.find(&p);
    if (it != watched_.end()) return it->second;
    int id = push(p.value.size(), nullptr);
    nodes_[id].sink = &p;
    watched_.emplace(&p, id);
    return id;
}

void Tape::accum(int node, const double* g, std::size_t n) {
    Node& nd = nodes_[node];
    if (nd.grad.size() != n)
        throw TensorError("gradient size mismatch in tape accumulation");
    for (std::size_t i = 0; i < n; ++i) nd.grad[i] += g[i];
    nd.touched = true;
}

void Tape::backward(const Tensor& loss) {
    if (!loss.is_scalar())
        throw TensorError("backward requires a scalar loss");
    if (!loss.tracked())
        throw TensorError("backward on an untracked tensor");
    nodes_[loss.node].grad[0] = 1.0;
    nodes_[loss.node].touched = true;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
        Node& nd = nodes_[i];
        if (!nd.touched) continue;
        if (nd.back) nd.back(*this, nd.grad);
        if (nd.sink) {
            Parameter& p = *nd.sink;
            if (p.grad.empty()) p.grad.assign(p.value.size(), 0.0);
            for (std::size_t j = 0; j < nd.grad.size(); ++j) p.grad[j] += nd.grad[j];
        }
    }
}

namespace ops {

namespace {

bool want(Tape* t, const Tensor& a) { return t && a.tracked(); }
bool want(Tape* t, const Tensor& a, const Tensor& b) {
    return t && (a.tracked() || b.tracked());
}

void check_finite(const Tensor& x, const char* op) {
    for (double v : x.data)
        if (!std::isfinite(v))
            throw TensorError(std::string("non-finite value produced by ") + op);
}

}  // namespace

Tensor param(Tape* t, Parameter& p) {
    Tensor out = p.value;
    out.node = (t && p.trainable) ? t->watch(p) : -1;
    return out;
}

Tensor matmul(Tape* t, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
        throw TensorError("matmul shape mismatch: " + a.shape_str() + " x " + b.shape_str());
    std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor c = Tensor::zeros({m, n});
    kernels::matmul(a.data.data(), b.data.data(), c.data.data(), m, k, n);
    if (want(t, a, b)) {
        auto ad = a.data, bd = b.data;
        int an = a.node, bn = b.node;
        c.node = t->push(m * n, [=](Tape& tp, const std::vector<double>& g) {
            if (an >= 0) {
                std::vector<double> da(m * k);
                kernels::matmul_nt(g.data(), bd.data(), da.data(), m, n, k);
                tp.accum(an, da);
            }
            if (bn >= 0) {
                std::vector<double> db(k * n);
                kernels::matmul_tn(ad.data(), g.data(), db.data(), m, k, n);
                tp.accum(bn, db);
            }
        });
    }
    return c;
}

Tensor matmul_nt(Tape* t, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols())
        throw TensorError("matmul_nt shape mismatch: " + a.shape_str() + " x " + b.shape_str());
    std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor c = Tensor::zeros({m, n});
    kernels::matmul_nt(a.data.data(), b.data.data(), c.data.data(), m, k, n);
    if (want(t, a, b)) {
        auto ad = a.data, bd = b.data;
        int an = a.node, bn = b.node;
        c.node = t->push(m * n, [=](Tape& tp, const std::vector<double>& g) {
            if (an >= 0) {
                std::vector<double> da(m * k);
                kernels::matmul(g.data(), bd.data(), da.data(), m, n, k);
                tp.accum(an, da);
            }
            if (bn >= 0) {
                std::vector<double> db(n * k);
                kernels::matmul_tn(g.data(), ad.data(), db.data(), m, n, k);
                tp.accum(bn, db);
            }
        });
    }
    return c;
}

Tensor add(Tape* t, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw TensorError("add shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    Tensor c = a;
    c.node = -1;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
    if (want(t, a, b)) {
        int an = a.node, bn = b.node;
        c.node = t->push(c.data.size(), [=](Tape& tp, const std::vector<double>& g) {
            if (an >= 0) tp.accum(an, g);
            if (bn >= 0) tp.accum(bn, g);
        });
    }
    return c;
}

Tensor add_rowvec(Tape* t, const Tensor& m, const Tensor& v) {
    if (m.ndim() != 2 || v.ndim() != 1 || m.cols() != v.shape[0])
        throw TensorError("add_rowvec shape mismatch: " + m.shape_str() + " + " + v.shape_str());
    std::size_t r = m.rows(), c = m.cols();
    Tensor out = m;
    out.node = -1;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out.data[i * c + j] += v.data[j];
    if (want(t, m, v)) {
        int mn = m.node, vn = v.node;
        out.node = t->push(r * c, [=](Tape& tp, const std::vector<double>& g) {
            if (mn >= 0) tp.accum(mn, g);
            if (vn >= 0) {
                std::vector<double> dv(c, 0.0);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) dv[j] += g[i * c + j];
                tp.accum(vn, dv);
            }
        });
    }
    return out;
}

Tensor mul(Tape* t, const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape)
        throw TensorError("mul shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    Tensor c = a;
    c.node = -1;
    for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
    if (want(t, a, b)) {
        auto ad = a.data, bd = b.data;
        int an = a.node, bn = b.node;
        c.node = t->push(c.data.size(), [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> d(g.size());
            if (an >= 0) {
                for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * bd[i];
                tp.accum(an, d);
            }
            if (bn >= 0) {
                for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * ad[i];
                tp.accum(bn, d);
            }
        });
    }
    return c;
}

Tensor scale(Tape* t, const Tensor& a, double c) {
    Tensor out = a;
    out.node = -1;
    for (auto& x : out.data) x *= c;
    if (want(t, a)) {
        int an = a.node;
        out.node = t->push(out.data.size(), [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> d(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = g[i] * c;
            tp.accum(an, d);
        });
    }
    return out;
}

Tensor relu(Tape* t, const Tensor& a) {
    Tensor out = a;
    out.node = -1;
    for (auto& x : out.data) x = x > 0.0 ? x : 0.0;
    if (want(t, a)) {
        auto ad = a.data;
        int an = a.node;
        out.node = t->push(out.data.size(), [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> d(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = ad[i] > 0.0 ? g[i] : 0.0;
            tp.accum(an, d);
        });
    }
    return out;
}

Tensor softmax_rows(Tape* t, const Tensor& a, const std::vector<double>& col_mask) {
    if (a.ndim() != 2) throw TensorError("softmax_rows expects a matrix");
    std::size_t r = a.rows(), c = a.cols();
    if (!col_mask.empty() && col_mask.size() != c)
        throw TensorError("softmax_rows column mask length mismatch");
    Tensor out = Tensor::zeros({r, c});
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) {
            if (!col_mask.empty() && col_mask[j] == 0.0) continue;
            mx = std::max(mx, a.at(i, j));
        }
        if (!std::isfinite(mx))
            throw TensorError("softmax_rows: all columns masked out");
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            if (!col_mask.empty() && col_mask[j] == 0.0) continue;
            double e = std::exp(a.at(i, j) - mx);
            out.at(i, j) = e;
            z += e;
        }
        for (std::size_t j = 0; j < c; ++j) out.at(i, j) /= z;
    }
    if (want(t, a)) {
        auto y = out.data;
        int an = a.node;
        out.node = t->push(r * c, [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> d(r * c);
            for (std::size_t i = 0; i < r; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < c; ++j) s += g[i * c + j] * y[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    d[i * c + j] = y[i * c + j] * (g[i * c + j] - s);
            }
            tp.accum(an, d);
        });
    }
    return out;
}

Tensor layer_norm(Tape* t, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
    if (x.ndim() != 2 || gamma.shape != std::vector<std::size_t>{x.cols()} ||
        beta.shape != gamma.shape)
        throw TensorError("layer_norm shape mismatch");
    std::size_t r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({r, c});
    std::vector<double> xhat(r * c), inv_sigma(r);
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += x.at(i, j);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double d = x.at(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[i] = is;
        for (std::size_t j = 0; j < c; ++j) {
            double h = (x.at(i, j) - mu) * is;
            xhat[i * c + j] = h;
            out.at(i, j) = gamma.data[j] * h + beta.data[j];
        }
    }
    if (t && (x.tracked() || gamma.tracked() || beta.tracked())) {
        int xn = x.node, gn = gamma.node, bn = beta.node;
        auto gam = gamma.data;
        out.node = t->push(r * c, [=](Tape& tp, const std::vector<double>& g) {
            if (gn >= 0 || bn >= 0) {
                std::vector<double> dg(c, 0.0), db(c, 0.0);
                for (std::size_t i = 0; i < r; ++i)
                    for (std::size_t j = 0; j < c; ++j) {
                        dg[j] += g[i * c + j] * xhat[i * c + j];
                        db[j] += g[i * c + j];
                    }
                if (gn >= 0) tp.accum(gn, dg);
                if (bn >= 0) tp.accum(bn, db);
            }
            if (xn >= 0) {
                std::vector<double> dx(r * c);
                for (std::size_t i = 0; i < r; ++i) {
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        double dh = g[i * c + j] * gam[j];
                        m1 += dh;
                        m2 += dh * xhat[i * c + j];
                    }
                    m1 /= static_cast<double>(c);
                    m2 /= static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        double dh = g[i * c + j] * gam[j];
                        dx[i * c + j] = inv_sigma[i] * (dh - m1 - xhat[i * c + j] * m2);
                    }
                }
                tp.accum(xn, dx);
            }
        });
    }
    return out;
}

Tensor concat_cols(Tape* t, const std::vector<Tensor>& parts) {
    if (parts.empty()) throw TensorError("concat_cols of nothing");
    std::size_t r = parts[0].rows(), c = 0;
    for (const auto& p : parts) {
        if (p.ndim() != 2 || p.rows() != r)
            throw TensorError("concat_cols row mismatch");
        c += p.cols();
    }
    Tensor out = Tensor::zeros({r, c});
    std::size_t off = 0;
    bool tracked = false;
    std::vector<int> nodes;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < r; ++i)
            std::copy(p.data.begin() + i * p.cols(), p.data.begin() + (i + 1) * p.cols(),
                      out.data.begin() + i * c + off);
        off += p.cols();
        nodes.push_back(p.node);
        widths.push_back(p.cols());
        tracked |= p.tracked();
    }
    if (t && tracked) {
        out.node = t->push(r * c, [=](Tape& tp, const std::vector<double>& g) {
            std::size_t o = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                if (nodes[k] >= 0) {
                    std::vector<double> d(r * widths[k]);
                    for (std::size_t i = 0; i < r; ++i)
                        std::copy(g.begin() + i * c + o, g.begin() + i * c + o + widths[k],
                                  d.begin() + i * widths[k]);
                    tp.accum(nodes[k], d);
                }
                o += widths[k];
            }
        });
    }
    return out;
}

Tensor slice_cols(Tape* t, const Tensor& a, std::size_t c0, std::size_t c1) {
    if (a.ndim() != 2 || c1 > a.cols() || c0 >= c1)
        throw TensorError("slice_cols bounds error");
    std::size_t r = a.rows(), c = a.cols(), w = c1 - c0;
    Tensor out = Tensor::zeros({r, w});
    for (std::size_t i = 0; i < r; ++i)
        std::copy(a.data.begin() + i * c + c0, a.data.begin() + i * c + c1,
                  out.data.begin() + i * w);
    if (want(t, a)) {
        int an = a.node;
        out.node = t->push(r * w, [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> d(r * c, 0.0);
            for (std::size_t i = 0; i < r; ++i)
                std::copy(g.begin() + i * w, g.begin() + (i + 1) * w,
                          d.begin() + i * c + c0);
            tp.accum(an, d);
        });
    }
    return out;
}

Tensor row(Tape* t, const Tensor& a, std::size_t i) {
    if (a.ndim() != 2 || i >= a.rows()) throw TensorError("row index out of range");
    std::size_t c = a.cols();
    Tensor out = Tensor::vec({a.data.begin() + i * c, a.data.begin() + (i + 1) * c});
    if (want(t, a)) {
        int an = a.node;
        std::size_t r = a.rows();
        out.node = t->push(c, [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> d(r * c, 0.0);
            std::copy(g.begin(), g.end(), d.begin() + i * c);
            tp.accum(an, d);
        });
    }
    return out;
}

Tensor concat(Tape* t, const std::vector<Tensor>& vecs) {
    if (vecs.empty()) throw TensorError("concat of nothing");
    std::size_t n = 0;
    bool tracked = false;
    for (const auto& v : vecs) {
        if (v.ndim() != 1) throw TensorError("concat expects 1-D tensors");
        n += v.shape[0];
        tracked |= v.tracked();
    }
    Tensor out = Tensor::zeros({n});
    std::size_t off = 0;
    std::vector<int> nodes;
    std::vector<std::size_t> lens;
    for (const auto& v : vecs) {
        std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
        off += v.shape[0];
        nodes.push_back(v.node);
        lens.push_back(v.shape[0]);
    }
    if (t && tracked) {
        out.node = t->push(n, [=](Tape& tp, const std::vector<double>& g) {
            std::size_t o = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                if (nodes[k] >= 0)
                    tp.accum(nodes[k], g.data() + o, lens[k]);
                o += lens[k];
            }
        });
    }
    return out;
}

Tensor gather_rows(Tape* t, const Tensor& table, const std::vector<std::size_t>& ids) {
    if (table.ndim() != 2) throw TensorError("gather_rows expects a matrix table");
    std::size_t v = table.rows(), d = table.cols(), l = ids.size();
    for (auto id : ids)
        if (id >= v)
            throw TensorError("gather_rows id " + std::to_string(id) +
                              " out of range for table with " + std::to_string(v) + " rows");
    Tensor out = Tensor::zeros({l, d});
    for (std::size_t i = 0; i < l; ++i)
        std::copy(table.data.begin() + ids[i] * d, table.data.begin() + (ids[i] + 1) * d,
                  out.data.begin() + i * d);
    if (want(t, table)) {
        int tn = table.node;
        out.node = t->push(l * d, [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> dt(v * d, 0.0);
            for (std::size_t i = 0; i < l; ++i)
                for (std::size_t j = 0; j < d; ++j) dt[ids[i] * d + j] += g[i * d + j];
            tp.accum(tn, dt);
        });
    }
    return out;
}

Tensor masked_mean_pool(Tape* t, const Tensor& tokens, const std::vector<double>& mask) {
    if (tokens.ndim() != 2 || mask.size() != tokens.rows())
        throw TensorError("masked_mean_pool shape mismatch");
    std::size_t l = tokens.rows(), d = tokens.cols();
    double cnt = 0.0;
    for (double m : mask) cnt += (m != 0.0) ? 1.0 : 0.0;
    if (cnt == 0.0) throw TensorError("masked_mean_pool: empty sequence (all-zero mask)");
    Tensor out = Tensor::zeros({d});
    for (std::size_t i = 0; i < l; ++i) {
        if (mask[i] == 0.0) continue;
        for (std::size_t j = 0; j < d; ++j) out.data[j] += tokens.at(i, j);
    }
    for (auto& x : out.data) x /= cnt;
    if (want(t, tokens)) {
        int tn = tokens.node;
        auto mk = mask;
        out.node = t->push(d, [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> dt(l * d, 0.0);
            for (std::size_t i = 0; i < l; ++i) {
                if (mk[i] == 0.0) continue;
                for (std::size_t j = 0; j < d; ++j) dt[i * d + j] = g[j] / cnt;
            }
            tp.accum(tn, dt);
        });
    }
    return out;
}

Tensor masked_max_pool(Tape* t, const Tensor& tokens, const std::vector<double>& mask) {
    if (tokens.ndim() != 2 || mask.size() != tokens.rows())
        throw TensorError("masked_max_pool shape mismatch");
    std::size_t l = tokens.rows(), d = tokens.cols();
    std::vector<std::size_t> argmax(d, l);
    Tensor out = Tensor::zeros({d});
    for (std::size_t j = 0; j < d; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < l; ++i) {
            if (mask[i] == 0.0) continue;
            if (tokens.at(i, j) > best) {
                best = tokens.at(i, j);
                argmax[j] = i;
            }
        }
        if (argmax[j] == l)
            throw TensorError("masked_max_pool: empty sequence (all-zero mask)");
        out.data[j] = best;
    }
    if (want(t, tokens)) {
        int tn = tokens.node;
        out.node = t->push(d, [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> dt(l * d, 0.0);
            for (std::size_t j = 0; j < d; ++j) dt[argmax[j] * d + j] = g[j];
            tp.accum(tn, dt);
        });
    }
    return out;
}

Tensor l2_normalize(Tape* t, const Tensor& v) {
    if (v.ndim() != 1) throw TensorError("l2_normalize expects a vector");
    double nrm = 0.0;
    for (double x : v.data) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm <= 1e-12)
        throw TensorError("l2_normalize: degenerate near-zero vector (norm " +
                          std::to_string(nrm) + ")");
    Tensor out = v;
    out.node = -1;
    for (auto& x : out.data) x /= nrm;
    if (want(t, v)) {
        int vn = v.node;
        auto y = out.data;
        out.node = t->push(y.size(), [=](Tape& tp, const std::vector<double>& g) {
            double yg = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) yg += y[i] * g[i];
            std::vector<double> d(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) d[i] = (g[i] - y[i] * yg) / nrm;
            tp.accum(vn, d);
        });
    }
    return out;
}

Tensor dot(Tape* t, const Tensor& a, const Tensor& b) {
    if (a.ndim() != 1 || a.shape != b.shape)
        throw TensorError("dot shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    Tensor out = Tensor::scalar_of(s);
    if (want(t, a, b)) {
        auto ad = a.data, bd = b.data;
        int an = a.node, bn = b.node;
        out.node = t->push(1, [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> d(ad.size());
            if (an >= 0) {
                for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[0] * bd[i];
                tp.accum(an, d);
            }
            if (bn >= 0) {
                for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[0] * ad[i];
                tp.accum(bn, d);
            }
        });
    }
    return out;
}

Tensor matvec_const(Tape* t, const Tensor& m, const Tensor& v) {
    if (m.ndim() != 2 || v.ndim() != 1 || m.cols() != v.shape[0])
        throw TensorError("matvec_const shape mismatch: " + m.shape_str() + " * " +
                          v.shape_str());
    std::size_t k = m.rows(), d = m.cols();
    Tensor out = Tensor::zeros({k});
    for (std::size_t i = 0; i < k; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += m.at(i, j) * v.data[j];
        out.data[i] = s;
    }
    if (want(t, v)) {
        auto md = m.data;
        int vn = v.node;
        out.node = t->push(k, [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> dv(d, 0.0);
            for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < d; ++j) dv[j] += g[i] * md[i * d + j];
            tp.accum(vn, dv);
        });
    }
    return out;
}

Tensor sum(Tape* t, const Tensor& a) {
    double s = 0.0;
    for (double x : a.data) s += x;
    Tensor out = Tensor::scalar_of(s);
    if (want(t, a)) {
        int an = a.node;
        std::size_t n = a.data.size();
        out.node = t->push(1, [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> d(n, g[0]);
            tp.accum(an, d);
        });
    }
    return out;
}

Tensor infonce(Tape* t, const Tensor& similarity_row, double gamma) {
    if (similarity_row.ndim() != 1 || similarity_row.shape[0] < 1)
        throw TensorError("infonce expects a non-empty similarity row");
    if (gamma <= 0.0) throw TensorError("infonce temperature must be positive");
    std::size_t n = similarity_row.shape[0];
    // softmax over the row at temperature gamma, max-subtracted
    std::vector<double> p(n);
    double mx = -std::numeric_limits<double>::infinity();
    for (double s : similarity_row.data) mx = std::max(mx, s / gamma);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        p[i] = std::exp(similarity_row.data[i] / gamma - mx);
        z += p[i];
    }
    for (auto& x : p) x /= z;
    double loss = -(similarity_row.data[0] / gamma - mx - std::log(z));
    Tensor out = Tensor::scalar_of(loss);
    check_finite(out, "infonce");
    if (want(t, similarity_row)) {
        int rn = similarity_row.node;
        out.node = t->push(1, [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> d(n);
            for (std::size_t i = 0; i < n; ++i)
                d[i] = g[0] * (p[i] - (i == 0 ? 1.0 : 0.0)) / gamma;
            tp.accum(rn, d);
        });
    }
    return out;
}

Tensor triplet_hinge(Tape* t, const Tensor& sim_matrix, double margin) {
    if (sim_matrix.ndim() != 2 || sim_matrix.rows() != sim_matrix.cols())
        throw TensorError("triplet_hinge expects a square similarity matrix");
    std::size_t b = sim_matrix.rows();
    if (b < 2) throw TensorError("triplet_hinge requires batch >= 2");
    double total = 0.0;
    // (i, hardest j, violation) per direction
    std::vector<std::size_t> row_j(b), col_j(b);
    std::vector<double> row_v(b, 0.0), col_v(b, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        double pos = sim_matrix.at(i, i);
        double best_r = -std::numeric_limits<double>::infinity();
        double best_c = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            if (sim_matrix.at(i, j) > best_r) { best_r = sim_matrix.at(i, j); row_j[i] = j; }
            if (sim_matrix.at(j, i) > best_c) { best_c = sim_matrix.at(j, i); col_j[i] = j; }
        }
        row_v[i] = std::max(0.0, margin - pos + best_r);
        col_v[i] = std::max(0.0, margin - pos + best_c);
        total += row_v[i] + col_v[i];
    }
    total /= static_cast<double>(b);
    Tensor out = Tensor::scalar_of(total);
    if (want(t, sim_matrix)) {
        int sn = sim_matrix.node;
        out.node = t->push(1, [=](Tape& tp, const std::vector<double>& g) {
            std::vector<double> d(b * b, 0.0);
            double w = g[0] / static_cast<double>(b);
            for (std::size_t i = 0; i < b; ++i) {
                if (row_v[i] > 0.0) {
                    d[i * b + i] -= w;
                    d[i * b + row_j[i]] += w;
                }
                if (col_v[i] > 0.0) {
                    d[i * b + i] -= w;
                    d[col_j[i] * b + i] += w;
                }
            }
            tp.accum(sn, d);
        });
    }
    return out;
}

Tensor batch_norm(Tape* t, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  std::vector<double>* running_mean, std::vector<double>* running_var,
                  bool training, double momentum, double eps) {
    if (x.ndim() != 2) throw TensorError("batch_norm expects a matrix");
    std::size_t b = x.rows(), d = x.cols();
    if (gamma.shape != std::vector<std::size_t>{d} || beta.shape != gamma.shape)
        throw TensorError("batch_norm affine shape mismatch");
    if (!running_mean || !running_var || running_mean->size() != d || running_var->size() != d)
        throw TensorError("batch_norm running buffers missing or mis-sized");
    Tensor out = Tensor::zeros({b, d});
    if (training) {
        if (b < 2) throw TensorError("batch_norm training requires batch >= 2");
        std::vector<double> mu(d, 0.0), var(d, 0.0), inv_sigma(d), xhat(b * d);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) mu[j] += x.at(i, j);
        for (auto& m : mu) m /= static_cast<double>(b);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double dv = x.at(i, j) - mu[j];
                var[j] += dv * dv;
            }
        for (auto& v : var) v /= static_cast<double>(b);
        for (std::size_t j = 0; j < d; ++j) {
            inv_sigma[j] = 1.0 / std::sqrt(var[j] + eps);
            double unbiased = var[j] * static_cast<double>(b) / static_cast<double>(b - 1);
            (*running_mean)[j] = (1.0 - momentum) * (*running_mean)[j] + momentum * mu[j];
            (*running_var)[j] = (1.0 - momentum) * (*running_var)[j] + momentum * unbiased;
        }
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double h = (x.at(i, j) - mu[j]) * inv_sigma[j];
                xhat[i * d + j] = h;
                out.at(i, j) = gamma.data[j] * h + beta.data[j];
            }
        if (t && (x.tracked() || gamma.tracked() || beta.tracked())) {
            int xn = x.node, gn = gamma.node, bn = beta.node;
            auto gam = gamma.data;
            out.node = t->push(b * d, [=](Tape& tp, const std::vector<double>& g) {
                if (gn >= 0 || bn >= 0) {
                    std::vector<double> dg(d, 0.0), db(d, 0.0);
                    for (std::size_t i = 0; i < b; ++i)
                        for (std::size_t j = 0; j < d; ++j) {
                            dg[j] += g[i * d + j] * xhat[i * d + j];
                            db[j] += g[i * d + j];
                        }
                    if (gn >= 0) tp.accum(gn, dg);
                    if (bn >= 0) tp.accum(bn, db);
                }
                if (xn >= 0) {
                    std::vector<double> dx(b * d);
                    for (std::size_t j = 0; j < d; ++j) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t i = 0; i < b; ++i) {
                            double dh = g[i * d + j] * gam[j];
                            m1 += dh;
                            m2 += dh * xhat[i * d + j];
                        }
                        m1 /= static_cast<double>(b);
                        m2 /= static_cast<double>(b);
                        for (std::size_t i = 0; i < b; ++i) {
                            double dh = g[i * d + j] * gam[j];
                            dx[i * d + j] =
                                inv_sigma[j] * (dh - m1 - xhat[i * d + j] * m2);
                        }
                    }
                    tp.accum(xn, dx);
                }
            });
        }
    } else {
        std::vector<double> inv_sigma(d), xhat(b * d);
        for (std::size_t j = 0; j < d; ++j)
            inv_sigma[j] = 1.0 / std::sqrt((*running_var)[j] + eps);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                double h = (x.at(i, j) - (*running_mean)[j]) * inv_sigma[j];
                xhat[i * d + j] = h;
                out.at(i, j) = gamma.data[j] * h + beta.data[j];
            }
        if (t && (x.tracked() || gamma.tracked() || beta.tracked())) {
            int xn = x.node, gn = gamma.node, bn = beta.node;
            auto gam = gamma.data;
            out.node = t->push(b * d, [=](Tape& tp, const std::vector<double>& g) {
                if (gn >= 0 || bn >= 0) {
                    std::vector<double> dg(d, 0.0), db(d, 0.0);
                    for (std::size_t i = 0; i < b; ++i)
                        for (std::size_t j = 0; j < d; ++j) {
                            dg[j] += g[i * d + j] * xhat[i * d + j];
                            db[j] += g[i * d + j];
                        }
                    if (gn >= 0) tp.accum(gn, dg);
                    if (bn >= 0) tp.accum(bn, db);
                }
                if (xn >= 0) {
                    std::vector<double> dx(b * d);
                    for (std::size_t i = 0; i < b; ++i)
                        for (std::size_t j = 0; j < d; ++j)
                            dx[i * d + j] = g[i * d + j] * gam[j] * inv_sigma[j];
                    tp.accum(xn, dx);
                }
            });
        }
    }
    return out;
}

}  // namespace ops
}  // namespace cmr
