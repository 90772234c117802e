// Reverse-mode automatic differentiation over a fixed op set.
//
// Each op appends a node to the tape and registers its own backward rule as a
// closure over the parent indices. backward() walks the tape in reverse
// creation order, which is a valid topological order because ops can only
// reference earlier nodes.
#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rsat/rng.hpp"
#include "rsat/tensor.hpp"

namespace rsat {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

// Owns named parameters in insertion order. Addresses are stable, so layers
// keep raw Parameter pointers.
class ParamStore {
 public:
  Parameter& add(const std::string& name, std::vector<int> shape) {
    if (find(name) != nullptr)
      throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Tensor::zeros(shape);
    p->grad = Tensor::zeros(shape);
    items_.push_back(std::move(p));
    return *items_.back();
  }

  Parameter* find(const std::string& name) {
    for (auto& p : items_)
      if (p->name == name) return p.get();
    return nullptr;
  }
  const Parameter* find(const std::string& name) const {
    for (auto& p : items_)
      if (p->name == name) return p.get();
    return nullptr;
  }

  std::size_t size() const { return items_.size(); }
  Parameter& operator[](std::size_t i) { return *items_[i]; }
  const Parameter& operator[](std::size_t i) const { return *items_[i]; }

  void zero_grads() {
    for (auto& p : items_) p->zero_grad();
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Graph {
 public:
  explicit Graph(bool train_mode = false) : train_mode_(train_mode) {}

  bool train_mode() const { return train_mode_; }

  const Tensor& value(Var x) const { return nodes_[check(x)].val; }
  Tensor& grad(Var x) { return nodes_[check(x)].grad; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor t) { return push(std::move(t), nullptr); }

  // Read-only leaf over a parameter value, for graphs that never run
  // backward (inference paths).
  Var frozen(const Parameter& p) { return push(p.value, nullptr); }

  // Leaf bound to an external parameter; backward accumulates into p.grad.
  Var param(Parameter& p) {
    Var out = push(p.value, nullptr);
    int id = out.id;
    nodes_[id].back = [this, id, &p] {
      const Tensor& g = nodes_[id].grad;
      for (int i = 0; i < g.size(); ++i) p.grad.at(i) += g.at(i);
    };
    return out;
  }

  // Escape hatch used by tests to install arbitrary (possibly wrong) rules.
  Var make_node(Tensor val, std::function<void(Graph&)> back) {
    Var out = push(std::move(val), nullptr);
    int id = out.id;
    if (back) nodes_[id].back = [this, back] { back(*this); };
    return out;
  }

  Var add(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    check_same_shape(ta, tb, "add");
    Tensor out = ta;
    for (int i = 0; i < out.size(); ++i) out.at(i) += tb.at(i);
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id, bid = b.id;
    nodes_[oid].back = [this, oid, aid, bid] {
      const Tensor& g = nodes_[oid].grad;
      accum(aid, g);
      accum(bid, g);
    };
    return o;
  }

  Var sub(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    check_same_shape(ta, tb, "sub");
    Tensor out = ta;
    for (int i = 0; i < out.size(); ++i) out.at(i) -= tb.at(i);
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id, bid = b.id;
    nodes_[oid].back = [this, oid, aid, bid] {
      const Tensor& g = nodes_[oid].grad;
      accum(aid, g);
      Tensor& gb = nodes_[bid].grad;
      for (int i = 0; i < g.size(); ++i) gb.at(i) -= g.at(i);
    };
    return o;
  }

  Var mul(Var a, Var b) {  // elementwise
    const Tensor &ta = value(a), &tb = value(b);
    check_same_shape(ta, tb, "mul");
    Tensor out = ta;
    for (int i = 0; i < out.size(); ++i) out.at(i) *= tb.at(i);
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id, bid = b.id;
    nodes_[oid].back = [this, oid, aid, bid] {
      const Tensor& g = nodes_[oid].grad;
      const Tensor &ta2 = nodes_[aid].val, &tb2 = nodes_[bid].val;
      Tensor &ga = nodes_[aid].grad, &gb = nodes_[bid].grad;
      for (int i = 0; i < g.size(); ++i) {
        ga.at(i) += g.at(i) * tb2.at(i);
        gb.at(i) += g.at(i) * ta2.at(i);
      }
    };
    return o;
  }

  Var scale(Var a, double c) {
    Tensor out = value(a);
    for (int i = 0; i < out.size(); ++i) out.at(i) *= c;
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid, c] {
      const Tensor& g = nodes_[oid].grad;
      Tensor& ga = nodes_[aid].grad;
      for (int i = 0; i < g.size(); ++i) ga.at(i) += c * g.at(i);
    };
    return o;
  }

  // [m x n] * [n x p] -> [m x p]
  Var matmul(Var a, Var b) {
    const Tensor &A = value(a), &B = value(b);
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.cols() != B.rows())
      throw std::invalid_argument("matmul: shape mismatch " + A.shape_str() +
                                  " vs " + B.shape_str());
    int m = A.rows(), n = A.cols(), p = B.cols();
    Tensor out = Tensor::zeros({m, p});
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < n; ++k) {
        double aik = A.at(i, k);
        for (int j = 0; j < p; ++j) out.at(i, j) += aik * B.at(k, j);
      }
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id, bid = b.id;
    nodes_[oid].back = [this, oid, aid, bid, m, n, p] {
      const Tensor& g = nodes_[oid].grad;
      const Tensor &A2 = nodes_[aid].val, &B2 = nodes_[bid].val;
      Tensor &ga = nodes_[aid].grad, &gb = nodes_[bid].grad;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < p; ++j) {
          double gij = g.at(i, j);
          for (int k = 0; k < n; ++k) {
            ga.at(i, k) += gij * B2.at(k, j);
            gb.at(k, j) += A2.at(i, k) * gij;
          }
        }
    };
    return o;
  }

  // [m x n] * [n] -> [m]
  Var matvec(Var a, Var x) {
    const Tensor &A = value(a), &X = value(x);
    if (A.shape.size() != 2 || X.shape.size() != 1 || A.cols() != X.dim(0))
      throw std::invalid_argument("matvec: shape mismatch " + A.shape_str() +
                                  " vs " + X.shape_str());
    int m = A.rows(), n = A.cols();
    Tensor out = Tensor::zeros({m});
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      const double* row = &A.v[static_cast<std::size_t>(i) * n];
      for (int k = 0; k < n; ++k) s += row[k] * X.at(k);
      out.at(i) = s;
    }
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id, xid = x.id;
    nodes_[oid].back = [this, oid, aid, xid, m, n] {
      const Tensor& g = nodes_[oid].grad;
      const Tensor &A2 = nodes_[aid].val, &X2 = nodes_[xid].val;
      Tensor &ga = nodes_[aid].grad, &gx = nodes_[xid].grad;
      for (int i = 0; i < m; ++i) {
        double gi = g.at(i);
        if (gi == 0.0) continue;
        double* garow = &ga.v[static_cast<std::size_t>(i) * n];
        const double* arow = &A2.v[static_cast<std::size_t>(i) * n];
        for (int k = 0; k < n; ++k) {
          garow[k] += gi * X2.at(k);
          gx.at(k) += gi * arow[k];
        }
      }
    };
    return o;
  }

  Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat: empty input");
    int total = 0;
    for (Var p : parts) total += value(p).size();
    Tensor out = Tensor::zeros({total});
    int off = 0;
    for (Var p : parts) {
      const Tensor& t = value(p);
      for (int i = 0; i < t.size(); ++i) out.at(off + i) = t.at(i);
      off += t.size();
    }
    std::vector<int> ids;
    for (Var p : parts) ids.push_back(p.id);
    Var o = push(std::move(out), nullptr);
    int oid = o.id;
    nodes_[oid].back = [this, oid, ids] {
      const Tensor& g = nodes_[oid].grad;
      int off2 = 0;
      for (int pid : ids) {
        Tensor& gp = nodes_[pid].grad;
        for (int i = 0; i < gp.size(); ++i) gp.at(i) += g.at(off2 + i);
        off2 += gp.size();
      }
    };
    return o;
  }

  Var slice(Var a, int offset, int len) {
    const Tensor& t = value(a);
    if (offset < 0 || len <= 0 || offset + len > t.size())
      throw std::invalid_argument("slice: out of range");
    Tensor out = Tensor::zeros({len});
    for (int i = 0; i < len; ++i) out.at(i) = t.at(offset + i);
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid, offset, len] {
      const Tensor& g = nodes_[oid].grad;
      Tensor& ga = nodes_[aid].grad;
      for (int i = 0; i < len; ++i) ga.at(offset + i) += g.at(i);
    };
    return o;
  }

  // Same data, new shape.
  Var reshape(Var a, std::vector<int> shape) {
    const Tensor& t = value(a);
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    if (n != t.v.size()) throw std::invalid_argument("reshape: size mismatch");
    Tensor out = t;
    out.shape = std::move(shape);
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid] { accum(aid, nodes_[oid].grad); };
    return o;
  }

  // Submatrix [r0, r0+rows) x [c0, c0+cols).
  Var block(Var a, int r0, int c0, int rows, int cols) {
    const Tensor& t = value(a);
    if (t.shape.size() != 2 || r0 < 0 || c0 < 0 || r0 + rows > t.rows() ||
        c0 + cols > t.cols())
      throw std::invalid_argument("block: out of range");
    Tensor out = Tensor::zeros({rows, cols});
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) out.at(i, j) = t.at(r0 + i, c0 + j);
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid, r0, c0, rows, cols] {
      const Tensor& g = nodes_[oid].grad;
      Tensor& ga = nodes_[aid].grad;
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) ga.at(r0 + i, c0 + j) += g.at(i, j);
    };
    return o;
  }

  // Row r of a matrix parameter/value (embedding lookup).
  Var row(Var a, int r) {
    const Tensor& t = value(a);
    if (t.shape.size() != 2 || r < 0 || r >= t.rows())
      throw std::invalid_argument("row: index out of range");
    int n = t.cols();
    Tensor out = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) out.at(i) = t.at(r, i);
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid, r, n] {
      const Tensor& g = nodes_[oid].grad;
      Tensor& ga = nodes_[aid].grad;
      for (int i = 0; i < n; ++i) ga.at(r, i) += g.at(i);
    };
    return o;
  }

  Var tanh_op(Var a) {
    Tensor out = value(a);
    for (int i = 0; i < out.size(); ++i) out.at(i) = std::tanh(out.at(i));
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid] {
      const Tensor& g = nodes_[oid].grad;
      const Tensor& y = nodes_[oid].val;
      Tensor& ga = nodes_[aid].grad;
      for (int i = 0; i < g.size(); ++i)
        ga.at(i) += g.at(i) * (1.0 - y.at(i) * y.at(i));
    };
    return o;
  }

  Var sigmoid_op(Var a) {
    Tensor out = value(a);
    for (int i = 0; i < out.size(); ++i)
      out.at(i) = 1.0 / (1.0 + std::exp(-out.at(i)));
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid] {
      const Tensor& g = nodes_[oid].grad;
      const Tensor& y = nodes_[oid].val;
      Tensor& ga = nodes_[aid].grad;
      for (int i = 0; i < g.size(); ++i)
        ga.at(i) += g.at(i) * y.at(i) * (1.0 - y.at(i));
    };
    return o;
  }

  // Inverted dropout: scales kept units by 1/keep so inference needs no
  // rescaling. Identity when rate == 0 or the graph is not in train mode.
  Var dropout(Var a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
      throw std::invalid_argument("dropout: rate must be in [0,1)");
    if (!train_mode_ || rate == 0.0) return a;
    const Tensor& t = value(a);
    double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(t.v.size());
    Tensor out = t;
    for (int i = 0; i < t.size(); ++i) {
      double m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
      (*mask)[static_cast<std::size_t>(i)] = m;
      out.at(i) *= m;
    }
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid, mask] {
      const Tensor& g = nodes_[oid].grad;
      Tensor& ga = nodes_[aid].grad;
      for (int i = 0; i < g.size(); ++i)
        ga.at(i) += g.at(i) * (*mask)[static_cast<std::size_t>(i)];
    };
    return o;
  }

  // Zero-mean gaussian perturbation at forward time; gradient passes through.
  Var gaussian_noise(Var a, double stddev, Rng& rng) {
    if (!train_mode_ || stddev == 0.0) return a;
    Tensor out = value(a);
    for (int i = 0; i < out.size(); ++i) out.at(i) += stddev * rng.normal();
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid] { accum(aid, nodes_[oid].grad); };
    return o;
  }

  // Max-shifted log(sum(exp(v))) for a vector; returns a scalar.
  Var log_sum_exp(Var a) {
    const Tensor& t = value(a);
    if (t.size() == 0) throw std::invalid_argument("log_sum_exp: empty input");
    double m = t.at(0);
    for (int i = 1; i < t.size(); ++i) m = std::max(m, t.at(i));
    double s = 0.0;
    for (int i = 0; i < t.size(); ++i) s += std::exp(t.at(i) - m);
    Var o = push(Tensor::scalar(m + std::log(s)), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid] {
      double g = nodes_[oid].grad.at(0);
      double lse = nodes_[oid].val.at(0);
      const Tensor& x = nodes_[aid].val;
      Tensor& ga = nodes_[aid].grad;
      for (int i = 0; i < x.size(); ++i)
        ga.at(i) += g * std::exp(x.at(i) - lse);
    };
    return o;
  }

  // out[j] = log sum_i exp(x[i] + A[i][j]); the lattice step of the CRF
  // forward recursion. x is [K], A is [K x K].
  Var lse_affine(Var x, Var a) {
    const Tensor &X = value(x), &A = value(a);
    if (X.shape.size() != 1 || A.shape.size() != 2 || A.rows() != X.dim(0) ||
        A.cols() != X.dim(0))
      throw std::invalid_argument("lse_affine: shape mismatch " +
                                  X.shape_str() + " vs " + A.shape_str());
    int k = X.dim(0);
    Tensor out = Tensor::zeros({k});
    for (int j = 0; j < k; ++j) {
      double m = X.at(0) + A.at(0, j);
      for (int i = 1; i < k; ++i) m = std::max(m, X.at(i) + A.at(i, j));
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += std::exp(X.at(i) + A.at(i, j) - m);
      out.at(j) = m + std::log(s);
    }
    Var o = push(std::move(out), nullptr);
    int oid = o.id, xid = x.id, aid = a.id;
    nodes_[oid].back = [this, oid, xid, aid, k] {
      const Tensor& g = nodes_[oid].grad;
      const Tensor& lse = nodes_[oid].val;
      const Tensor &X2 = nodes_[xid].val, &A2 = nodes_[aid].val;
      Tensor &gx = nodes_[xid].grad, &ga = nodes_[aid].grad;
      for (int j = 0; j < k; ++j) {
        double gj = g.at(j);
        if (gj == 0.0) continue;
        for (int i = 0; i < k; ++i) {
          double w = std::exp(X2.at(i) + A2.at(i, j) - lse.at(j));
          gx.at(i) += gj * w;
          ga.at(i, j) += gj * w;
        }
      }
    };
    return o;
  }

  Var softmax(Var a) {
    const Tensor& t = value(a);
    if (t.size() == 0) throw std::invalid_argument("softmax: empty input");
    double m = t.at(0);
    for (int i = 1; i < t.size(); ++i) m = std::max(m, t.at(i));
    Tensor out = t;
    double s = 0.0;
    for (int i = 0; i < t.size(); ++i) {
      out.at(i) = std::exp(t.at(i) - m);
      s += out.at(i);
    }
    for (int i = 0; i < t.size(); ++i) out.at(i) /= s;
    Var o = push(std::move(out), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid] {
      const Tensor& g = nodes_[oid].grad;
      const Tensor& y = nodes_[oid].val;
      Tensor& ga = nodes_[aid].grad;
      double dot = 0.0;
      for (int i = 0; i < g.size(); ++i) dot += g.at(i) * y.at(i);
      for (int i = 0; i < g.size(); ++i)
        ga.at(i) += y.at(i) * (g.at(i) - dot);
    };
    return o;
  }

  Var pick(Var a, int idx) {
    const Tensor& t = value(a);
    if (idx < 0 || idx >= t.size())
      throw std::invalid_argument("pick: index out of range");
    Var o = push(Tensor::scalar(t.at(idx)), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid, idx] {
      nodes_[aid].grad.at(idx) += nodes_[oid].grad.at(0);
    };
    return o;
  }

  Var pick2(Var a, int r, int c) {
    const Tensor& t = value(a);
    return pick(a, r * t.cols() + c);
  }

  Var dot(Var a, Var b) {
    const Tensor &ta = value(a), &tb = value(b);
    check_same_shape(ta, tb, "dot");
    double s = 0.0;
    for (int i = 0; i < ta.size(); ++i) s += ta.at(i) * tb.at(i);
    Var o = push(Tensor::scalar(s), nullptr);
    int oid = o.id, aid = a.id, bid = b.id;
    nodes_[oid].back = [this, oid, aid, bid] {
      double g = nodes_[oid].grad.at(0);
      const Tensor &ta2 = nodes_[aid].val, &tb2 = nodes_[bid].val;
      Tensor &ga = nodes_[aid].grad, &gb = nodes_[bid].grad;
      for (int i = 0; i < ta2.size(); ++i) {
        ga.at(i) += g * tb2.at(i);
        gb.at(i) += g * ta2.at(i);
      }
    };
    return o;
  }

  Var add_n(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("add_n: empty input");
    Tensor out = value(parts[0]);
    for (std::size_t p = 1; p < parts.size(); ++p) {
      const Tensor& t = value(parts[p]);
      check_same_shape(out, t, "add_n");
      for (int i = 0; i < out.size(); ++i) out.at(i) += t.at(i);
    }
    std::vector<int> ids;
    for (Var p : parts) ids.push_back(p.id);
    Var o = push(std::move(out), nullptr);
    int oid = o.id;
    nodes_[oid].back = [this, oid, ids] {
      const Tensor& g = nodes_[oid].grad;
      for (int pid : ids) accum(pid, g);
    };
    return o;
  }

  Var mean_vars(const std::vector<Var>& parts) {
    return scale(add_n(parts), 1.0 / static_cast<double>(parts.size()));
  }

  // Scalars -> vector.
  Var stack(const std::vector<Var>& scalars) {
    if (scalars.empty()) throw std::invalid_argument("stack: empty input");
    Tensor out = Tensor::zeros({static_cast<int>(scalars.size())});
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      const Tensor& t = value(scalars[i]);
      if (t.size() != 1) throw std::invalid_argument("stack: non-scalar part");
      out.at(static_cast<int>(i)) = t.at(0);
    }
    std::vector<int> ids;
    for (Var p : scalars) ids.push_back(p.id);
    Var o = push(std::move(out), nullptr);
    int oid = o.id;
    nodes_[oid].back = [this, oid, ids] {
      const Tensor& g = nodes_[oid].grad;
      for (std::size_t i = 0; i < ids.size(); ++i)
        nodes_[ids[i]].grad.at(0) += g.at(static_cast<int>(i));
    };
    return o;
  }

  Var sum_squares(Var a) {
    const Tensor& t = value(a);
    double s = 0.0;
    for (int i = 0; i < t.size(); ++i) s += t.at(i) * t.at(i);
    Var o = push(Tensor::scalar(s), nullptr);
    int oid = o.id, aid = a.id;
    nodes_[oid].back = [this, oid, aid] {
      double g = nodes_[oid].grad.at(0);
      const Tensor& x = nodes_[aid].val;
      Tensor& ga = nodes_[aid].grad;
      for (int i = 0; i < x.size(); ++i) ga.at(i) += 2.0 * g * x.at(i);
    };
    return o;
  }

  // -log softmax(logits)[target]
  Var cross_entropy(Var logits, int target) {
    return sub(log_sum_exp(logits), pick(logits, target));
  }

  // Sum of binary cross-entropies from logits against 0/1 targets, computed
  // in the numerically stable max(x,0) - x*y + log(1+exp(-|x|)) form.
  Var bce_logits(Var logits, const std::vector<double>& targets) {
    const Tensor& t = value(logits);
    if (static_cast<std::size_t>(t.size()) != targets.size())
      throw std::invalid_argument("bce_logits: target size mismatch");
    double s = 0.0;
    for (int i = 0; i < t.size(); ++i) {
      double x = t.at(i), y = targets[static_cast<std::size_t>(i)];
      s += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::fabs(x)));
    }
    auto tgt = std::make_shared<std::vector<double>>(targets);
    Var o = push(Tensor::scalar(s), nullptr);
    int oid = o.id, aid = logits.id;
    nodes_[oid].back = [this, oid, aid, tgt] {
      double g = nodes_[oid].grad.at(0);
      const Tensor& x = nodes_[aid].val;
      Tensor& ga = nodes_[aid].grad;
      for (int i = 0; i < x.size(); ++i) {
        double sig = 1.0 / (1.0 + std::exp(-x.at(i)));
        ga.at(i) += g * (sig - (*tgt)[static_cast<std::size_t>(i)]);
      }
    };
    return o;
  }

  // Reverse sweep from a scalar loss.
  void backward(Var loss) {
    const Tensor& t = value(loss);
    if (t.size() != 1) throw std::invalid_argument("backward: loss not scalar");
    for (auto& n : nodes_)
      if (n.grad.size() == 0) n.grad = Tensor::zeros(n.val.shape);
    nodes_[loss.id].grad.at(0) = 1.0;
    for (int i = loss.id; i >= 0; --i)
      if (nodes_[i].back) nodes_[i].back();
  }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    std::function<void()> back;
  };

  int check(Var x) const {
    if (!x.valid() || x.id >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("invalid Var");
    return x.id;
  }

  Var push(Tensor val, std::function<void()> back) {
    Node n;
    n.val = std::move(val);
    n.grad = Tensor::zeros(n.val.shape);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void accum(int id, const Tensor& g) {
    Tensor& dst = nodes_[id].grad;
    for (int i = 0; i < g.size(); ++i) dst.at(i) += g.at(i);
  }

  // deque keeps references from value()/grad() stable as the tape grows
  std::deque<Node> nodes_;
  bool train_mode_;
};

}  // namespace rsat
