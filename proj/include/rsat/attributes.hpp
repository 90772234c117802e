// Span pooling and per-span attribute classification heads.
#pragma once

#include <string>
#include <vector>

#include "rsat/corpus.hpp"
#include "rsat/encoder.hpp"
#include "rsat/graph.hpp"

namespace rsat {

enum class AggMode { Mean, Sum };

// Pooled span representation over h[i..j).
inline Var aggregate(Graph& g, const std::vector<Var>& h, int i, int j,
                     AggMode mode = AggMode::Mean) {
  if (i < 0 || i >= j || j > static_cast<int>(h.size()))
    throw std::invalid_argument("aggregate: empty or out-of-range span");
  std::vector<Var> parts(h.begin() + i, h.begin() + j);
  Var sum = g.add_n(parts);
  if (mode == AggMode::Sum) return sum;
  return g.scale(sum, 1.0 / static_cast<double>(j - i));
}

struct AttributeHead {
  std::string name;
  int n_classes = 0;
  Parameter* w = nullptr;  // [n_classes x dim]
  Parameter* b = nullptr;  // [n_classes]
};

inline AttributeHead make_head(ParamStore& store, const std::string& name,
                               int n_classes, int dim, Rng& rng) {
  if (n_classes < 2) throw ConfigError("attribute head needs >= 2 classes");
  AttributeHead h;
  h.name = name;
  h.n_classes = n_classes;
  h.w = &store.add("head." + name + ".W", {n_classes, dim});
  h.b = &store.add("head." + name + ".b", {n_classes});
  init::uniform_fan_in(*h.w, dim, rng);
  return h;
}

inline Var head_logits(Graph& g, const AttributeHead& head, Var repr,
                       const ForwardOpts& opts = {}) {
  Var w = g.param(*head.w);
  if (g.train_mode() && opts.vn_std > 0.0 && opts.rng)
    w = g.gaussian_noise(w, opts.vn_std, *opts.rng);
  return g.add(g.matvec(w, repr), g.param(*head.b));
}

// Class distribution for a pooled span representation (plain inference).
inline std::vector<double> classify(const AttributeHead& head,
                                    const Tensor& repr) {
  std::vector<double> logits(head.n_classes);
  for (int c = 0; c < head.n_classes; ++c) {
    double s = head.b->value.at(c);
    for (int d = 0; d < repr.size(); ++d)
      s += head.w->value.at(c, d) * repr.at(d);
    logits[c] = s;
  }
  double mx = logits[0];
  for (double x : logits) mx = std::max(mx, x);
  double z = 0.0;
  for (double& x : logits) {
    x = std::exp(x - mx);
    z += x;
  }
  for (double& x : logits) x /= z;
  return logits;
}

// Head names per (task, span kind). Rx entities are open-set: their value is
// the verbatim text, so they carry no classification heads.
inline std::vector<std::string> attributes_for(Task task, SpanKind kind) {
  if (task == Task::Sx) {
    if (kind == SpanKind::Entity) return {kAttrSymType, kAttrSymStatus};
    return {kAttrPropType};
  }
  if (kind == SpanKind::Entity) return {};
  return {kAttrPropType};
}

}  // namespace rsat
