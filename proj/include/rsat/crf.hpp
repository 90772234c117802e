// Generic-tag BIO span extraction: linear-chain CRF scoring, exact
// log-likelihood through the forward recursion in log space, Viterbi
// decoding, and span assembly.
//
// Transition scores live in a learned matrix indexed over the tag set plus
// START/STOP boundary states. BIO validity is enforced with an additive
// constant mask (-1e30 on invalid transitions) applied at both training and
// decode time, so the learned matrix itself stays finite and regularizable.
#pragma once

#include <string>
#include <vector>

#include "rsat/corpus.hpp"
#include "rsat/encoder.hpp"
#include "rsat/graph.hpp"

namespace rsat {

constexpr double kMaskedScore = -1e30;

struct TagSet {
  std::vector<std::string> names;  // index 0 is O
  // parallel arrays: tag kind and B/I role (O has role 0, B=1, I=2)
  std::vector<SpanKind> kinds;
  std::vector<int> roles;

  int size() const { return static_cast<int>(names.size()); }
  bool is_b(int t) const { return roles[t] == 1; }
  bool is_i(int t) const { return roles[t] == 2; }
  SpanKind kind_of(int t) const { return kinds[t]; }

  // I may only follow B or I of the same type.
  bool valid_transition(int from, int to) const {
    if (!is_i(to)) return true;
    return (is_b(from) || is_i(from)) && kinds[from] == kinds[to] &&
           names[from].substr(0, names[from].size() - 2) ==
               names[to].substr(0, names[to].size() - 2);
  }
  bool valid_start(int to) const { return !is_i(to); }

  static TagSet generic(Task task) {
    TagSet ts;
    const char* e = task == Task::Sx ? "sym" : "med";
    const char* p = task == Task::Sx ? "symprop" : "medsprop";
    ts.names = {"O", std::string(e) + "_B", std::string(e) + "_I",
                std::string(p) + "_B", std::string(p) + "_I"};
    ts.kinds = {SpanKind::Entity, SpanKind::Entity, SpanKind::Entity,
                SpanKind::Property, SpanKind::Property};
    ts.roles = {0, 1, 2, 1, 2};
    return ts;
  }
};

struct Span {
  int start = 0;
  int end = 0;  // exclusive
  SpanKind kind = SpanKind::Entity;

  bool operator==(const Span&) const = default;
};

struct CrfParams {
  Parameter* transitions = nullptr;  // [(K+2) x (K+2)]
  Parameter* tag_emb = nullptr;      // [K x d_h]
  Tensor mask;                       // additive constants, same shape as A
  int n_tags = 0;

  int start_state() const { return n_tags; }
  int stop_state() const { return n_tags + 1; }

  double eff(int from, int to) const {
    return transitions->value.at(from, to) + mask.at(from, to);
  }
};

inline CrfParams make_crf(ParamStore& store, const TagSet& tags, int h_dim,
                          bool bio_mask, Rng& rng,
                          const std::string& prefix = "crf") {
  CrfParams crf;
  crf.n_tags = tags.size();
  int full = crf.n_tags + 2;
  crf.transitions = &store.add(prefix + ".A", {full, full});
  crf.tag_emb = &store.add(prefix + ".tag_emb", {crf.n_tags, h_dim});
  init::uniform(*crf.transitions, 0.1, rng);
  init::uniform_fan_in(*crf.tag_emb, h_dim, rng);
  crf.mask = Tensor::zeros({full, full});
  if (bio_mask) {
    for (int a = 0; a < crf.n_tags; ++a)
      for (int b = 0; b < crf.n_tags; ++b)
        if (!tags.valid_transition(a, b)) crf.mask.at(a, b) = kMaskedScore;
    for (int b = 0; b < crf.n_tags; ++b)
      if (!tags.valid_start(b)) crf.mask.at(crf.start_state(), b) = kMaskedScore;
  }
  return crf;
}

// Per-token emission scores h_i . t_k, plain arithmetic.
inline std::vector<Tensor> emission_scores(const std::vector<Tensor>& h,
                                           const CrfParams& crf) {
  std::vector<Tensor> out;
  out.reserve(h.size());
  for (const auto& hi : h) {
    Tensor e = Tensor::zeros({crf.n_tags});
    for (int k = 0; k < crf.n_tags; ++k) {
      double s = 0.0;
      for (int d = 0; d < hi.size(); ++d)
        s += crf.tag_emb->value.at(k, d) * hi.at(d);
      e.at(k) = s;
    }
    out.push_back(std::move(e));
  }
  return out;
}

// S(y, h): boundary transitions plus per-step transition and emission sums.
inline double crf_score(const std::vector<int>& y, const std::vector<Tensor>& h,
                        const CrfParams& crf) {
  if (y.size() != h.size())
    throw std::invalid_argument("crf_score: tag/feature length mismatch");
  std::vector<Tensor> e = emission_scores(h, crf);
  double s = crf.eff(crf.start_state(), y.front());
  for (std::size_t i = 0; i + 1 < y.size(); ++i) s += crf.eff(y[i], y[i + 1]);
  s += crf.eff(y.back(), crf.stop_state());
  for (std::size_t i = 0; i < y.size(); ++i) s += e[i].at(y[i]);
  return s;
}

// Graph version of the loss: log Z - S(y_ref, h), with log Z computed by the
// forward recursion over lse_affine steps. Gradients come from automatic
// differentiation of the recursion itself.
inline Var crf_log_likelihood_g(Graph& g, const std::vector<Var>& h,
                                const std::vector<int>& y,
                                const CrfParams& crf,
                                const ForwardOpts& opts = {}) {
  if (y.size() != h.size())
    throw std::invalid_argument("crf_log_likelihood: length mismatch");
  int k = crf.n_tags;
  int n = static_cast<int>(h.size());
  Var a_full = g.add(g.param(*crf.transitions), g.constant(crf.mask));
  if (g.train_mode() && opts.vn_std > 0.0 && opts.rng)
    a_full = g.gaussian_noise(a_full, opts.vn_std, *opts.rng);
  Var tag_emb = g.param(*crf.tag_emb);
  if (g.train_mode() && opts.vn_std > 0.0 && opts.rng)
    tag_emb = g.gaussian_noise(tag_emb, opts.vn_std, *opts.rng);

  Var core_mat = g.block(a_full, 0, 0, k, k);
  Var start_row = g.reshape(g.block(a_full, crf.start_state(), 0, 1, k), {k});
  Var stop_col = g.reshape(g.block(a_full, 0, crf.stop_state(), k, 1), {k});

  std::vector<Var> emissions(n);
  for (int i = 0; i < n; ++i) emissions[i] = g.matvec(tag_emb, h[i]);

  Var alpha = g.add(start_row, emissions[0]);
  for (int i = 1; i < n; ++i)
    alpha = g.add(g.lse_affine(alpha, core_mat), emissions[i]);
  Var log_z = g.log_sum_exp(g.add(alpha, stop_col));

  // gold-path score
  std::vector<Var> terms;
  terms.push_back(g.pick(start_row, y[0]));
  for (int i = 0; i + 1 < n; ++i)
    terms.push_back(g.pick2(core_mat, y[i], y[i + 1]));
  terms.push_back(g.pick(stop_col, y[n - 1]));
  for (int i = 0; i < n; ++i) terms.push_back(g.pick(emissions[i], y[i]));
  Var gold = g.add_n(terms);
  return g.sub(log_z, gold);
}

// Convenience wrapper over constant features.
inline double crf_log_likelihood(const std::vector<int>& y,
                                 const std::vector<Tensor>& h,
                                 const CrfParams& crf) {
  Graph g;
  std::vector<Var> hv;
  hv.reserve(h.size());
  for (const auto& t : h) hv.push_back(g.constant(t));
  return g.value(crf_log_likelihood_g(g, hv, y, crf)).at(0);
}

// Most probable tag sequence under the masked scores; ties break toward the
// lower tag index at every decision.
inline std::vector<int> viterbi_decode(const std::vector<Tensor>& h,
                                       const CrfParams& crf) {
  if (h.empty()) throw std::invalid_argument("viterbi: empty sequence");
  int k = crf.n_tags;
  int n = static_cast<int>(h.size());
  std::vector<Tensor> e = emission_scores(h, crf);
  std::vector<std::vector<double>> delta(n, std::vector<double>(k));
  std::vector<std::vector<int>> back(n, std::vector<int>(k, 0));
  for (int j = 0; j < k; ++j)
    delta[0][j] = crf.eff(crf.start_state(), j) + e[0].at(j);
  for (int i = 1; i < n; ++i)
    for (int j = 0; j < k; ++j) {
      int arg = 0;
      double best = delta[i - 1][0] + crf.eff(0, j);
      for (int p = 1; p < k; ++p) {
        double s = delta[i - 1][p] + crf.eff(p, j);
        if (s > best) {
          best = s;
          arg = p;
        }
      }
      delta[i][j] = best + e[i].at(j);
      back[i][j] = arg;
    }
  int arg = 0;
  double best = delta[n - 1][0] + crf.eff(0, crf.stop_state());
  for (int j = 1; j < k; ++j) {
    double s = delta[n - 1][j] + crf.eff(j, crf.stop_state());
    if (s > best) {
      best = s;
      arg = j;
    }
  }
  std::vector<int> y(n);
  y[n - 1] = arg;
  for (int i = n - 1; i > 0; --i) y[i - 1] = back[i][y[i]];
  return y;
}

// Maximal B(I)* runs become spans; a stray I (no compatible B/I before it)
// opens a new span.
inline std::vector<Span> extract_spans(const std::vector<int>& tags,
                                       const TagSet& ts) {
  std::vector<Span> spans;
  int open_start = -1;
  int open_tag = -1;
  auto close = [&](int end) {
    if (open_start >= 0)
      spans.push_back({open_start, end, ts.kind_of(open_tag)});
    open_start = -1;
    open_tag = -1;
  };
  for (int i = 0; i < static_cast<int>(tags.size()); ++i) {
    int t = tags[i];
    if (t == 0) {
      close(i);
    } else if (ts.is_b(t)) {
      close(i);
      open_start = i;
      open_tag = t;
    } else {
      // An open run always extends through i-1, so the transition check
      // against the previous tag decides whether this I continues it.
      bool continues = open_tag >= 0 && ts.valid_transition(tags[i - 1], t);
      if (!continues) {
        close(i);
        open_start = i;
        open_tag = t;
      }
    }
  }
  close(static_cast<int>(tags.size()));
  return spans;
}

// Gold BIO encoding of annotated spans; rejects cross-kind overlaps, which a
// single tag sequence cannot represent.
inline std::vector<int> tags_of_spans(const std::vector<SpanAnnotation>& spans,
                                      int n_tokens, const TagSet& ts) {
  std::vector<int> tags(n_tokens, 0);
  for (const auto& s : spans) {
    int b = s.kind == SpanKind::Entity ? 1 : 3;
    for (int i = s.start; i < s.end; ++i) {
      if (tags[i] != 0)
        throw DataError("overlapping spans cannot be BIO-encoded");
      tags[i] = i == s.start ? b : b + 1;
    }
  }
  return tags;
}

}  // namespace rsat
