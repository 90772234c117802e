// Memory buffer of entity entries and the bilinear relation-inference layer.
//
// Each entity-span occurrence contributes one entry m = AGGREGATE of the
// projected span context and the projected value embedding; the value is the
// label embedding for the closed Sx set and the mean word embedding of the
// verbatim span for Rx. A property representation is scored against every
// entry with y_p^T W m_k.
#pragma once

#include <string>
#include <vector>

#include "rsat/attributes.hpp"
#include "rsat/crf.hpp"
#include "rsat/graph.hpp"

namespace rsat {

struct RelationParams {
  Parameter* bilinear = nullptr;   // [d_mem x d_mem]
  Parameter* proj_ctx_e = nullptr; // [d_mem x d_h]
  Parameter* proj_val_e = nullptr; // [d_mem x d_val]
  Parameter* proj_ctx_p = nullptr; // [d_mem x d_h]
  Parameter* proj_val_p = nullptr; // [d_mem x d_val]
  int d_mem = 0;
};

inline RelationParams make_relation_params(ParamStore& store, int d_mem,
                                           int d_h, int d_val, Rng& rng) {
  RelationParams r;
  r.d_mem = d_mem;
  r.bilinear = &store.add("rel.W", {d_mem, d_mem});
  r.proj_ctx_e = &store.add("rel.proj_ctx_e", {d_mem, d_h});
  r.proj_val_e = &store.add("rel.proj_val_e", {d_mem, d_val});
  r.proj_ctx_p = &store.add("rel.proj_ctx_p", {d_mem, d_h});
  r.proj_val_p = &store.add("rel.proj_val_p", {d_mem, d_val});
  init::uniform_fan_in(*r.bilinear, d_mem, rng);
  init::uniform_fan_in(*r.proj_ctx_e, d_h, rng);
  init::uniform_fan_in(*r.proj_val_e, d_val, rng);
  init::uniform_fan_in(*r.proj_ctx_p, d_h, rng);
  init::uniform_fan_in(*r.proj_val_p, d_val, rng);
  return r;
}

struct MemoryEntry {
  int index = 0;
  Var m;
  Span span;
  int entity_class = -1;                  // Sx symType; -1 for Rx
  std::vector<std::string> value_tokens;  // Rx verbatim tokens (lowercased)
  double token_mid = 0.0;
};

// Fused entry vector; with use_context off only the value embedding remains.
inline Var entity_memory_vec(Graph& g, const RelationParams& rp, Var span_ctx,
                             Var value_emb, bool use_context) {
  Var val = g.matvec(g.param(*rp.proj_val_e), value_emb);
  if (!use_context) return val;
  Var ctx = g.matvec(g.param(*rp.proj_ctx_e), span_ctx);
  return g.mean_vars({ctx, val});
}

inline Var property_repr(Graph& g, const RelationParams& rp, Var span_ctx,
                         Var value_emb) {
  Var ctx = g.matvec(g.param(*rp.proj_ctx_p), span_ctx);
  Var val = g.matvec(g.param(*rp.proj_val_p), value_emb);
  return g.mean_vars({ctx, val});
}

// y_p^T W m_k for every buffer entry, as a score vector.
inline Var relation_scores(Graph& g, const RelationParams& rp, Var y_p,
                           const std::vector<MemoryEntry>& buffer) {
  if (buffer.empty())
    throw std::invalid_argument("relation_scores: empty buffer");
  Var w = g.param(*rp.bilinear);
  Var yw = g.reshape(g.matmul(g.reshape(y_p, {1, rp.d_mem}), w), {rp.d_mem});
  std::vector<Var> scores;
  scores.reserve(buffer.size());
  for (const auto& e : buffer) scores.push_back(g.dot(yw, e.m));
  return g.stack(scores);
}

// Argmax with ties broken toward the earliest entry.
inline int select_entity(const std::vector<double>& distribution) {
  if (distribution.empty())
    throw std::invalid_argument("select_entity: empty distribution");
  int best = 0;
  for (int i = 1; i < static_cast<int>(distribution.size()); ++i)
    if (distribution[i] > distribution[best]) best = i;
  return best;
}

}  // namespace rsat
