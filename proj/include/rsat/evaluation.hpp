// Full-pipeline tuple extraction, the generalized partial-match
// precision/recall/F1, and the relation-only evaluation protocol.
//
// Tuples score field-by-field: class fields by equality, token-list fields
// by multiset overlap over the denominator side's length. Each predicted
// tuple aligns (with replacement) to the reference maximizing its product
// score; references align symmetrically for recall.
#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rsat/model.hpp"

namespace rsat {

struct ExtractedTuple {
  bool entity_is_class = true;             // Sx: class name; Rx: token list
  std::string entity_class;
  std::vector<std::string> entity_tokens;  // lowercased
  std::string second;                      // propType (or symStatus) name
  std::vector<std::string> content;        // lowercased propContent tokens
  bool has_content = true;                 // status pairs carry two fields

  bool operator==(const ExtractedTuple&) const = default;
};

// Multiset-intersection overlap |a n b| / |denominator side|.
inline double partial_overlap(const std::vector<std::string>& x,
                              const std::vector<std::string>& y,
                              bool denom_is_x) {
  const auto& denom = denom_is_x ? x : y;
  if (denom.empty()) return 0.0;
  std::map<std::string, int> counts;
  for (const auto& w : y) ++counts[w];
  int inter = 0;
  for (const auto& w : x) {
    auto it = counts.find(w);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++inter;
    }
  }
  return static_cast<double>(inter) / static_cast<double>(denom.size());
}

// Product of per-field scores; denominators come from tuple x when
// denom_is_x (the precision direction for predictions).
inline double tuple_match(const ExtractedTuple& x, const ExtractedTuple& y,
                          bool denom_is_x) {
  double score = 1.0;
  if (x.entity_is_class || y.entity_is_class) {
    score *= (x.entity_is_class == y.entity_is_class &&
              x.entity_class == y.entity_class)
                 ? 1.0
                 : 0.0;
  } else {
    score *= partial_overlap(x.entity_tokens, y.entity_tokens, denom_is_x);
  }
  score *= x.second == y.second ? 1.0 : 0.0;
  if (x.has_content || y.has_content) {
    if (x.has_content != y.has_content) return 0.0;
    score *= partial_overlap(x.content, y.content, denom_is_x);
  }
  return score;
}

struct ConvEval {
  std::string id;
  int n_pred = 0;
  int n_ref = 0;
  std::vector<double> pred_best;  // per prediction, its best product score
  std::vector<double> ref_best;   // per reference, its best product score
};

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long n_pred = 0;
  long n_ref = 0;
  std::vector<ConvEval> per_conversation;
};

inline double f1_of(double p, double r) {
  return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

inline EvalReport precision_recall_f1(
    const std::vector<std::vector<ExtractedTuple>>& preds,
    const std::vector<std::vector<ExtractedTuple>>& refs,
    const std::vector<std::string>* conv_ids = nullptr) {
  if (preds.size() != refs.size())
    throw std::invalid_argument("precision_recall_f1: conversation mismatch");
  EvalReport rep;
  double p_sum = 0.0, r_sum = 0.0;
  for (std::size_t c = 0; c < preds.size(); ++c) {
    ConvEval ce;
    if (conv_ids) ce.id = (*conv_ids)[c];
    ce.n_pred = static_cast<int>(preds[c].size());
    ce.n_ref = static_cast<int>(refs[c].size());
    for (const auto& pred : preds[c]) {
      double best = 0.0;
      for (const auto& ref : refs[c])
        best = std::max(best, tuple_match(pred, ref, /*denom_is_x=*/true));
      ce.pred_best.push_back(best);
      p_sum += best;
    }
    for (const auto& ref : refs[c]) {
      double best = 0.0;
      for (const auto& pred : preds[c])
        best = std::max(best, tuple_match(ref, pred, /*denom_is_x=*/true));
      ce.ref_best.push_back(best);
      r_sum += best;
    }
    rep.n_pred += ce.n_pred;
    rep.n_ref += ce.n_ref;
    rep.per_conversation.push_back(std::move(ce));
  }
  if (rep.n_pred == 0 && rep.n_ref == 0) {
    rep.precision = rep.recall = rep.f1 = 1.0;
    return rep;
  }
  rep.precision = rep.n_pred ? p_sum / rep.n_pred : 0.0;
  rep.recall = rep.n_ref ? r_sum / rep.n_ref : 0.0;
  rep.f1 = f1_of(rep.precision, rep.recall);
  return rep;
}

// ---------------------------------------------------------------------------
// Reference tuples from annotations

struct TupleSet {
  std::vector<ExtractedTuple> props;
  std::vector<ExtractedTuple> statuses;
  // per property tuple, sentence distance to its (chosen/linked) entity span;
  // -1 when no mention is involved (cross-product fallback)
  std::vector<int> prop_distance;
};

inline TupleSet reference_tuples(const AnnotatedConversation& conv,
                                 const TaskOntology& onto) {
  TupleSet out;
  auto [tokens, boundaries] = flatten(conv);
  for (const auto& rel : conv.relations) {
    const auto& prop = conv.spans[rel.property_span];
    const auto& ent = conv.spans[rel.entity_span];
    ExtractedTuple t;
    if (conv.task == Task::Sx) {
      t.entity_is_class = true;
      t.entity_class = onto.entity_name(ent.attributes.at(kAttrSymType));
    } else {
      t.entity_is_class = false;
      for (int i = ent.start; i < ent.end; ++i)
        t.entity_tokens.push_back(lowercased(tokens[i].text));
    }
    t.second = onto.prop_name(prop.attributes.at(kAttrPropType));
    for (int i = prop.start; i < prop.end; ++i)
      t.content.push_back(lowercased(tokens[i].text));
    out.props.push_back(std::move(t));
    out.prop_distance.push_back(relation_sentence_distance(conv, rel));
  }
  if (conv.task == Task::Sx) {
    for (const auto& s : conv.spans) {
      if (s.kind != SpanKind::Entity) continue;
      ExtractedTuple t;
      t.entity_is_class = true;
      t.entity_class = onto.entity_name(s.attributes.at(kAttrSymType));
      t.second = onto.status_name(s.attributes.at(kAttrSymStatus));
      t.has_content = false;
      out.statuses.push_back(std::move(t));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model tuple extraction

struct ExtractionResult {
  TupleSet tuples;
  std::vector<Span> spans;
  std::vector<int> tags;
};

inline ExtractionResult extract_tuples(const Model& m,
                                       const AnnotatedConversation& conv) {
  ExtractionResult out;
  auto [tokens, boundaries] = flatten(conv);
  Graph g(false);
  std::vector<Var> h = m.encoder->encode(g, tokens);
  std::vector<Tensor> hv;
  hv.reserve(h.size());
  for (Var v : h) hv.push_back(g.value(v));
  out.tags = viterbi_decode(hv, m.crf);
  out.spans = extract_spans(out.tags, m.tagset);

  std::vector<Span> entity_spans, prop_spans;
  for (const auto& s : out.spans)
    (s.kind == SpanKind::Entity ? entity_spans : prop_spans).push_back(s);

  // attribute predictions per span
  std::vector<int> entity_class(entity_spans.size(), -1);
  std::vector<int> entity_status(entity_spans.size(), -1);
  for (std::size_t i = 0; i < entity_spans.size(); ++i) {
    const Span& s = entity_spans[i];
    Tensor repr = g.value(aggregate(g, h, s.start, s.end));
    if (m.task == Task::Sx) {
      auto probs = classify(m.sym_type, repr);
      entity_class[i] = select_entity(probs);
      if (m.has_status_head()) {
        auto sp = classify(m.sym_status, repr);
        entity_status[i] = select_entity(sp);
      }
    }
  }
  std::vector<int> prop_class(prop_spans.size(), 0);
  for (std::size_t i = 0; i < prop_spans.size(); ++i) {
    const Span& s = prop_spans[i];
    Tensor repr = g.value(aggregate(g, h, s.start, s.end));
    prop_class[i] = select_entity(classify(m.prop_type, repr));
  }

  // status pairs per entity-span occurrence
  if (m.task == Task::Sx && m.has_status_head()) {
    for (std::size_t i = 0; i < entity_spans.size(); ++i) {
      ExtractedTuple t;
      t.entity_is_class = true;
      t.entity_class = m.ontology.entity_name(entity_class[i]);
      t.second = m.ontology.status_name(entity_status[i]);
      t.has_content = false;
      out.tuples.statuses.push_back(std::move(t));
    }
  }

  if (m.train_cfg.use_buffer) {
    Var word_table = g.frozen(*m.params.find("enc.word_emb"));
    auto buffer =
        build_buffer(g, m, h, word_table, tokens, entity_spans, entity_class);
    for (std::size_t i = 0; i < prop_spans.size(); ++i) {
      if (buffer.empty()) break;  // no entities: property emits no tuple
      const Span& s = prop_spans[i];
      Var yp = property_repr_for_span(g, m, h, word_table, tokens, s);
      Var scores = relation_scores(g, m.rel, yp, buffer);
      const Tensor& sv = g.value(g.softmax(scores));
      int k = select_entity(std::vector<double>(sv.v.begin(), sv.v.end()));
      ExtractedTuple t;
      if (m.task == Task::Sx) {
        t.entity_is_class = true;
        t.entity_class = m.ontology.entity_name(buffer[k].entity_class);
      } else {
        t.entity_is_class = false;
        t.entity_tokens = buffer[k].value_tokens;
      }
      t.second = m.ontology.prop_name(prop_class[i]);
      t.content = span_tokens_lower(tokens, s);
      out.tuples.props.push_back(std::move(t));
      int du = utterance_of(boundaries, s.start);
      int de = utterance_of(boundaries, buffer[k].span.start);
      out.tuples.prop_distance.push_back(std::abs(du - de));
    }
  } else {
    // cross-product fallback: the property span predicts its entity class
    for (std::size_t i = 0; i < prop_spans.size(); ++i) {
      const Span& s = prop_spans[i];
      Tensor repr = g.value(aggregate(g, h, s.start, s.end));
      int cls = select_entity(classify(m.link_type, repr));
      ExtractedTuple t;
      t.entity_is_class = true;
      t.entity_class = m.ontology.entity_name(cls);
      t.second = m.ontology.prop_name(prop_class[i]);
      t.content = span_tokens_lower(tokens, s);
      out.tuples.props.push_back(std::move(t));
      out.tuples.prop_distance.push_back(-1);
    }
  }
  return out;
}

struct TaskEval {
  EvalReport property;
  std::optional<EvalReport> status;
};

template <typename Fn>
inline void parallel_for_conversations(std::size_t n, int workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::size_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    std::size_t lo = w * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline TaskEval evaluate_model(const Model& m,
                               const std::vector<AnnotatedConversation>& convs,
                               int workers = 1) {
  std::vector<std::vector<ExtractedTuple>> pred_props(convs.size());
  std::vector<std::vector<ExtractedTuple>> pred_status(convs.size());
  std::vector<std::vector<ExtractedTuple>> ref_props(convs.size());
  std::vector<std::vector<ExtractedTuple>> ref_status(convs.size());
  std::vector<std::string> ids(convs.size());
  parallel_for_conversations(convs.size(), workers, [&](std::size_t i) {
    ids[i] = convs[i].id;
    auto pred = extract_tuples(m, convs[i]);
    auto ref = reference_tuples(convs[i], m.ontology);
    pred_props[i] = std::move(pred.tuples.props);
    pred_status[i] = std::move(pred.tuples.statuses);
    ref_props[i] = std::move(ref.props);
    ref_status[i] = std::move(ref.statuses);
  });
  TaskEval out;
  out.property = precision_recall_f1(pred_props, ref_props, &ids);
  if (m.task == Task::Sx && m.has_status_head())
    out.status = precision_recall_f1(pred_status, ref_status, &ids);
  return out;
}

// Relation-only protocol: gold spans and attributes are supplied; only the
// buffer selection is scored. A prediction is correct when the chosen entry's
// entity value matches the gold-linked entity's value (or, with
// mention_exact, the exact gold mention).
inline EvalReport relation_only_eval(
    const Model& m, const std::vector<AnnotatedConversation>& convs,
    bool mention_exact = false, int workers = 1) {
  if (!m.train_cfg.use_buffer)
    throw ConfigError("relation-only evaluation requires the memory buffer");
  std::vector<int> correct(convs.size(), 0), total(convs.size(), 0);
  std::vector<ConvEval> details(convs.size());
  parallel_for_conversations(convs.size(), workers, [&](std::size_t ci) {
    const auto& conv = convs[ci];
    auto [tokens, boundaries] = flatten(conv);
    Graph g(false);
    std::vector<Var> h = m.encoder->encode(g, tokens);
    Var word_table = g.frozen(*m.params.find("enc.word_emb"));
    std::vector<Span> entity_spans;
    std::vector<int> class_ids;
    std::vector<int> span_index;  // annotation index per buffer entry
    for (std::size_t si = 0; si < conv.spans.size(); ++si) {
      const auto& s = conv.spans[si];
      if (s.kind != SpanKind::Entity) continue;
      entity_spans.push_back({s.start, s.end, s.kind});
      class_ids.push_back(m.task == Task::Sx ? s.attributes.at(kAttrSymType)
                                             : -1);
      span_index.push_back(static_cast<int>(si));
    }
    if (entity_spans.empty()) return;
    auto buffer =
        build_buffer(g, m, h, word_table, tokens, entity_spans, class_ids);
    ConvEval ce;
    ce.id = conv.id;
    for (const auto& rel : conv.relations) {
      const auto& prop = conv.spans[rel.property_span];
      Var yp = property_repr_for_span(g, m, h, word_table, tokens,
                                      {prop.start, prop.end, prop.kind});
      const Tensor& sv = g.value(g.softmax(relation_scores(g, m.rel, yp, buffer)));
      int k = select_entity(std::vector<double>(sv.v.begin(), sv.v.end()));
      bool ok;
      if (mention_exact) {
        ok = span_index[static_cast<std::size_t>(k)] == rel.entity_span;
      } else {
        std::string chosen = entity_value_key(
            m, tokens, conv.spans[span_index[static_cast<std::size_t>(k)]]);
        std::string gold = entity_value_key(m, tokens, conv.spans[rel.entity_span]);
        ok = chosen == gold;
      }
      ++total[ci];
      if (ok) ++correct[ci];
      ce.pred_best.push_back(ok ? 1.0 : 0.0);
      ce.ref_best.push_back(ok ? 1.0 : 0.0);
    }
    ce.n_pred = ce.n_ref = total[ci];
    details[ci] = std::move(ce);
  });
  EvalReport rep;
  long c = 0, t = 0;
  for (std::size_t i = 0; i < convs.size(); ++i) {
    c += correct[i];
    t += total[i];
    rep.per_conversation.push_back(std::move(details[i]));
  }
  rep.n_pred = rep.n_ref = t;
  double acc = t ? static_cast<double>(c) / t : 1.0;
  rep.precision = rep.recall = acc;
  rep.f1 = f1_of(rep.precision, rep.recall);
  return rep;
}

}  // namespace rsat
