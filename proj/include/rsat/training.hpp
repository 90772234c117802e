// Joint end-to-end training of the span CRF, attribute heads, and relation
// layer with curriculum (scheduled sampling) over gold vs predicted spans.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "rsat/evaluation.hpp"
#include "rsat/model.hpp"
#include "rsat/optim.hpp"

namespace rsat {

// Linear decay from p_start to p_end over decay_epochs, then constant.
inline double curriculum_p(int epoch, const TrainConfig& cfg) {
  int d = cfg.effective_decay_epochs();
  double t = std::min(1.0, static_cast<double>(epoch) / d);
  return cfg.p_start + (cfg.p_end - cfg.p_start) * t;
}

// One Bernoulli(p) draw per conversation selects gold vs predicted spans.
inline const std::vector<Span>& curriculum_sample(
    double p, const std::vector<Span>& gold, const std::vector<Span>& predicted,
    Rng& rng) {
  return rng.bernoulli(p) ? gold : predicted;
}

namespace training_detail {

struct SpanKey {
  int start, end;
  SpanKind kind;
  bool operator<(const SpanKey& o) const {
    if (start != o.start) return start < o.start;
    if (end != o.end) return end < o.end;
    return static_cast<int>(kind) < static_cast<int>(o.kind);
  }
};

}  // namespace training_detail

// Builds the full joint loss for one conversation on the given graph.
// use_gold selects the downstream span set (the curriculum draw happens in
// the caller so the loss itself stays deterministic).
inline Var joint_loss_g(Graph& g, Model& m, const AnnotatedConversation& conv,
                        bool use_gold, const ForwardOpts& opts) {
  using training_detail::SpanKey;
  auto [tokens, boundaries] = flatten(conv);
  std::vector<Var> h = m.encoder->encode(g, tokens, opts);

  // span-extraction loss
  std::vector<int> gold_tags =
      tags_of_spans(conv.spans, static_cast<int>(tokens.size()), m.tagset);
  Var crf_loss = crf_log_likelihood_g(g, h, gold_tags, m.crf, opts);
  std::vector<Var> terms{g.scale(crf_loss, m.train_cfg.alpha)};

  // downstream spans: gold extents or the current decode
  std::vector<Span> gold_spans;
  for (const auto& s : conv.spans) gold_spans.push_back({s.start, s.end, s.kind});
  std::vector<Span> spans;
  if (use_gold) {
    spans = gold_spans;
  } else {
    std::vector<Tensor> hv;
    hv.reserve(h.size());
    for (Var v : h) hv.push_back(g.value(v));
    spans = extract_spans(viterbi_decode(hv, m.crf), m.tagset);
  }

  // gold annotation lookup by exact extent
  std::map<SpanKey, const SpanAnnotation*> gold_by_key;
  for (const auto& s : conv.spans)
    gold_by_key[{s.start, s.end, s.kind}] = &s;
  std::map<SpanKey, const RelationAnnotation*> relation_by_prop;
  for (const auto& r : conv.relations) {
    const auto& p = conv.spans[r.property_span];
    relation_by_prop[{p.start, p.end, p.kind}] = &r;
  }

  // pooled representation and attribute losses per span; predicted spans
  // with no exactly matching gold span contribute no attribute loss
  std::vector<Span> entity_spans;
  std::vector<int> entity_class;
  std::vector<Var> pooled(spans.size());
  for (std::size_t i = 0; i < spans.size(); ++i) {
    const Span& s = spans[i];
    pooled[i] = aggregate(g, h, s.start, s.end);
    auto it = gold_by_key.find({s.start, s.end, s.kind});
    const SpanAnnotation* ann = it == gold_by_key.end() ? nullptr : it->second;
    if (s.kind == SpanKind::Entity) {
      if (m.task == Task::Sx) {
        int cls;
        if (use_gold) {
          cls = ann->attributes.at(kAttrSymType);
        } else {
          cls = select_entity(classify(m.sym_type, g.value(pooled[i])));
        }
        entity_class.push_back(cls);
      } else {
        entity_class.push_back(-1);
      }
      entity_spans.push_back(s);
      if (ann && m.task == Task::Sx) {
        terms.push_back(g.cross_entropy(head_logits(g, m.sym_type, pooled[i], opts),
                                        ann->attributes.at(kAttrSymType)));
        if (m.has_status_head())
          terms.push_back(
              g.cross_entropy(head_logits(g, m.sym_status, pooled[i], opts),
                              ann->attributes.at(kAttrSymStatus)));
      }
    } else if (ann) {
      terms.push_back(g.cross_entropy(head_logits(g, m.prop_type, pooled[i], opts),
                                      ann->attributes.at(kAttrPropType)));
    }
  }

  // relation losses
  if (m.train_cfg.use_buffer) {
    Var word_table = g.param(*m.params.find("enc.word_emb"));
    std::vector<MemoryEntry> buffer;
    if (!entity_spans.empty())
      buffer = build_buffer(g, m, h, word_table, tokens, entity_spans,
                            entity_class);
    for (std::size_t i = 0; i < spans.size(); ++i) {
      const Span& s = spans[i];
      if (s.kind != SpanKind::Property || buffer.empty()) continue;
      auto rit = relation_by_prop.find({s.start, s.end, s.kind});
      if (rit == relation_by_prop.end()) continue;
      const auto& linked = conv.spans[rit->second->entity_span];
      std::string want = entity_value_key(m, tokens, linked);
      // gold target: the matching-value entry nearest in token distance
      double mid = 0.5 * (s.start + s.end);
      int target = -1;
      double best_d = 0.0;
      for (const auto& e : buffer) {
        auto git = gold_by_key.find({e.span.start, e.span.end, e.span.kind});
        if (git == gold_by_key.end()) continue;
        if (entity_value_key(m, tokens, *git->second) != want) continue;
        double d = std::fabs(e.token_mid - mid);
        if (target < 0 || d < best_d) {
          target = e.index;
          best_d = d;
        }
      }
      if (target < 0) continue;  // no corresponding entry under this decode
      Var yp = property_repr_for_span(g, m, h, word_table, tokens, s);
      terms.push_back(g.cross_entropy(relation_scores(g, m.rel, yp, buffer),
                                      target));
    }
  } else {
    // cross-product fallback head: the property span predicts the linked
    // entity's class directly
    for (std::size_t i = 0; i < spans.size(); ++i) {
      const Span& s = spans[i];
      if (s.kind != SpanKind::Property) continue;
      auto rit = relation_by_prop.find({s.start, s.end, s.kind});
      if (rit == relation_by_prop.end()) continue;
      const auto& linked = conv.spans[rit->second->entity_span];
      terms.push_back(
          g.cross_entropy(head_logits(g, m.link_type, pooled[i], opts),
                          linked.attributes.at(kAttrSymType)));
    }
  }

  if (m.train_cfg.l2 > 0.0) {
    std::vector<Var> sq;
    for (std::size_t i = 0; i < m.params.size(); ++i)
      sq.push_back(g.sum_squares(g.param(m.params[i])));
    terms.push_back(g.scale(g.add_n(sq), m.train_cfg.l2));
  }
  return g.add_n(terms);
}

// Spec-level entry point: draws the curriculum choice and evaluates the loss
// on a fresh train-mode graph.
inline double joint_loss(Model& m, const AnnotatedConversation& conv,
                         double curriculum_prob, Rng& rng) {
  bool use_gold = rng.bernoulli(curriculum_prob);
  Graph g(true);
  ForwardOpts opts{m.train_cfg.vn_std, &rng};
  return g.value(joint_loss_g(g, m, conv, use_gold, opts)).at(0);
}

struct TrainLogEntry {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_f1 = 0.0;         // property-tuple F1
  double dev_f1_status = 0.0;  // Sx status F1 (0 when absent)
  double p = 1.0;
};

struct TrainResult {
  std::unique_ptr<Model> model;
  std::vector<TrainLogEntry> log;
  int best_epoch = -1;
  double best_dev_f1 = 0.0;
};

inline TrainResult train_model(const std::vector<AnnotatedConversation>& train,
                               const std::vector<AnnotatedConversation>& dev,
                               Task task, const TaskOntology& ontology,
                               EncoderConfig enc_cfg, TrainConfig cfg,
                               std::optional<KnowledgeGraph> kg,
                               const Pretrained* pretrained = nullptr) {
  if (train.empty()) throw ConfigError("training corpus is empty");
  for (const auto& conv : train)
    if (conv.task != task) throw DataError("conversation task mismatch: " + conv.id);

  TrainResult result;
  Vocabulary vocab = Vocabulary::build(train);
  result.model = build_model(task, ontology, enc_cfg, cfg, std::move(vocab),
                             std::move(kg));
  Model& m = *result.model;
  if (pretrained) apply_pretrained(m.params, m.vocab, *pretrained);

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.clip_norm = cfg.clip_norm;
  Adam opt(m.params, acfg);
  Rng rng(cfg.seed);

  std::vector<Tensor> best_values;
  int evals_since_best = 0;
  bool stop = false;

  for (int epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    double p = curriculum_p(epoch, cfg);
    std::vector<int> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);

    double loss_sum = 0.0;
    int pending = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& conv = train[order[i]];
      bool use_gold = rng.bernoulli(p);
      Graph g(true);
      ForwardOpts opts{cfg.vn_std, &rng};
      Var loss = joint_loss_g(g, m, conv, use_gold, opts);
      loss_sum += g.value(loss).at(0);
      g.backward(loss);
      if (++pending >= cfg.batch_accum) {
        opt.step(m.params);
        pending = 0;
      }
    }
    if (pending > 0) opt.step(m.params);

    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.train_loss = loss_sum / static_cast<double>(train.size());
    entry.p = p;
    bool eval_now = !dev.empty() && (epoch % cfg.eval_every == 0 ||
                                     epoch == cfg.epochs - 1);
    if (eval_now) {
      TaskEval ev = evaluate_model(m, dev);
      entry.dev_f1 = ev.property.f1;
      if (ev.status) entry.dev_f1_status = ev.status->f1;
      if (result.best_epoch < 0 || entry.dev_f1 > result.best_dev_f1) {
        result.best_dev_f1 = entry.dev_f1;
        result.best_epoch = epoch;
        best_values.clear();
        for (std::size_t i = 0; i < m.params.size(); ++i)
          best_values.push_back(m.params[i].value);
        evals_since_best = 0;
      } else if (++evals_since_best > cfg.patience) {
        stop = true;
      }
    }
    result.log.push_back(entry);
  }

  if (!best_values.empty())
    for (std::size_t i = 0; i < m.params.size(); ++i)
      m.params[i].value = best_values[i];
  return result;
}

}  // namespace rsat
