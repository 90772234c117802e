// Symptom-task baseline: a flat per-token tagger over the cross-product
// label space {symType x propType} u {symType x symStatus} with BIO roles.
// Same encoder as the main model, no CRF (the label space is too large),
// no buffer: relations are read directly off the property labels.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "rsat/evaluation.hpp"
#include "rsat/model.hpp"
#include "rsat/optim.hpp"

namespace rsat {

struct CrossProductTagSet {
  int n_entity = 0;
  int n_prop = 0;
  int n_status = 0;

  int size() const { return 2 * (n_entity * n_prop + n_entity * n_status) + 1; }

  // label layout: 0 = O, then B/I per (entity x status) pair, then B/I per
  // (entity x prop) pair
  int es_label(int e, int s, bool begin) const {
    return 1 + 2 * (e * n_status + s) + (begin ? 0 : 1);
  }
  int ep_label(int e, int p, bool begin) const {
    return 1 + 2 * n_entity * n_status + 2 * (e * n_prop + p) + (begin ? 0 : 1);
  }

  struct Decoded {
    bool is_o = true;
    bool begin = false;
    bool is_status_pair = false;
    int entity = -1;
    int second = -1;  // status or prop id
  };

  Decoded decode(int label) const {
    Decoded d;
    if (label == 0) return d;
    d.is_o = false;
    int x = label - 1;
    int es_block = 2 * n_entity * n_status;
    if (x < es_block) {
      d.is_status_pair = true;
      d.begin = x % 2 == 0;
      int q = x / 2;
      d.entity = q / n_status;
      d.second = q % n_status;
    } else {
      x -= es_block;
      d.is_status_pair = false;
      d.begin = x % 2 == 0;
      int q = x / 2;
      d.entity = q / n_prop;
      d.second = q % n_prop;
    }
    return d;
  }

  // the two labels belong to the same pair (for I-continuation checks)
  bool same_pair(int a, int b) const {
    Decoded da = decode(a), db = decode(b);
    return !da.is_o && !db.is_o && da.is_status_pair == db.is_status_pair &&
           da.entity == db.entity && da.second == db.second;
  }
};

struct CrossProductStats {
  int unrelated_properties = 0;  // property spans without a relation -> O
};

// Gold label sequence under the cross-product reformulation. Entity spans
// carry (symType x symStatus); property spans carry (linked symType x
// propType); properties without a relation fall back to O.
inline std::vector<int> encode_cross_product(const AnnotatedConversation& conv,
                                             const TaskOntology& onto,
                                             const CrossProductTagSet& ts,
                                             CrossProductStats* stats = nullptr) {
  if (conv.task != Task::Sx)
    throw ConfigError("the cross-product baseline covers the sx task only");
  (void)onto;
  std::vector<int> labels(conv.token_count(), 0);
  std::map<int, int> linked_entity;  // span index -> entity span index
  for (const auto& r : conv.relations) linked_entity[r.property_span] = r.entity_span;
  for (std::size_t si = 0; si < conv.spans.size(); ++si) {
    const auto& s = conv.spans[si];
    if (s.kind == SpanKind::Entity) {
      int e = s.attributes.at(kAttrSymType);
      int st = s.attributes.at(kAttrSymStatus);
      for (int i = s.start; i < s.end; ++i)
        labels[i] = ts.es_label(e, st, i == s.start);
    } else {
      auto it = linked_entity.find(static_cast<int>(si));
      if (it == linked_entity.end()) {
        if (stats) ++stats->unrelated_properties;
        continue;
      }
      int e = conv.spans[it->second].attributes.at(kAttrSymType);
      int p = s.attributes.at(kAttrPropType);
      for (int i = s.start; i < s.end; ++i)
        labels[i] = ts.ep_label(e, p, i == s.start);
    }
  }
  return labels;
}

// Tuple readout from a cross-product label sequence: maximal same-pair runs
// become spans, entity runs emit status pairs, property runs emit
// (symType, propType, content) tuples.
inline TupleSet decode_cross_product(const std::vector<int>& labels,
                                     const std::vector<Token>& tokens,
                                     const TaskOntology& onto,
                                     const CrossProductTagSet& ts) {
  TupleSet out;
  int open_start = -1;
  int open_label = -1;
  auto close = [&](int end) {
    if (open_start < 0) return;
    auto d = ts.decode(open_label);
    ExtractedTuple t;
    t.entity_is_class = true;
    t.entity_class = onto.entity_name(d.entity);
    if (d.is_status_pair) {
      t.second = onto.status_name(d.second);
      t.has_content = false;
      out.statuses.push_back(std::move(t));
    } else {
      t.second = onto.prop_name(d.second);
      for (int i = open_start; i < end; ++i)
        t.content.push_back(lowercased(tokens[i].text));
      out.props.push_back(std::move(t));
      out.prop_distance.push_back(-1);
    }
    open_start = -1;
    open_label = -1;
  };
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    int l = labels[i];
    auto d = ts.decode(l);
    if (d.is_o) {
      close(i);
    } else if (d.begin) {
      close(i);
      open_start = i;
      open_label = l;
    } else {
      bool continues = open_label >= 0 && ts.same_pair(labels[i - 1], l);
      if (!continues) {
        close(i);
        open_start = i;
        open_label = l;
      }
    }
  }
  close(static_cast<int>(labels.size()));
  return out;
}

struct BaselineModel {
  TaskOntology ontology;
  EncoderConfig enc_cfg;
  TrainConfig train_cfg;
  Vocabulary vocab;
  std::optional<KnowledgeGraph> kg;
  ParamStore params;
  std::unique_ptr<Encoder> encoder;
  Parameter* out_w = nullptr;
  Parameter* out_b = nullptr;
  CrossProductTagSet labels;

  BaselineModel() = default;
  BaselineModel(const BaselineModel&) = delete;
  BaselineModel& operator=(const BaselineModel&) = delete;
};

inline std::unique_ptr<BaselineModel> build_baseline(
    const TaskOntology& ontology, EncoderConfig enc_cfg, TrainConfig train_cfg,
    Vocabulary vocab, std::optional<KnowledgeGraph> kg) {
  auto m = std::make_unique<BaselineModel>();
  m->ontology = ontology;
  if (!train_cfg.use_kg) {
    enc_cfg.use_kg = false;
    enc_cfg.use_pos = false;
    kg.reset();
  }
  enc_cfg.dropout = train_cfg.dropout;
  m->enc_cfg = enc_cfg;
  m->train_cfg = train_cfg;
  m->vocab = std::move(vocab);
  m->kg = std::move(kg);
  m->labels = {ontology.n_entity(), ontology.n_prop(), ontology.n_status()};
  Rng rng(train_cfg.seed * 0x9E3779B97F4A7C15ULL + 777);
  m->encoder = std::make_unique<Encoder>(m->params, m->enc_cfg, m->vocab,
                                         m->kg ? &*m->kg : nullptr, rng);
  m->enc_cfg = m->encoder->config();
  int d_h = m->encoder->output_dim();
  m->out_w = &m->params.add("out.W", {m->labels.size(), d_h});
  m->out_b = &m->params.add("out.b", {m->labels.size()});
  init::uniform_fan_in(*m->out_w, d_h, rng);
  return m;
}

inline Var baseline_loss_g(Graph& g, BaselineModel& m,
                           const AnnotatedConversation& conv,
                           const ForwardOpts& opts) {
  auto [tokens, boundaries] = flatten(conv);
  std::vector<int> labels = encode_cross_product(conv, m.ontology, m.labels);
  std::vector<Var> h = m.encoder->encode(g, tokens, opts);
  Var w = g.param(*m.out_w);
  if (g.train_mode() && opts.vn_std > 0.0 && opts.rng)
    w = g.gaussian_noise(w, opts.vn_std, *opts.rng);
  Var b = g.param(*m.out_b);
  std::vector<Var> terms;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    terms.push_back(
        g.cross_entropy(g.add(g.matvec(w, h[i]), b), labels[i]));
  if (m.train_cfg.l2 > 0.0) {
    std::vector<Var> sq;
    for (std::size_t i = 0; i < m.params.size(); ++i)
      sq.push_back(g.sum_squares(g.param(m.params[i])));
    terms.push_back(g.scale(g.add_n(sq), m.train_cfg.l2));
  }
  return g.add_n(terms);
}

inline TupleSet baseline_extract(const BaselineModel& m,
                                 const AnnotatedConversation& conv) {
  auto [tokens, boundaries] = flatten(conv);
  Graph g(false);
  std::vector<Var> h = m.encoder->encode(g, tokens);
  Var w = g.param(*m.out_w);
  Var b = g.param(*m.out_b);
  std::vector<int> labels(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Tensor& logits = g.value(g.add(g.matvec(w, h[i]), b));
    int best = 0;
    for (int c = 1; c < logits.size(); ++c)
      if (logits.at(c) > logits.at(best)) best = c;
    labels[i] = best;
  }
  return decode_cross_product(labels, tokens, m.ontology, m.labels);
}

struct BaselineEval {
  EvalReport property;
  EvalReport status;
};

inline BaselineEval evaluate_baseline(
    const BaselineModel& m, const std::vector<AnnotatedConversation>& convs,
    int workers = 1) {
  std::vector<std::vector<ExtractedTuple>> pp(convs.size()), ps(convs.size());
  std::vector<std::vector<ExtractedTuple>> rp(convs.size()), rs(convs.size());
  std::vector<std::string> ids(convs.size());
  parallel_for_conversations(convs.size(), workers, [&](std::size_t i) {
    ids[i] = convs[i].id;
    TupleSet pred = baseline_extract(m, convs[i]);
    TupleSet ref = reference_tuples(convs[i], m.ontology);
    pp[i] = std::move(pred.props);
    ps[i] = std::move(pred.statuses);
    rp[i] = std::move(ref.props);
    rs[i] = std::move(ref.statuses);
  });
  BaselineEval out;
  out.property = precision_recall_f1(pp, rp, &ids);
  out.status = precision_recall_f1(ps, rs, &ids);
  return out;
}

inline void save_baseline_checkpoint(const BaselineModel& m,
                                     const std::string& path) {
  nlohmann::json cfg;
  cfg["arch"] = "baseline";
  cfg["task"] = "sx";
  cfg["ontology"] = to_json(m.ontology);
  cfg["encoder"] = to_json(m.enc_cfg);
  cfg["train"] = to_json(m.train_cfg);
  cfg["vocab"] = m.vocab.words;
  cfg["kg"] = m.kg ? to_json(*m.kg) : nlohmann::json(nullptr);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  checkpoint_detail::write_blob_and_params(out, cfg.dump(), m.params, path);
}

inline std::unique_ptr<BaselineModel> load_baseline_checkpoint(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  nlohmann::json cfg = checkpoint_detail::read_config_blob(in, path);
  if (!cfg.contains("arch") || cfg.at("arch").get<std::string>() != "baseline")
    throw DataError(path + ": not a baseline checkpoint");
  TaskOntology onto = ontology_from_json(cfg.at("ontology"));
  EncoderConfig enc_cfg = encoder_config_from_json(cfg.at("encoder"));
  TrainConfig train_cfg = train_config_from_json(cfg.at("train"));
  Vocabulary vocab =
      Vocabulary::from_words(cfg.at("vocab").get<std::vector<std::string>>());
  std::optional<KnowledgeGraph> kg;
  if (!cfg.at("kg").is_null()) kg = kg_from_json(cfg.at("kg"));
  auto m = build_baseline(onto, enc_cfg, train_cfg, std::move(vocab),
                          std::move(kg));
  checkpoint_detail::read_params(in, m->params, path);
  return m;
}

struct BaselineTrainResult {
  std::unique_ptr<BaselineModel> model;
  int best_epoch = -1;
  double best_dev_f1 = 0.0;
};

inline BaselineTrainResult train_baseline(
    const std::vector<AnnotatedConversation>& train,
    const std::vector<AnnotatedConversation>& dev, const TaskOntology& ontology,
    EncoderConfig enc_cfg, TrainConfig cfg, std::optional<KnowledgeGraph> kg,
    const Pretrained* pretrained = nullptr) {
  if (train.empty()) throw ConfigError("training corpus is empty");
  BaselineTrainResult result;
  Vocabulary vocab = Vocabulary::build(train);
  result.model =
      build_baseline(ontology, enc_cfg, cfg, std::move(vocab), std::move(kg));
  BaselineModel& m = *result.model;
  if (pretrained) apply_pretrained(m.params, m.vocab, *pretrained);

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.clip_norm = cfg.clip_norm;
  Adam opt(m.params, acfg);
  Rng rng(cfg.seed);
  std::vector<Tensor> best_values;
  int evals_since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    int pending = 0;
    for (int ci : order) {
      Graph g(true);
      ForwardOpts opts{cfg.vn_std, &rng};
      Var loss = baseline_loss_g(g, m, train[ci], opts);
      g.backward(loss);
      if (++pending >= cfg.batch_accum) {
        opt.step(m.params);
        pending = 0;
      }
    }
    if (pending > 0) opt.step(m.params);

    if (!dev.empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs - 1)) {
      BaselineEval ev = evaluate_baseline(m, dev);
      if (result.best_epoch < 0 || ev.property.f1 > result.best_dev_f1) {
        result.best_dev_f1 = ev.property.f1;
        result.best_epoch = epoch;
        best_values.clear();
        for (std::size_t i = 0; i < m.params.size(); ++i)
          best_values.push_back(m.params[i].value);
        evals_since_best = 0;
      } else if (++evals_since_best > cfg.patience) {
        break;
      }
    }
  }
  if (!best_values.empty())
    for (std::size_t i = 0; i < m.params.size(); ++i)
      m.params[i].value = best_values[i];
  return result;
}

}  // namespace rsat
