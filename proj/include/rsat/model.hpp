// Model assembly: encoder + span CRF + attribute heads + relation layer,
// together with the versioned binary checkpoint format.
#pragma once

#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsat/attributes.hpp"
#include "rsat/corpus.hpp"
#include "rsat/crf.hpp"
#include "rsat/encoder.hpp"
#include "rsat/kg.hpp"
#include "rsat/relation.hpp"

namespace rsat {

struct TrainConfig {
  // desk-profile defaults, calibrated on the synthetic corpus
  double alpha = 0.1;  // CRF loss weight
  double lr = 3e-3;
  double l2 = 1e-4;
  double dropout = 0.1;
  double vn_std = 1e-3;
  int epochs = 40;
  double p_start = 1.0;  // curriculum: probability of feeding gold spans
  double p_end = 0.0;
  int decay_epochs = 0;  // 0 = first half of training
  std::uint64_t seed = 1;
  bool use_kg = true;
  bool use_context = true;
  bool use_buffer = true;
  bool multitask = true;
  int batch_accum = 1;
  int patience = 8;
  int eval_every = 1;
  double clip_norm = 0.0;

  static TrainConfig desk() { return TrainConfig{}; }

  // Table-scale profile: the paper's reported hyperparameters.
  static TrainConfig paper() {
    TrainConfig c;
    c.alpha = 0.01;
    c.lr = 1e-2;
    c.l2 = 1e-4;
    c.dropout = 0.4;
    c.vn_std = 1e-3;
    c.patience = 5;
    return c;
  }

  int effective_decay_epochs() const {
    return decay_epochs > 0 ? decay_epochs : std::max(1, epochs / 2);
  }

  void check(Task task) const {
    if (alpha <= 0.0) throw ConfigError("alpha must be > 0");
    if (p_start < 0 || p_start > 1 || p_end < 0 || p_end > 1)
      throw ConfigError("curriculum probabilities must be in [0,1]");
    if (task == Task::Rx && !use_buffer)
      throw ConfigError(
          "the buffer cannot be ablated for rx: medications are an open set");
    if (task == Task::Rx && !multitask)
      throw ConfigError("rx has a single task; multitask cannot be ablated");
  }
};

struct Model {
  Task task = Task::Sx;
  TaskOntology ontology;
  EncoderConfig enc_cfg;
  TrainConfig train_cfg;
  Vocabulary vocab;
  std::optional<KnowledgeGraph> kg;
  ParamStore params;
  std::unique_ptr<Encoder> encoder;
  TagSet tagset;
  CrfParams crf;
  AttributeHead sym_type;    // Sx
  AttributeHead sym_status;  // Sx, multitask only
  AttributeHead prop_type;
  AttributeHead link_type;   // Sx without buffer: cross-product fallback head
  Parameter* label_emb = nullptr;  // Sx entity label embeddings
  RelationParams rel;
  int d_mem = 0;

  bool has_status_head() const { return sym_status.w != nullptr; }

  Model() = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
};

inline std::unique_ptr<Model> build_model(Task task, TaskOntology ontology,
                                          EncoderConfig enc_cfg,
                                          TrainConfig train_cfg,
                                          Vocabulary vocab,
                                          std::optional<KnowledgeGraph> kg) {
  train_cfg.check(task);
  auto m = std::make_unique<Model>();
  m->task = task;
  m->ontology = std::move(ontology);
  if (!train_cfg.use_kg) {
    enc_cfg.use_kg = false;
    enc_cfg.use_pos = false;  // the feature-fusion ablation drops both
    kg.reset();
  }
  enc_cfg.dropout = train_cfg.dropout;
  m->enc_cfg = enc_cfg;
  m->train_cfg = train_cfg;
  m->vocab = std::move(vocab);
  m->kg = std::move(kg);

  Rng rng(train_cfg.seed * 0x9E3779B97F4A7C15ULL + 12345);
  m->encoder = std::make_unique<Encoder>(m->params, m->enc_cfg, m->vocab,
                                         m->kg ? &*m->kg : nullptr, rng);
  m->enc_cfg = m->encoder->config();
  int d_h = m->encoder->output_dim();
  m->d_mem = d_h;

  m->tagset = TagSet::generic(task);
  m->crf = make_crf(m->params, m->tagset, d_h, /*bio_mask=*/true, rng);

  if (task == Task::Sx) {
    m->sym_type = make_head(m->params, kAttrSymType, m->ontology.n_entity(),
                            d_h, rng);
    if (train_cfg.multitask)
      m->sym_status = make_head(m->params, kAttrSymStatus,
                                m->ontology.n_status(), d_h, rng);
  }
  m->prop_type =
      make_head(m->params, kAttrPropType, m->ontology.n_prop(), d_h, rng);

  if (train_cfg.use_buffer) {
    if (task == Task::Sx) {
      m->label_emb = &m->params.add("rel.label_emb",
                                    {m->ontology.n_entity(),
                                     m->enc_cfg.word_dim});
      init::uniform(*m->label_emb, 0.1, rng);
    }
    m->rel = make_relation_params(m->params, m->d_mem, d_h,
                                  m->enc_cfg.word_dim, rng);
  } else {
    m->link_type = make_head(m->params, "linkType", m->ontology.n_entity(),
                             d_h, rng);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Shared forward-pipeline helpers

inline std::string lowercased(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

inline std::vector<std::string> span_tokens_lower(
    const std::vector<Token>& tokens, const Span& s) {
  std::vector<std::string> out;
  for (int i = s.start; i < s.end; ++i) out.push_back(lowercased(tokens[i].text));
  return out;
}

// Mean of learned word embeddings over a span (the open-set value embedding).
inline Var span_word_emb(Graph& g, const Model& m, Var word_table,
                         const std::vector<Token>& tokens, const Span& s) {
  std::vector<Var> rows;
  for (int i = s.start; i < s.end; ++i)
    rows.push_back(g.row(word_table, m.vocab.id(tokens[i].text)));
  return g.mean_vars(rows);
}

// One buffer entry per entity-span occurrence, in conversation order.
// class_ids carries the Sx symType per span (gold or predicted); unused
// for Rx.
inline std::vector<MemoryEntry> build_buffer(
    Graph& g, const Model& m, const std::vector<Var>& h, Var word_table,
    const std::vector<Token>& tokens, const std::vector<Span>& entity_spans,
    const std::vector<int>& class_ids) {
  std::vector<MemoryEntry> buffer;
  Var label_table;
  if (m.task == Task::Sx) label_table = g.param(*m.label_emb);
  for (std::size_t i = 0; i < entity_spans.size(); ++i) {
    const Span& s = entity_spans[i];
    MemoryEntry e;
    e.index = static_cast<int>(buffer.size());
    e.span = s;
    e.token_mid = 0.5 * (s.start + s.end);
    Var ctx = aggregate(g, h, s.start, s.end);
    Var val;
    if (m.task == Task::Sx) {
      e.entity_class = class_ids[i];
      val = g.row(label_table, e.entity_class);
    } else {
      e.value_tokens = span_tokens_lower(tokens, s);
      val = span_word_emb(g, m, word_table, tokens, s);
    }
    e.m = entity_memory_vec(g, m.rel, ctx, val, m.train_cfg.use_context);
    buffer.push_back(std::move(e));
  }
  return buffer;
}

inline Var property_repr_for_span(Graph& g, const Model& m,
                                  const std::vector<Var>& h, Var word_table,
                                  const std::vector<Token>& tokens,
                                  const Span& s) {
  Var ctx = aggregate(g, h, s.start, s.end);
  Var val = span_word_emb(g, m, word_table, tokens, s);
  return property_repr(g, m.rel, ctx, val);
}

// Entity identity for relation targets: the symType class for Sx, the
// lowercased verbatim text for Rx.
inline std::string entity_value_key(const Model& m,
                                    const std::vector<Token>& tokens,
                                    const SpanAnnotation& span) {
  if (m.task == Task::Sx)
    return "#" + std::to_string(span.attributes.at(kAttrSymType));
  std::string key;
  for (int i = span.start; i < span.end; ++i) {
    if (!key.empty()) key += " ";
    key += lowercased(tokens[i].text);
  }
  return key;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization

constexpr char kCheckpointMagic[8] = {'R', 'S', 'A', 'T', 'C', 'K', 'P', '1'};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"word_dim", c.word_dim},     {"lstm_cell", c.lstm_cell},
          {"lstm_layers", c.lstm_layers}, {"ff_widths", c.ff_widths},
          {"dropout", c.dropout},       {"use_kg", c.use_kg},
          {"use_pos", c.use_pos},       {"pos_count", c.pos_count},
          {"kg_dim", c.kg_dim},         {"kg_types", c.kg_types}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.word_dim = j.at("word_dim").get<int>();
  c.lstm_cell = j.at("lstm_cell").get<int>();
  c.lstm_layers = j.at("lstm_layers").get<int>();
  c.ff_widths = j.at("ff_widths").get<std::vector<int>>();
  c.dropout = j.at("dropout").get<double>();
  c.use_kg = j.at("use_kg").get<bool>();
  c.use_pos = j.at("use_pos").get<bool>();
  c.pos_count = j.at("pos_count").get<int>();
  c.kg_dim = j.at("kg_dim").get<int>();
  c.kg_types = j.at("kg_types").get<int>();
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"lr", c.lr},
          {"l2", c.l2},
          {"dropout", c.dropout},
          {"vn_std", c.vn_std},
          {"epochs", c.epochs},
          {"p_start", c.p_start},
          {"p_end", c.p_end},
          {"decay_epochs", c.decay_epochs},
          {"seed", c.seed},
          {"use_kg", c.use_kg},
          {"use_context", c.use_context},
          {"use_buffer", c.use_buffer},
          {"multitask", c.multitask},
          {"batch_accum", c.batch_accum},
          {"patience", c.patience},
          {"eval_every", c.eval_every},
          {"clip_norm", c.clip_norm}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.alpha = j.at("alpha").get<double>();
  c.lr = j.at("lr").get<double>();
  c.l2 = j.at("l2").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.vn_std = j.at("vn_std").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.p_start = j.at("p_start").get<double>();
  c.p_end = j.at("p_end").get<double>();
  c.decay_epochs = j.at("decay_epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.use_kg = j.at("use_kg").get<bool>();
  c.use_context = j.at("use_context").get<bool>();
  c.use_buffer = j.at("use_buffer").get<bool>();
  c.multitask = j.at("multitask").get<bool>();
  c.batch_accum = j.at("batch_accum").get<int>();
  c.patience = j.at("patience").get<int>();
  c.eval_every = j.at("eval_every").get<int>();
  c.clip_norm = j.at("clip_norm").get<double>();
  return c;
}

inline nlohmann::json to_json(const TaskOntology& o) {
  return {{"task", to_string(o.task)},
          {"entity", o.entity_classes},
          {"status", o.status_classes},
          {"props", o.prop_classes}};
}

inline TaskOntology ontology_from_json(const nlohmann::json& j) {
  TaskOntology o;
  o.task = task_from_string(j.at("task").get<std::string>());
  o.entity_classes = j.at("entity").get<std::vector<std::string>>();
  o.status_classes = j.at("status").get<std::vector<std::string>>();
  o.prop_classes = j.at("props").get<std::vector<std::string>>();
  return o;
}

namespace checkpoint_detail {

inline void write_blob_and_params(std::ofstream& out, const std::string& blob,
                                  const ParamStore& params,
                                  const std::string& path) {
  out.write(kCheckpointMagic, 8);
  auto write_u64 = [&](std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
  };
  write_u64(blob.size());
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  write_u64(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    write_u64(p.name.size());
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u64(p.value.shape.size());
    for (int d : p.value.shape) write_u64(static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(p.value.v.data()),
              static_cast<std::streamsize>(p.value.v.size() * sizeof(double)));
  }
  if (!out) throw DataError("write failed: " + path);
}

inline nlohmann::json read_config_blob(std::ifstream& in,
                                       const std::string& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError(path + ": not a checkpoint file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  if (!in) throw DataError(path + ": truncated checkpoint");
  std::string blob(len, '\0');
  in.read(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!in) throw DataError(path + ": truncated checkpoint");
  try {
    return nlohmann::json::parse(blob);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": bad config block: " + e.what());
  }
}

inline void read_params(std::ifstream& in, ParamStore& params,
                        const std::string& path) {
  auto read_u64 = [&]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw DataError(path + ": truncated checkpoint");
    return v;
  };
  std::uint64_t n_params = read_u64();
  if (n_params != params.size())
    throw DataError(path + ": parameter count mismatch");
  for (std::size_t i = 0; i < n_params; ++i) {
    Parameter& p = params[i];
    std::string name(read_u64(), '\0');
    in.read(name.data(), static_cast<std::streamsize>(name.size()));
    if (name != p.name)
      throw DataError(path + ": parameter order mismatch at " + name);
    std::uint64_t ndim = read_u64();
    std::vector<int> shape;
    for (std::uint64_t d = 0; d < ndim; ++d)
      shape.push_back(static_cast<int>(read_u64()));
    if (shape != p.value.shape)
      throw DataError(path + ": shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(p.value.v.data()),
            static_cast<std::streamsize>(p.value.v.size() * sizeof(double)));
    if (!in) throw DataError(path + ": truncated checkpoint");
  }
}

}  // namespace checkpoint_detail

// Architecture tag stored in a checkpoint ("rsat" or "baseline").
inline std::string checkpoint_arch(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  nlohmann::json cfg = checkpoint_detail::read_config_blob(in, path);
  return cfg.contains("arch") ? cfg.at("arch").get<std::string>() : "rsat";
}

inline void save_checkpoint(const Model& m, const std::string& path) {
  nlohmann::json cfg;
  cfg["arch"] = "rsat";
  cfg["task"] = to_string(m.task);
  cfg["ontology"] = to_json(m.ontology);
  cfg["encoder"] = to_json(m.enc_cfg);
  cfg["train"] = to_json(m.train_cfg);
  cfg["vocab"] = m.vocab.words;
  cfg["kg"] = m.kg ? to_json(*m.kg) : nlohmann::json(nullptr);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for writing: " + path);
  checkpoint_detail::write_blob_and_params(out, cfg.dump(), m.params, path);
}

inline std::unique_ptr<Model> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  nlohmann::json cfg = checkpoint_detail::read_config_blob(in, path);
  if (cfg.contains("arch") && cfg.at("arch").get<std::string>() != "rsat")
    throw DataError(path + ": not an rsat checkpoint");

  Task task = task_from_string(cfg.at("task").get<std::string>());
  TaskOntology onto = ontology_from_json(cfg.at("ontology"));
  EncoderConfig enc_cfg = encoder_config_from_json(cfg.at("encoder"));
  TrainConfig train_cfg = train_config_from_json(cfg.at("train"));
  Vocabulary vocab =
      Vocabulary::from_words(cfg.at("vocab").get<std::vector<std::string>>());
  std::optional<KnowledgeGraph> kg;
  if (!cfg.at("kg").is_null()) kg = kg_from_json(cfg.at("kg"));

  auto m = build_model(task, std::move(onto), enc_cfg, train_cfg,
                       std::move(vocab), std::move(kg));
  checkpoint_detail::read_params(in, m->params, path);
  return m;
}

}  // namespace rsat
