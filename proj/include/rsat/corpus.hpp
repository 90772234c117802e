// Annotated-conversation data model and corpus serialization.
//
// Spans are indexed over the flattened conversation (one coordinate system
// for all layers) and relations link a property span to exactly one entity
// span. Corpus files are JSON-lines, one conversation per line, each record
// carrying a format-version field.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rsat/rng.hpp"

namespace rsat {

constexpr int kCorpusFormatVersion = 1;

// Malformed data or file contents; the CLI maps these to exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Speaker { DR, PT, OTHER };
enum class SpanKind { Entity, Property };
enum class Task { Sx, Rx };

inline std::string to_string(Speaker s) {
  switch (s) {
    case Speaker::DR: return "DR";
    case Speaker::PT: return "PT";
    default: return "OTHER";
  }
}
inline std::string to_string(SpanKind k) {
  return k == SpanKind::Entity ? "entity" : "property";
}
inline std::string to_string(Task t) { return t == Task::Sx ? "sx" : "rx"; }

inline Task task_from_string(const std::string& s) {
  if (s == "sx") return Task::Sx;
  if (s == "rx") return Task::Rx;
  throw DataError("unknown task: " + s);
}

struct Token {
  std::string text;
  int pos_tag = -1;   // -1 = absent
  int kg_node = -1;   // -1 = absent

  bool operator==(const Token&) const = default;
};

struct Utterance {
  Speaker speaker = Speaker::OTHER;
  std::vector<Token> tokens;

  bool operator==(const Utterance&) const = default;
};

// Attribute heads are named; values are class ids into the task ontology.
struct SpanAnnotation {
  SpanKind kind = SpanKind::Entity;
  int start = 0;  // token index into the flattened conversation, inclusive
  int end = 0;    // exclusive
  std::map<std::string, int> attributes;

  bool operator==(const SpanAnnotation&) const = default;
};

struct RelationAnnotation {
  int property_span = -1;
  int entity_span = -1;

  bool operator==(const RelationAnnotation&) const = default;
};

struct AnnotatedConversation {
  std::string id;
  Task task = Task::Sx;
  std::vector<Utterance> utterances;
  std::vector<SpanAnnotation> spans;
  std::vector<RelationAnnotation> relations;

  bool operator==(const AnnotatedConversation&) const = default;

  int token_count() const {
    int n = 0;
    for (const auto& u : utterances) n += static_cast<int>(u.tokens.size());
    return n;
  }
};

struct TaskOntology {
  Task task = Task::Sx;
  std::vector<std::string> entity_classes;  // empty for Rx (open set)
  std::vector<std::string> status_classes;  // empty for Rx
  std::vector<std::string> prop_classes;

  int n_entity() const { return static_cast<int>(entity_classes.size()); }
  int n_status() const { return static_cast<int>(status_classes.size()); }
  int n_prop() const { return static_cast<int>(prop_classes.size()); }

  const std::string& entity_name(int id) const { return entity_classes.at(id); }
  const std::string& status_name(int id) const { return status_classes.at(id); }
  const std::string& prop_name(int id) const { return prop_classes.at(id); }

  // Symptom ontology; the first classes carry curated names so that small
  // corpora read naturally, the remainder are generated.
  static TaskOntology sx(int n_entity = 12, int n_prop = 4, int n_status = 3) {
    static const std::vector<std::string> kNames = {
        "sym/msk/pain",       "sym/resp/cough",     "sym/neuro/headache",
        "sym/gi/nausea",      "sym/derm/rash",      "sym/cardio/palpitations",
        "sym/resp/wheeze",    "sym/gi/cramps",      "sym/neuro/dizziness",
        "sym/msk/stiffness",  "sym/ent/sore_throat", "sym/gen/fatigue"};
    static const std::vector<std::string> kProps = {
        "symprop/severity", "symprop/duration", "symprop/location",
        "symprop/frequency"};
    TaskOntology o;
    o.task = Task::Sx;
    for (int i = 0; i < n_entity; ++i)
      o.entity_classes.push_back(i < static_cast<int>(kNames.size())
                                     ? kNames[i]
                                     : "sym/gen/class_" + std::to_string(i));
    for (int i = 0; i < n_prop; ++i)
      o.prop_classes.push_back(i < static_cast<int>(kProps.size())
                                   ? kProps[i]
                                   : "symprop/extra_" + std::to_string(i));
    static const std::vector<std::string> kStatus = {"experienced",
                                                     "not_experienced", "other"};
    for (int i = 0; i < n_status; ++i)
      o.status_classes.push_back(i < 3 ? kStatus[i]
                                       : "status_" + std::to_string(i));
    return o;
  }

  static TaskOntology rx(int n_prop = 3) {
    static const std::vector<std::string> kProps = {
        "medsprop/dosage", "medsprop/duration", "medsprop/frequency"};
    TaskOntology o;
    o.task = Task::Rx;
    for (int i = 0; i < n_prop; ++i)
      o.prop_classes.push_back(i < static_cast<int>(kProps.size())
                                   ? kProps[i]
                                   : "medsprop/extra_" + std::to_string(i));
    return o;
  }
};

// Attribute head names (see attributes_for below for the task/kind mapping).
inline const std::string kAttrSymType = "symType";
inline const std::string kAttrSymStatus = "symStatus";
inline const std::string kAttrPropType = "propType";

inline std::pair<std::vector<Token>, std::vector<int>> flatten(
    const AnnotatedConversation& conv) {
  std::vector<Token> tokens;
  std::vector<int> boundaries;
  for (const auto& u : conv.utterances) {
    boundaries.push_back(static_cast<int>(tokens.size()));
    tokens.insert(tokens.end(), u.tokens.begin(), u.tokens.end());
  }
  return {std::move(tokens), std::move(boundaries)};
}

// Utterance index of a flattened token position.
inline int utterance_of(const std::vector<int>& boundaries, int token_index) {
  int u = 0;
  for (std::size_t i = 0; i < boundaries.size(); ++i)
    if (boundaries[i] <= token_index) u = static_cast<int>(i);
  return u;
}

// Structural validation; pass an ontology to additionally check attribute
// class ids (ontology closure), and pos_count to bound POS ids.
inline void validate(const AnnotatedConversation& conv,
                     const TaskOntology* ontology = nullptr,
                     int pos_count = -1) {
  auto err = [&](const std::string& msg) {
    throw DataError("conversation '" + conv.id + "': " + msg);
  };
  if (conv.utterances.empty()) err("no utterances");
  for (const auto& u : conv.utterances) {
    if (u.tokens.empty()) err("empty utterance");
    for (const auto& t : u.tokens) {
      if (t.text.empty()) err("empty token text");
      if (pos_count > 0 && t.pos_tag >= pos_count)
        err("pos tag " + std::to_string(t.pos_tag) + " out of range");
    }
  }
  int n = conv.token_count();
  for (std::size_t si = 0; si < conv.spans.size(); ++si) {
    const auto& s = conv.spans[si];
    if (s.start < 0 || s.start >= s.end || s.end > n)
      err("span " + std::to_string(si) + " out of range [" +
          std::to_string(s.start) + "," + std::to_string(s.end) + ") over " +
          std::to_string(n) + " tokens");
    if (ontology) {
      for (const auto& [head, cls] : s.attributes) {
        int limit = -1;
        if (head == kAttrSymType) limit = ontology->n_entity();
        else if (head == kAttrSymStatus) limit = ontology->n_status();
        else if (head == kAttrPropType) limit = ontology->n_prop();
        if (limit >= 0 && (cls < 0 || cls >= limit))
          err("span " + std::to_string(si) + " attribute " + head +
              " class " + std::to_string(cls) + " out of range");
      }
    }
  }
  // Same-kind spans may not overlap (BIO tagging cannot represent overlaps).
  for (std::size_t i = 0; i < conv.spans.size(); ++i)
    for (std::size_t j = i + 1; j < conv.spans.size(); ++j) {
      const auto &a = conv.spans[i], &b = conv.spans[j];
      if (a.kind == b.kind && a.start < b.end && b.start < a.end)
        err("overlapping " + to_string(a.kind) + " spans " +
            std::to_string(i) + " and " + std::to_string(j));
    }
  std::vector<int> prop_used(conv.spans.size(), 0);
  for (std::size_t ri = 0; ri < conv.relations.size(); ++ri) {
    const auto& r = conv.relations[ri];
    if (r.property_span < 0 ||
        r.property_span >= static_cast<int>(conv.spans.size()) ||
        r.entity_span < 0 || r.entity_span >= static_cast<int>(conv.spans.size()))
      err("relation " + std::to_string(ri) + " references missing span");
    if (conv.spans[r.property_span].kind != SpanKind::Property)
      err("relation " + std::to_string(ri) + " property_span " +
          std::to_string(r.property_span) + " is not a property span");
    if (conv.spans[r.entity_span].kind != SpanKind::Entity)
      err("relation " + std::to_string(ri) + " entity_span " +
          std::to_string(r.entity_span) + " is not an entity span");
    if (++prop_used[r.property_span] > 1)
      err("property span " + std::to_string(r.property_span) +
          " participates in more than one relation");
  }
}

// ---------------------------------------------------------------------------
// JSON-lines serialization

inline nlohmann::json to_json(const AnnotatedConversation& conv) {
  nlohmann::json j;
  j["version"] = kCorpusFormatVersion;
  j["id"] = conv.id;
  j["task"] = to_string(conv.task);
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& u : conv.utterances) {
    nlohmann::json ju;
    ju["speaker"] = to_string(u.speaker);
    nlohmann::json toks = nlohmann::json::array();
    for (const auto& t : u.tokens) {
      nlohmann::json jt;
      jt["text"] = t.text;
      if (t.pos_tag >= 0) jt["pos"] = t.pos_tag;
      if (t.kg_node >= 0) jt["kg"] = t.kg_node;
      toks.push_back(std::move(jt));
    }
    ju["tokens"] = std::move(toks);
    utts.push_back(std::move(ju));
  }
  j["utterances"] = std::move(utts);
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : conv.spans) {
    nlohmann::json js;
    js["kind"] = to_string(s.kind);
    js["start"] = s.start;
    js["end"] = s.end;
    js["attributes"] = s.attributes;
    spans.push_back(std::move(js));
  }
  j["spans"] = std::move(spans);
  nlohmann::json rels = nlohmann::json::array();
  for (const auto& r : conv.relations)
    rels.push_back({{"property", r.property_span}, {"entity", r.entity_span}});
  j["relations"] = std::move(rels);
  return j;
}

inline AnnotatedConversation conversation_from_json(const nlohmann::json& j) {
  AnnotatedConversation conv;
  if (!j.contains("version"))
    throw DataError("record missing format-version field");
  if (j.at("version").get<int>() != kCorpusFormatVersion)
    throw DataError("unsupported corpus format version " +
                    j.at("version").dump());
  conv.id = j.at("id").get<std::string>();
  conv.task = task_from_string(j.at("task").get<std::string>());
  for (const auto& ju : j.at("utterances")) {
    Utterance u;
    std::string sp = ju.at("speaker").get<std::string>();
    u.speaker = sp == "DR" ? Speaker::DR : sp == "PT" ? Speaker::PT : Speaker::OTHER;
    for (const auto& jt : ju.at("tokens")) {
      Token t;
      t.text = jt.at("text").get<std::string>();
      if (jt.contains("pos")) t.pos_tag = jt.at("pos").get<int>();
      if (jt.contains("kg")) t.kg_node = jt.at("kg").get<int>();
      u.tokens.push_back(std::move(t));
    }
    conv.utterances.push_back(std::move(u));
  }
  if (j.contains("spans"))
    for (const auto& js : j.at("spans")) {
      SpanAnnotation s;
      std::string kind = js.at("kind").get<std::string>();
      if (kind != "entity" && kind != "property")
        throw DataError("unknown span kind: " + kind);
      s.kind = kind == "entity" ? SpanKind::Entity : SpanKind::Property;
      s.start = js.at("start").get<int>();
      s.end = js.at("end").get<int>();
      if (js.contains("attributes"))
        s.attributes = js.at("attributes").get<std::map<std::string, int>>();
      conv.spans.push_back(std::move(s));
    }
  if (j.contains("relations"))
    for (const auto& jr : j.at("relations")) {
      RelationAnnotation r;
      r.property_span = jr.at("property").get<int>();
      r.entity_span = jr.at("entity").get<int>();
      conv.relations.push_back(r);
    }
  return conv;
}

inline void save_corpus(const std::vector<AnnotatedConversation>& corpus,
                        const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  for (const auto& conv : corpus) out << to_json(conv).dump() << "\n";
}

inline std::vector<AnnotatedConversation> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  std::vector<AnnotatedConversation> corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": parse error: " + e.what());
    }
    AnnotatedConversation conv;
    try {
      conv = conversation_from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": malformed record: " + e.what());
    }
    validate(conv);
    corpus.push_back(std::move(conv));
  }
  return corpus;
}

// Deterministic shuffle split into (train, dev, test).
inline std::array<std::vector<AnnotatedConversation>, 3> split_corpus(
    const std::vector<AnnotatedConversation>& corpus,
    std::array<double, 3> fractions, std::uint64_t seed) {
  double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::fabs(sum - 1.0) > 1e-9)
    throw ConfigError("split fractions must sum to 1");
  std::vector<int> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(seed);
  rng.shuffle(order);
  std::size_t n = corpus.size();
  std::size_t n_train = static_cast<std::size_t>(fractions[0] * n + 0.5);
  std::size_t n_dev = static_cast<std::size_t>(fractions[1] * n + 0.5);
  if (n_train + n_dev > n) n_dev = n - n_train;
  std::array<std::vector<AnnotatedConversation>, 3> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& conv = corpus[order[i]];
    if (i < n_train) out[0].push_back(conv);
    else if (i < n_train + n_dev) out[1].push_back(conv);
    else out[2].push_back(conv);
  }
  return out;
}

}  // namespace rsat
