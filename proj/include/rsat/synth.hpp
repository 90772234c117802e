// Synthetic conversation generator.
//
// Produces doctor/patient dialogues in the style of the clinical-extraction
// task: DR questions introduce an entity, PT answers carry its properties.
// A configurable fraction of relations is "deferred": the property utterance
// is emitted three or more utterances after the entity mention, so relation
// inference has to reach across turns. Everything is deterministic in the
// seed. The generator also assigns template POS tags and builds the synthetic
// knowledge graph over its own vocabulary.
#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rsat/corpus.hpp"
#include "rsat/kg.hpp"
#include "rsat/rng.hpp"

namespace rsat {

// Template POS tag set carried in the corpus.
enum PosTag {
  kPosNoun = 0, kPosVerb, kPosPron, kPosDet, kPosAdp, kPosAdj,
  kPosAdv, kPosNum, kPosPart, kPosPunct, kPosIntj, kPosPropn,
};
constexpr int kPosCount = 12;

inline const std::vector<std::string>& pos_tag_names() {
  static const std::vector<std::string> names = {
      "NOUN", "VERB", "PRON", "DET", "ADP",  "ADJ",
      "ADV",  "NUM",  "PART", "PUNCT", "INTJ", "PROPN"};
  return names;
}

struct SynthConfig {
  std::uint64_t seed = 1;
  Task task = Task::Sx;
  int n_conversations = 100;
  int vocab_size = 120;       // filler + pseudo-word pool
  int n_entity_classes = 12;  // Sx
  int n_prop_classes = 0;     // 0 = task default (Sx 4, Rx 3)
  int n_status_classes = 3;   // Sx
  double mean_utterances = 12.0;
  double cross_turn_prob = 0.11;  // fraction of relations >= 3 sentences away
  double distractor_rate = 0.28;
  double kg_fraction = 0.6;
  int kg_dim = 16;
  int kg_types = 6;

  int prop_classes() const {
    if (n_prop_classes > 0) return n_prop_classes;
    return task == Task::Sx ? 4 : 3;
  }

  void check() const {
    if (n_conversations <= 0) throw ConfigError("n_conversations must be > 0");
    if (vocab_size <= 0) throw ConfigError("vocab_size must be > 0");
    if (task == Task::Sx && n_entity_classes <= 0)
      throw ConfigError("n_entity_classes must be > 0 for sx");
    if (task == Task::Sx && n_status_classes <= 0)
      throw ConfigError("n_status_classes must be > 0 for sx");
    if (cross_turn_prob < 0.0 || cross_turn_prob > 1.0)
      throw ConfigError("cross_turn_prob must be in [0,1]");
    if (distractor_rate < 0.0 || distractor_rate > 1.0)
      throw ConfigError("distractor_rate must be in [0,1]");
    if (mean_utterances < 2.0) throw ConfigError("mean_utterances too small");
  }

  TaskOntology ontology() const {
    return task == Task::Sx
               ? TaskOntology::sx(n_entity_classes, prop_classes(),
                                  n_status_classes)
               : TaskOntology::rx(prop_classes());
  }
};

namespace synth_detail {

// POS lookup for the generator vocabulary; pseudo-words default to NOUN.
inline const std::map<std::string, int>& word_pos_map() {
  static const std::map<std::string, int> m = {
      {"do", kPosVerb},     {"you", kPosPron},    {"have", kPosVerb},
      {"had", kPosVerb},    {"any", kPosDet},     {"lately", kPosAdv},
      {"tell", kPosVerb},   {"me", kPosPron},     {"about", kPosAdp},
      {"the", kPosDet},     {"how", kPosAdv},     {"often", kPosAdv},
      {"?", kPosPunct},     {".", kPosPunct},     {",", kPosPunct},
      {"yes", kPosIntj},    {"no", kPosIntj},     {"my", kPosDet},
      {"is", kPosVerb},     {"in", kPosAdp},      {"has", kPosVerb},
      {"lasted", kPosVerb}, {"for", kPosAdp},     {"comes", kPosVerb},
      {"and", kPosPart},    {"i", kPosPron},      {"not", kPosPart},
      {"nothing", kPosPron},{"like", kPosAdp},    {"that", kPosDet},
      {"well", kPosIntj},   {"maybe", kPosAdv},   {"sometimes", kPosAdv},
      {"hard", kPosAdj},    {"to", kPosPart},     {"say", kPosVerb},
      {"definitely", kPosAdv}, {"still", kPosAdv}, {"feels", kPosVerb},
      {"gone", kPosVerb},   {"on", kPosAdp},      {"sits", kPosVerb},
      {"it", kPosPron},     {"hurts", kPosVerb},  {"are", kPosVerb},
      {"taking", kPosVerb}, {"anything", kPosPron}, {"what", kPosPron},
      {"medications", kPosNoun}, {"medication", kPosNoun}, {"take", kPosVerb},
      {"been", kPosVerb},   {"okay", kPosIntj},   {"alright", kPosIntj},
      {"see", kPosVerb},    {"go", kPosVerb},     {"um", kPosIntj},
      {"uh", kPosIntj},     {"hmm", kPosIntj},    {"right", kPosIntj},
      {"so", kPosPart},     {"we", kPosPron},     {"talked", kPosVerb},
      {"know", kPosVerb},   {"sure", kPosAdj},    {"yeah", kPosIntj},
      {"this", kPosDet},    {"really", kPosAdv},  {"bad", kPosAdj},
      {"mild", kPosAdj},    {"pretty", kPosAdv},  {"severe", kPosAdj},
      {"very", kPosAdv},    {"intense", kPosAdj}, {"quite", kPosAdv},
      {"sharp", kPosAdj},   {"three", kPosNum},   {"months", kPosNoun},
      {"two", kPosNum},     {"weeks", kPosNoun},  {"a", kPosDet},
      {"few", kPosAdj},     {"days", kPosNoun},   {"several", kPosAdj},
      {"years", kPosNoun},  {"ten", kPosNum},     {"back", kPosNoun},
      {"arms", kPosNoun},   {"chest", kPosNoun},  {"left", kPosAdj},
      {"knee", kPosNoun},   {"neck", kPosNoun},   {"every", kPosDet},
      {"morning", kPosNoun},{"twice", kPosAdv},   {"day", kPosNoun},
      {"all", kPosDet},     {"time", kPosNoun},   {"night", kPosNoun},
      {"once", kPosAdv},    {"while", kPosNoun},  {"mg", kPosNoun},
      {"10", kPosNum},      {"400", kPosNum},     {"5", kPosNum},
      {"pills", kPosNoun},  {"one", kPosNum},     {"tablet", kPosNoun},
      {"since", kPosAdp},   {"last", kPosAdj},    {"year", kPosNoun},
      {"many", kPosAdj},    {"daily", kPosAdv},   {"as", kPosAdp},
      {"needed", kPosVerb}, {"at", kPosAdp},      {"your", kPosDet},
      {"of", kPosAdp},      {"little", kPosAdj},  {"dull", kPosAdj},
      {"annoying", kPosAdj},{"honestly", kPosAdv},{"now", kPosAdv},
      {"half", kPosNoun},   {"tablets", kPosNoun},{"or", kPosPart},
      {"other", kPosAdj},   {"times", kPosNoun},  {"down", kPosAdp},
      {"side", kPosNoun},   {"lower", kPosAdj},   {"both", kPosDet},
      {"couple", kPosNoun}, {"six", kPosNum},     {"20", kPosNum},
      {"four", kPosNum},    {"week", kPosNoun},   {"mornings", kPosNoun},
      {"off", kPosAdp},     {"most", kPosDet},    {"arm", kPosNoun},
      {"walk", kPosVerb},   {"met", kPosVerb},    {"ago", kPosAdv},
      {"drink", kPosVerb},  {"coffee", kPosNoun}, {"neighbor", kPosNoun},
      {"by", kPosAdp},      {"rained", kPosVerb}, {"then", kPosAdv},
      {"son", kPosNoun},    {"visits", kPosVerb}, {"wife", kPosNoun},
      {"takes", kPosVerb},  {"too", kPosAdv},     {"doctor", kPosNoun},
      {"mentioned", kPosVerb},
  };
  return m;
}

inline int pos_of(const std::string& word) {
  auto it = word_pos_map().find(word);
  return it == word_pos_map().end() ? kPosNoun : it->second;
}

inline const std::vector<std::vector<std::vector<std::string>>>& sx_surfaces() {
  static const std::vector<std::vector<std::vector<std::string>>> s = {
      {{"pain"}, {"sharp", "pain"}},
      {{"cough"}, {"coughing"}},
      {{"headache"}, {"head", "pain"}},
      {{"nausea"}, {"queasiness"}},
      {{"rash"}, {"skin", "rash"}},
      {{"palpitations"}, {"racing", "heart"}},
      {{"wheeze"}, {"wheezing"}},
      {{"cramps"}, {"stomach", "cramps"}},
      {{"dizziness"}, {"dizzy", "spells"}},
      {{"stiffness"}, {"stiff", "joints"}},
      {{"sore", "throat"}},
      {{"fatigue"}, {"tiredness"}},
  };
  return s;
}

inline const std::vector<std::vector<std::string>>& med_surfaces() {
  static const std::vector<std::vector<std::string>> s = {
      {"ibuprofen"},    {"aspirin"},     {"tylenol"},    {"advil"},
      {"metformin"},    {"lisinopril"},  {"insulin"},    {"albuterol"},
      {"omeprazole"},   {"amoxicillin"}, {"atorvastatin"}, {"losartan"},
      {"gabapentin"},   {"prednisone"},  {"zyrtec"},     {"melatonin"},
      {"blood", "thinner"}, {"pain", "medication"}, {"vitamin", "d"},
      {"fish", "oil"},
  };
  return s;
}

// Property content pools indexed by propType id (Sx order: severity,
// duration, location, frequency; Rx order: dosage, duration, frequency).
inline const std::vector<std::vector<std::vector<std::string>>>& sx_contents() {
  static const std::vector<std::vector<std::vector<std::string>>> c = {
      {{"really", "bad"}, {"mild"}, {"pretty", "severe"}, {"very", "intense"},
       {"quite", "sharp"}, {"kind", "of", "dull"}, {"a", "little", "sharp"},
       {"very", "very", "bad"}, {"sharp", "and", "annoying"},
       {"honestly", "pretty", "bad"}},
      {{"three", "months"}, {"two", "weeks"}, {"a", "few", "days"},
       {"several", "years"}, {"ten", "days"}, {"about", "a", "week"},
       {"over", "a", "year"}, {"about", "three", "months", "now"},
       {"a", "year", "and", "a", "half"}, {"the", "last", "few", "days"}},
      {{"my", "back"}, {"my", "arms"}, {"my", "chest"},
       {"my", "left", "knee"}, {"my", "neck"}, {"my", "lower", "back"},
       {"both", "arms"}, {"the", "left", "side"},
       {"the", "back", "of", "my", "neck"}, {"down", "my", "left", "arm"}},
      {{"every", "morning"}, {"twice", "a", "day"}, {"all", "the", "time"},
       {"every", "night"}, {"once", "in", "a", "while"},
       {"a", "couple", "of", "times", "a", "week"}, {"most", "mornings"},
       {"off", "and", "on"}, {"three", "or", "four", "times", "a", "day"},
       {"every", "other", "morning"}},
  };
  return c;
}

inline const std::vector<std::vector<std::vector<std::string>>>& rx_contents() {
  static const std::vector<std::vector<std::vector<std::string>>> c = {
      {{"10", "mg"}, {"400", "mg"}, {"two", "pills"}, {"one", "tablet"},
       {"5", "mg"}, {"half", "a", "tablet"}, {"20", "mg"},
       {"one", "and", "a", "half", "tablets"}},
      {{"three", "months"}, {"since", "last", "year"}, {"two", "weeks"},
       {"many", "years"}, {"about", "a", "week"}, {"over", "a", "year"},
       {"the", "last", "six", "months"}},
      {{"twice", "a", "day"}, {"every", "morning"}, {"once", "daily"},
       {"as", "needed"}, {"every", "night"}, {"most", "mornings"},
       {"a", "couple", "of", "times", "a", "week"}, {"every", "other", "day"},
       {"three", "times", "a", "day"}},
  };
  return c;
}

inline std::string pseudo_word(int i) {
  static const char* syl[10] = {"ba", "de", "ki", "lo", "mu",
                                "ta", "re", "su", "ni", "po"};
  std::string w = std::string(syl[i % 10]) + syl[(i / 10) % 10];
  if (i >= 100) w += syl[(i / 100) % 10];
  return w + "n";
}

struct PendingSpan {
  int local_start = 0;
  int local_end = 0;
  SpanKind kind = SpanKind::Entity;
  std::map<std::string, int> attributes;
};

struct BuiltUtterance {
  Speaker speaker = Speaker::PT;
  std::vector<Token> tokens;
  std::vector<PendingSpan> spans;
};

class UttBuilder {
 public:
  explicit UttBuilder(Speaker sp) { u_.speaker = sp; }

  UttBuilder& words(const std::vector<std::string>& ws) {
    for (const auto& w : ws) u_.tokens.push_back({w, pos_of(w), -1});
    return *this;
  }
  UttBuilder& word(const std::string& w) { return words({w}); }

  // Annotated span over the given words.
  UttBuilder& span(const std::vector<std::string>& ws, SpanKind kind,
                   std::map<std::string, int> attrs) {
    PendingSpan s;
    s.local_start = static_cast<int>(u_.tokens.size());
    words(ws);
    s.local_end = static_cast<int>(u_.tokens.size());
    s.kind = kind;
    s.attributes = std::move(attrs);
    u_.spans.push_back(std::move(s));
    return *this;
  }

  BuiltUtterance done() { return std::move(u_); }

 private:
  BuiltUtterance u_;
};

}  // namespace synth_detail

struct SynthOutput {
  std::vector<AnnotatedConversation> conversations;
  KnowledgeGraph kg;
  TaskOntology ontology;
};

// Utterance distance between a relation's property span and its linked
// entity span; deferred relations sit >= 3 sentences away.
inline int relation_sentence_distance(const AnnotatedConversation& conv,
                                      const RelationAnnotation& rel) {
  auto [tokens, boundaries] = flatten(conv);
  (void)tokens;
  int up = utterance_of(boundaries, conv.spans[rel.property_span].start);
  int ue = utterance_of(boundaries, conv.spans[rel.entity_span].start);
  return std::abs(up - ue);
}

namespace synth_detail {

// Words the generator can emit, in a fixed order (vocab for the KG).
inline std::vector<std::string> full_word_list(const SynthConfig& cfg) {
  std::vector<std::string> words;
  std::map<std::string, bool> seen;
  auto push = [&](const std::string& w) {
    if (!seen.count(w)) {
      seen[w] = true;
      words.push_back(w);
    }
  };
  for (const auto& [w, p] : word_pos_map()) {
    (void)p;
    push(w);
  }
  for (const auto& variants : sx_surfaces())
    for (const auto& v : variants)
      for (const auto& w : v) push(w);
  for (const auto& v : med_surfaces())
    for (const auto& w : v) push(w);
  for (const auto& pool : sx_contents())
    for (const auto& v : pool)
      for (const auto& w : v) push(w);
  for (const auto& pool : rx_contents())
    for (const auto& v : pool)
      for (const auto& w : v) push(w);
  for (int i = 0; i < cfg.vocab_size; ++i) push(pseudo_word(i));
  for (int i = static_cast<int>(sx_surfaces().size());
       i < cfg.n_entity_classes; ++i)
    push("sympt" + std::to_string(i) + "x");
  return words;
}

class ConversationAssembler {
 public:
  ConversationAssembler(const SynthConfig& cfg, const KnowledgeGraph& kg,
                        std::string id)
      : cfg_(cfg), kg_(kg) {
    conv_.id = std::move(id);
    conv_.task = cfg.task;
  }

  int next_index() const { return static_cast<int>(conv_.utterances.size()); }

  // Appends a built utterance; returns global span ids in order. Hesitation
  // tokens land at span-safe positions so annotations stay intact while span
  // boundaries get harder to tag.
  std::vector<int> append(BuiltUtterance b, Rng& rng, bool allow_distractor) {
    while (allow_distractor && rng.bernoulli(cfg_.distractor_rate)) {
      static const char* fillers[4] = {"um", "uh", "hmm", "well"};
      std::vector<int> slots;
      for (int p = 0; p <= static_cast<int>(b.tokens.size()); ++p) {
        bool inside = false;
        for (const auto& s : b.spans)
          if (s.local_start < p && p < s.local_end) inside = true;
        if (!inside) slots.push_back(p);
      }
      int p = slots[rng.uniform_int(static_cast<int>(slots.size()))];
      Token t{fillers[rng.uniform_int(4)], kPosIntj, -1};
      b.tokens.insert(b.tokens.begin() + p, t);
      for (auto& s : b.spans)
        if (p <= s.local_start) {
          ++s.local_start;
          ++s.local_end;
        }
    }
    Utterance u;
    u.speaker = b.speaker;
    for (auto& t : b.tokens) {
      t.kg_node = kg_.node_of(t.text);
      u.tokens.push_back(t);
    }
    int offset = conv_.token_count();
    conv_.utterances.push_back(std::move(u));
    std::vector<int> ids;
    for (const auto& s : b.spans) {
      SpanAnnotation a;
      a.kind = s.kind;
      a.start = offset + s.local_start;
      a.end = offset + s.local_end;
      a.attributes = s.attributes;
      ids.push_back(static_cast<int>(conv_.spans.size()));
      conv_.spans.push_back(std::move(a));
    }
    return ids;
  }

  // Links a property span to the nearest mention (token midpoint distance,
  // earliest wins ties).
  void relate(int property_span, const std::vector<int>& mention_spans) {
    int best = -1;
    double best_d = 0.0;
    const auto& p = conv_.spans[property_span];
    double pm = 0.5 * (p.start + p.end);
    for (int m : mention_spans) {
      const auto& e = conv_.spans[m];
      double d = std::fabs(pm - 0.5 * (e.start + e.end));
      if (best < 0 || d < best_d) {
        best = m;
        best_d = d;
      }
    }
    conv_.relations.push_back({property_span, best});
  }

  AnnotatedConversation take() { return std::move(conv_); }

 private:
  const SynthConfig& cfg_;
  const KnowledgeGraph& kg_;
  AnnotatedConversation conv_;
};

}  // namespace synth_detail

// POS tag for a known template word, -1 otherwise; lets the CLI tag raw
// conversations the same way the generator does.
inline int pos_tag_of_word(const std::string& w) {
  auto it = synth_detail::word_pos_map().find(w);
  return it == synth_detail::word_pos_map().end() ? -1 : it->second;
}

inline SynthOutput generate_corpus(const SynthConfig& cfg) {
  using namespace synth_detail;
  cfg.check();
  TaskOntology onto = cfg.ontology();
  KnowledgeGraph kg = make_synthetic_kg(full_word_list(cfg), cfg.kg_fraction,
                                        cfg.kg_dim, cfg.kg_types,
                                        cfg.seed ^ 0x5EEDBEEFULL);
  Rng base(cfg.seed);

  // Surface variants per entity class, extended past the curated list.
  std::vector<std::vector<std::vector<std::string>>> surfaces;
  if (cfg.task == Task::Sx) {
    surfaces = sx_surfaces();
    surfaces.resize(static_cast<std::size_t>(cfg.n_entity_classes));
    for (int i = static_cast<int>(sx_surfaces().size());
         i < cfg.n_entity_classes; ++i)
      surfaces[i] = {{"sympt" + std::to_string(i) + "x"}};
  }
  auto contents = [&](int prop) -> const std::vector<std::vector<std::string>>& {
    static std::vector<std::vector<std::string>> fallback = {{"thing"}};
    const auto& pools = cfg.task == Task::Sx ? sx_contents() : rx_contents();
    if (prop < static_cast<int>(pools.size())) return pools[prop];
    return fallback;
  };

  SynthOutput out;
  out.ontology = onto;

  for (int ci = 0; ci < cfg.n_conversations; ++ci) {
    Rng rng = base.split(static_cast<std::uint64_t>(ci) + 1);
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "%s-%06d",
                  cfg.task == Task::Sx ? "sx" : "rx", ci);
    ConversationAssembler asmr(cfg, kg, idbuf);

    int n_episodes = 2 + rng.uniform_int(3);
    double target_utts = std::max(
        static_cast<double>(2 * n_episodes + 1),
        cfg.mean_utterances + rng.uniform(-2.0, 2.0));

    struct Deferred {
      std::vector<int> mentions;
      int prop_type = 0;
      std::vector<std::string> content;
      std::vector<std::string> echo;  // empty = generic reference
      int earliest = 0;
    };
    std::vector<Deferred> pending;

    auto filler = [&](bool allow_confusable = true) {
      static const std::vector<std::vector<std::string>> dr = {
          {"okay", "i", "see", "."}, {"alright", "."}, {"go", "on", "."}};
      static const std::vector<std::vector<std::string>> pt = {
          {"well", "you", "know", "."},
          {"yeah", "sure", "."},
          {"right", "okay", "."}};
      // Unannotated small talk that mentions time or amount expressions;
      // extraction has to learn they are not properties of anything.
      static const std::vector<std::vector<std::string>> confusable = {
          {"i", "walk", "every", "morning", "."},
          {"we", "met", "twice", "last", "week", "."},
          {"that", "was", "two", "weeks", "ago", "."},
          {"i", "drink", "coffee", "three", "times", "a", "day", "."},
          {"my", "neighbor", "comes", "by", "most", "mornings", "."},
          {"it", "rained", "all", "the", "time", "back", "then", "."},
          {"my", "son", "visits", "once", "in", "a", "while", "."},
      };
      bool is_dr = rng.bernoulli(0.5);
      UttBuilder b(is_dr ? Speaker::DR : Speaker::PT);
      if (allow_confusable && cfg.task == Task::Rx && !is_dr &&
          rng.bernoulli(0.25)) {
        // someone else's medication: mentioned but never annotated
        const auto& med =
            med_surfaces()[rng.uniform_int(static_cast<int>(med_surfaces().size()))];
        if (rng.bernoulli(0.5))
          b.words({"my", "wife", "takes"}).words(med).words({"too", "."});
        else
          b.words({"the", "doctor", "mentioned"}).words(med).words({"once", "."});
        asmr.append(b.done(), rng, false);
        return;
      }
      if (allow_confusable && !is_dr && rng.bernoulli(0.35)) {
        b.words(confusable[rng.uniform_int(static_cast<int>(confusable.size()))]);
        asmr.append(b.done(), rng, false);
        return;
      }
      const auto& pool = is_dr ? dr : pt;
      b.words(pool[rng.uniform_int(static_cast<int>(pool.size()))]);
      if (rng.bernoulli(0.4)) {
        UttBuilder chat(Speaker::PT);
        chat.words({"we", "talked", "about",
                    pseudo_word(rng.uniform_int(cfg.vocab_size)), "and",
                    pseudo_word(rng.uniform_int(cfg.vocab_size)), "."});
        asmr.append(b.done(), rng, false);
        asmr.append(chat.done(), rng, false);
        return;
      }
      asmr.append(b.done(), rng, false);
    };

    auto flush_ready = [&]() {
      for (auto it = pending.begin(); it != pending.end();) {
        if (asmr.next_index() >= it->earliest) {
          UttBuilder b(Speaker::PT);
          if (cfg.task == Task::Sx) {
            static const char* verbs_by_prop[4][3] = {
                {"still", "feels", nullptr},
                {"has", "gone", "on"},
                {"sits", "in", nullptr},
                {"comes", nullptr, nullptr}};
            if (!it->echo.empty()) {
              b.word("that").words(it->echo);
            } else {
              b.word("it");
            }
            int p = std::min(it->prop_type, 3);
            if (it->echo.empty() && p == 0) {
              b.words({"still", "hurts"});
            } else {
              for (int w = 0; w < 3 && verbs_by_prop[p][w]; ++w)
                b.word(verbs_by_prop[p][w]);
              if (p == 1) b.word("for");
            }
            b.span(it->content, SpanKind::Property,
                   {{kAttrPropType, it->prop_type}});
            b.word(".");
          } else {
            if (!it->echo.empty()) {
              b.words({"i", "take", "the"}).words(it->echo);
            } else {
              b.words({"i", "take", "it"});
            }
            if (it->prop_type == 1 && it->content.front() != "since")
              b.word("for");
            b.span(it->content, SpanKind::Property,
                   {{kAttrPropType, it->prop_type}});
            b.word(".");
          }
          auto ids = asmr.append(b.done(), rng, true);
          asmr.relate(ids[0], it->mentions);
          it = pending.erase(it);
        } else {
          ++it;
        }
      }
    };

    // Distinct entities per conversation keep references unambiguous. Sx
    // classes follow a Zipf-like distribution, mirroring the skewed symptom
    // frequencies the hierarchical model is meant to cope with.
    std::vector<int> classes;
    if (cfg.task == Task::Sx) {
      std::vector<int> avail;
      std::vector<double> weight;
      for (int i = 0; i < cfg.n_entity_classes; ++i) {
        avail.push_back(i);
        weight.push_back(1.0 / std::pow(i + 1.0, 0.7));
      }
      while (!avail.empty()) {
        double total = 0.0;
        for (double w : weight) total += w;
        double r = rng.uniform() * total;
        std::size_t pick = 0;
        for (; pick + 1 < avail.size(); ++pick) {
          r -= weight[pick];
          if (r <= 0.0) break;
        }
        classes.push_back(avail[pick]);
        avail.erase(avail.begin() + pick);
        weight.erase(weight.begin() + pick);
      }
    } else {
      for (int i = 0; i < static_cast<int>(med_surfaces().size()); ++i)
        classes.push_back(i);
      rng.shuffle(classes);
    }

    // Property types cycle without replacement across the conversation: a
    // discussion rarely repeats the same property pattern, and distinct
    // types keep wrongly-linked tuples from matching another reference.
    std::vector<int> prop_cycle;
    std::size_t prop_cursor = 0;
    auto next_prop = [&]() {
      if (prop_cursor == prop_cycle.size()) {
        prop_cycle.resize(static_cast<std::size_t>(onto.n_prop()));
        for (int i = 0; i < onto.n_prop(); ++i) prop_cycle[i] = i;
        rng.shuffle(prop_cycle);
        prop_cursor = 0;
      }
      return prop_cycle[prop_cursor++];
    };

    int med_cursor = 0;
    for (int ep = 0; ep < n_episodes; ++ep) {
      // a pending deferred property keeps its window clean: only filler may
      // appear between the entity mention and the deferred utterance
      while (!pending.empty()) {
        if (asmr.next_index() < pending.front().earliest) filler(false);
        flush_ready();
      }
      double progress =
          static_cast<double>(ep) / static_cast<double>(n_episodes);
      while (asmr.next_index() < progress * target_utts && asmr.next_index() < 40)
        filler();

      if (cfg.task == Task::Sx) {
        int cls = classes[ep % classes.size()];
        const auto& variants = surfaces[cls];
        const auto& surface =
            variants[rng.uniform_int(static_cast<int>(variants.size()))];
        double sdraw = rng.uniform();
        int status = sdraw < 0.6 ? 0 : sdraw < 0.85 ? 1 : 2;
        std::map<std::string, int> attrs = {{kAttrSymType, cls},
                                            {kAttrSymStatus, status}};

        UttBuilder q(Speaker::DR);
        switch (rng.uniform_int(4)) {
          case 0: q.words({"do", "you", "have"}).span(surface, SpanKind::Entity, attrs).word("?"); break;
          case 1: q.words({"have", "you", "had"}).span(surface, SpanKind::Entity, attrs).words({"lately", "?"}); break;
          case 2: q.words({"how", "often", "do", "you", "have"}).span(surface, SpanKind::Entity, attrs).word("?"); break;
          default: q.words({"tell", "me", "about", "the"}).span(surface, SpanKind::Entity, attrs).word("."); break;
        }
        std::vector<int> mentions = asmr.append(q.done(), rng, true);

        int n_props = 0;
        if (status == 0) n_props = 1 + (rng.bernoulli(0.5) ? 1 : 0);
        else if (status == 2) n_props = rng.bernoulli(0.5) ? 1 : 0;

        std::vector<int> props;
        for (int p = 0; p < n_props; ++p) props.push_back(next_prop());
        std::vector<int> same_turn, deferred;
        for (int p : props)
          (rng.bernoulli(cfg.cross_turn_prob) ? deferred : same_turn).push_back(p);

        // PT reply: status cue plus any same-turn property clauses with an
        // annotated re-mention of the entity.
        UttBuilder r(Speaker::PT);
        std::vector<std::pair<int, std::vector<std::string>>> clauses;
        for (int p : same_turn) {
          const auto& pool = contents(p);
          clauses.push_back(
              {p, pool[rng.uniform_int(static_cast<int>(pool.size()))]});
        }
        if (status == 1) {
          if (rng.bernoulli(0.5))
            r.words({"no", "i", "have", "not", "had", "any"})
                .span(surface, SpanKind::Entity, attrs)
                .word(".");
          else
            r.words({"no", "nothing", "like", "that", "."});
        } else if (!clauses.empty()) {
          if (status == 2) r.words({"well", "maybe", ","});
          else r.word("yes");
          r.word("my").span(surface, SpanKind::Entity, attrs);
          bool first = true;
          for (auto& [p, content] : clauses) {
            if (!first) r.word("and");
            first = false;
            int pc = std::min(p, 3);
            switch (pc) {
              case 0: r.word("is"); break;
              case 1: r.words({"has", "lasted", "for"}); break;
              case 2: r.words({"is", "in"}); break;
              default: r.word("comes"); break;
            }
            r.span(content, SpanKind::Property, {{kAttrPropType, p}});
          }
          r.word(".");
        } else if (status == 2) {
          r.words({"well", "hard", "to", "say", "."});
        } else {
          r.words({"yes", "definitely", "."});
        }
        auto ids = asmr.append(r.done(), rng, true);
        // A re-mention (if present) precedes the property spans.
        int mention2 = -1;
        std::vector<int> prop_ids;
        std::size_t k = 0;
        if (!ids.empty() && (status == 1 || !clauses.empty())) {
          mention2 = ids[0];
          k = 1;
        }
        for (; k < ids.size(); ++k) prop_ids.push_back(ids[k]);
        if (mention2 >= 0) mentions.push_back(mention2);
        for (int pid : prop_ids) asmr.relate(pid, mentions);

        int last_mention_utt = asmr.next_index() - (mention2 >= 0 ? 1 : 2);
        for (int p : deferred) {
          const auto& pool = contents(p);
          Deferred d;
          d.mentions = mentions;
          d.prop_type = p;
          d.content = pool[rng.uniform_int(static_cast<int>(pool.size()))];
          if (rng.bernoulli(0.9)) d.echo = surface;
          d.earliest = last_mention_utt + 3;
          pending.push_back(std::move(d));
        }
      } else {
        // Rx episode: DR question without mentions, PT answer names one or
        // two medications with properties in the same utterance.
        UttBuilder q(Speaker::DR);
        switch (rng.uniform_int(3)) {
          case 0: q.words({"are", "you", "taking", "anything", "for", "it", "?"}); break;
          case 1: q.words({"what", "medications", "are", "you", "taking", "?"}); break;
          default: q.words({"any", "medications", "?"}); break;
        }
        asmr.append(q.done(), rng, true);

        bool combo = rng.bernoulli(0.5) &&
                     med_cursor + 1 < static_cast<int>(classes.size());
        int n_meds = combo ? 2 : 1;
        UttBuilder r(Speaker::PT);
        if (!combo && rng.bernoulli(0.3))
          r.words({"i", "have", "been", "taking"});
        else
          r.words({"i", "take"});
        struct MedOut {
          std::vector<int> mention;
          std::vector<std::string> surface;
          std::vector<std::vector<std::string>> deferred_contents;
          std::vector<int> deferred_props;
        };
        std::vector<MedOut> meds(n_meds);
        std::vector<std::pair<int, int>> span_owner;  // (med, propType|-1)
        for (int mi = 0; mi < n_meds; ++mi) {
          if (mi > 0) r.word("and");
          const auto& surface =
              med_surfaces()[classes[med_cursor++ % classes.size()]];
          meds[mi].surface = surface;
          r.span(surface, SpanKind::Entity, {});
          span_owner.push_back({mi, -1});
          int n_props = 1 + (combo ? 0 : (rng.bernoulli(0.3) ? 1 : 0));
          for (int pi = 0; pi < n_props; ++pi) {
            int p = next_prop();
            const auto& pool = contents(p);
            auto content = pool[rng.uniform_int(static_cast<int>(pool.size()))];
            if (rng.bernoulli(cfg.cross_turn_prob)) {
              meds[mi].deferred_props.push_back(p);
              meds[mi].deferred_contents.push_back(content);
            } else {
              if (p == 1 && content.front() != "since") r.word("for");
              r.span(content, SpanKind::Property, {{kAttrPropType, p}});
              span_owner.push_back({mi, p});
            }
          }
        }
        r.word(".");
        auto ids = asmr.append(r.done(), rng, true);
        int answer_utt = asmr.next_index() - 1;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          auto [mi, p] = span_owner[k];
          if (p == -1) meds[mi].mention = {ids[k]};
          else asmr.relate(ids[k], meds[mi].mention);
        }
        for (auto& m : meds) {
          std::size_t ci2 = 0;
          for (int p : m.deferred_props) {
            Deferred d;
            d.mentions = m.mention;
            d.prop_type = p;
            d.content = m.deferred_contents[ci2++];
            if (rng.bernoulli(0.5)) d.echo = m.surface;
            d.earliest = answer_utt + 3;
            pending.push_back(std::move(d));
          }
        }
      }
    }

    while (!pending.empty()) {
      int earliest = pending.front().earliest;
      for (const auto& d : pending) earliest = std::min(earliest, d.earliest);
      if (asmr.next_index() < earliest) filler(false);
      flush_ready();
    }
    while (asmr.next_index() < target_utts && rng.bernoulli(0.3)) filler();

    AnnotatedConversation conv = asmr.take();
    validate(conv, &onto, kPosCount);
    out.conversations.push_back(std::move(conv));
  }

  out.kg = std::move(kg);
  return out;
}

inline std::vector<AnnotatedConversation> generate_synthetic(
    const SynthConfig& cfg) {
  return generate_corpus(cfg).conversations;
}

}  // namespace rsat
