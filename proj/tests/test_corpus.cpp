#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "rsat/corpus.hpp"
#include "rsat/kg.hpp"
#include "rsat/synth.hpp"

using namespace rsat;

namespace {

AnnotatedConversation tiny_conv() {
  AnnotatedConversation c;
  c.id = "t-1";
  c.task = Task::Sx;
  Utterance u1;
  u1.speaker = Speaker::DR;
  u1.tokens = {{"do", 1, -1}, {"you", 2, -1}, {"have", 1, -1}};
  Utterance u2;
  u2.speaker = Speaker::PT;
  u2.tokens = {{"yes", 10, -1}, {".", 9, -1}};
  c.utterances = {u1, u2};
  return c;
}

std::string corpus_bytes(const std::vector<AnnotatedConversation>& cs) {
  std::ostringstream os;
  for (const auto& c : cs) os << to_json(c).dump() << "\n";
  return os.str();
}

std::string temp_path(const char* name) {
  return std::string("/tmp/rsat_corpus_test_") + name;
}

}  // namespace

TEST_CASE("flatten concatenates utterances and marks boundaries") {
  AnnotatedConversation c = tiny_conv();
  auto [tokens, boundaries] = flatten(c);
  CHECK(tokens.size() == 5);
  CHECK(boundaries == std::vector<int>{0, 3});
  CHECK(tokens[3].text == "yes");

  AnnotatedConversation single = tiny_conv();
  single.utterances.pop_back();
  CHECK(flatten(single).second == std::vector<int>{0});

  AnnotatedConversation empty;
  empty.id = "e";
  CHECK_THROWS_AS(validate(empty), DataError);
}

TEST_CASE("validate rejects broken annotations") {
  AnnotatedConversation c = tiny_conv();
  c.spans.push_back({SpanKind::Entity, 2, 9, {}});
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("t-1"), DataError);

  c = tiny_conv();
  c.spans.push_back({SpanKind::Entity, 0, 2, {}});
  c.spans.push_back({SpanKind::Entity, 1, 3, {}});
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("overlapping"), DataError);

  // relation pointing at a property where an entity is required
  c = tiny_conv();
  c.spans.push_back({SpanKind::Property, 0, 1, {}});
  c.spans.push_back({SpanKind::Property, 3, 4, {}});
  c.relations.push_back({1, 0});
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("not an entity"), DataError);

  // one property, two relations
  c = tiny_conv();
  c.spans.push_back({SpanKind::Entity, 0, 1, {}});
  c.spans.push_back({SpanKind::Property, 3, 4, {}});
  c.relations.push_back({1, 0});
  c.relations.push_back({1, 0});
  CHECK_THROWS_WITH_AS(validate(c), doctest::Contains("more than one"), DataError);
}

TEST_CASE("ontology closure is enforced when an ontology is supplied") {
  AnnotatedConversation c = tiny_conv();
  c.spans.push_back({SpanKind::Entity, 0, 1, {{kAttrSymType, 99}}});
  TaskOntology onto = TaskOntology::sx();
  CHECK_THROWS_WITH_AS(validate(c, &onto), doctest::Contains("out of range"),
                       DataError);
  c.spans[0].attributes[kAttrSymType] = 3;
  c.spans[0].attributes[kAttrSymStatus] = 1;
  CHECK_NOTHROW(validate(c, &onto));
}

TEST_CASE("corpus save/load round-trips") {
  SynthConfig cfg;
  cfg.n_conversations = 3;
  cfg.seed = 21;
  auto corpus = generate_synthetic(cfg);
  std::string path = temp_path("roundtrip.jsonl");
  save_corpus(corpus, path);
  auto loaded = load_corpus(path);
  REQUIRE(loaded.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) CHECK(loaded[i] == corpus[i]);
  std::remove(path.c_str());
}

TEST_CASE("load errors carry context") {
  std::string path = temp_path("broken.jsonl");
  {
    std::ofstream out(path);
    out << "{not json\n";
  }
  CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains(":1:"), DataError);

  // span end beyond the token count names the conversation id
  AnnotatedConversation c = tiny_conv();
  c.spans.push_back({SpanKind::Entity, 3, 7, {}});
  {
    std::ofstream out(path);
    out << to_json(c).dump() << "\n";
  }
  CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("t-1"), DataError);

  // relation whose entity_span is a property is rejected at load
  c = tiny_conv();
  c.spans.push_back({SpanKind::Property, 0, 1, {}});
  c.spans.push_back({SpanKind::Property, 3, 4, {}});
  c.relations.push_back({1, 0});
  {
    std::ofstream out(path);
    out << to_json(c).dump() << "\n";
  }
  CHECK_THROWS_AS(load_corpus(path), DataError);

  // missing version field
  {
    std::ofstream out(path);
    nlohmann::json j = to_json(tiny_conv());
    j.erase("version");
    out << j.dump() << "\n";
  }
  CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("version"), DataError);
  std::remove(path.c_str());
}

TEST_CASE("generator is deterministic per seed") {
  SynthConfig cfg;
  cfg.n_conversations = 20;
  cfg.seed = 77;
  auto a = generate_synthetic(cfg);
  auto b = generate_synthetic(cfg);
  CHECK(corpus_bytes(a) == corpus_bytes(b));

  cfg.seed = 78;
  auto c = generate_synthetic(cfg);
  CHECK(corpus_bytes(a) != corpus_bytes(c));
}

TEST_CASE("cross-turn probability zero keeps relations inside one utterance") {
  for (Task task : {Task::Sx, Task::Rx}) {
    SynthConfig cfg;
    cfg.task = task;
    cfg.n_conversations = 40;
    cfg.cross_turn_prob = 0.0;
    cfg.seed = 5;
    auto corpus = generate_synthetic(cfg);
    int relations = 0;
    for (const auto& conv : corpus)
      for (const auto& rel : conv.relations) {
        ++relations;
        CHECK(relation_sentence_distance(conv, rel) == 0);
      }
    CHECK(relations > 20);
  }
}

TEST_CASE("cross-turn fraction tracks the configured probability") {
  SynthConfig cfg;
  cfg.n_conversations = 100;
  cfg.cross_turn_prob = 0.11;
  cfg.seed = 9;
  auto corpus = generate_synthetic(cfg);
  int total = 0, cross = 0;
  for (const auto& conv : corpus)
    for (const auto& rel : conv.relations) {
      ++total;
      int d = relation_sentence_distance(conv, rel);
      CHECK((d == 0 || d >= 3));
      if (d >= 3) ++cross;
    }
  double frac = static_cast<double>(cross) / total;
  CHECK(frac >= 0.06);
  CHECK(frac <= 0.16);

  // tighter bound once the sample holds >= 500 relations
  cfg.n_conversations = 300;
  cfg.task = Task::Rx;
  auto big = generate_synthetic(cfg);
  total = cross = 0;
  for (const auto& conv : big)
    for (const auto& rel : conv.relations) {
      ++total;
      if (relation_sentence_distance(conv, rel) >= 3) ++cross;
    }
  REQUIRE(total >= 500);
  double frac2 = static_cast<double>(cross) / total;
  CHECK(std::fabs(frac2 - 0.11) <= 0.05);
}

TEST_CASE("generated corpora satisfy annotation and ontology closure") {
  for (Task task : {Task::Sx, Task::Rx}) {
    SynthConfig cfg;
    cfg.task = task;
    cfg.n_conversations = 30;
    cfg.seed = 13;
    auto out = generate_corpus(cfg);
    for (const auto& conv : out.conversations) {
      CHECK_NOTHROW(validate(conv, &out.ontology, kPosCount));
      for (const auto& s : conv.spans) {
        if (task == Task::Rx && s.kind == SpanKind::Entity)
          CHECK(s.attributes.empty());
        if (s.kind == SpanKind::Property)
          CHECK(s.attributes.count(kAttrPropType) == 1);
        if (task == Task::Sx && s.kind == SpanKind::Entity) {
          CHECK(s.attributes.count(kAttrSymType) == 1);
          CHECK(s.attributes.count(kAttrSymStatus) == 1);
        }
      }
      for (const auto& u : conv.utterances)
        for (const auto& t : u.tokens) {
          CHECK(!t.text.empty());
          CHECK(t.pos_tag >= 0);
          CHECK(t.pos_tag < kPosCount);
        }
    }
  }
}

TEST_CASE("generated dialogues follow the DR question / PT answer pattern") {
  SynthConfig cfg;
  cfg.task = Task::Rx;
  cfg.n_conversations = 10;
  cfg.seed = 3;
  auto corpus = generate_synthetic(cfg);
  bool saw_med = false;
  for (const auto& conv : corpus) {
    auto [tokens, boundaries] = flatten(conv);
    CHECK(conv.utterances.front().speaker == Speaker::DR);
    for (const auto& s : conv.spans)
      if (s.kind == SpanKind::Entity) {
        int u = utterance_of(boundaries, s.start);
        CHECK(conv.utterances[u].speaker == Speaker::PT);
        if (tokens[s.start].text == "ibuprofen") saw_med = true;
      }
  }
  CHECK(saw_med);
}

TEST_CASE("split_corpus is deterministic, disjoint and exhaustive") {
  SynthConfig cfg;
  cfg.n_conversations = 10;
  cfg.seed = 31;
  auto corpus = generate_synthetic(cfg);
  auto [train, dev, test] = split_corpus(corpus, {0.8, 0.1, 0.1}, 4);
  CHECK(train.size() == 8);
  CHECK(dev.size() == 1);
  CHECK(test.size() == 1);

  std::set<std::string> ids;
  for (const auto& c : train) ids.insert(c.id);
  for (const auto& c : dev) ids.insert(c.id);
  for (const auto& c : test) ids.insert(c.id);
  CHECK(ids.size() == 10);

  auto [train2, dev2, test2] = split_corpus(corpus, {0.8, 0.1, 0.1}, 4);
  CHECK(corpus_bytes(train) == corpus_bytes(train2));

  auto all = split_corpus(corpus, {1.0, 0.0, 0.0}, 9);
  CHECK(all[0].size() == 10);
  CHECK(all[1].empty());
  CHECK(all[2].empty());

  CHECK_THROWS_AS(split_corpus(corpus, {0.5, 0.2, 0.2}, 1), ConfigError);
}

TEST_CASE("synthetic kg maps the configured fraction and round-trips") {
  std::vector<std::string> words;
  for (int i = 0; i < 400; ++i) words.push_back("w" + std::to_string(i));
  KnowledgeGraph kg = make_synthetic_kg(words, 0.5, 8, 5, 99);
  double frac = static_cast<double>(kg.word_to_node.size()) / words.size();
  CHECK(frac > 0.4);
  CHECK(frac < 0.6);
  CHECK(kg.dim == 8);
  for (int n = 0; n < kg.n_nodes(); ++n) {
    auto mh = kg.type_multihot(n);
    CHECK(mh.size() == 5);
    double sum = 0;
    for (double x : mh) {
      CHECK((x == 0.0 || x == 1.0));
      sum += x;
    }
    CHECK(sum >= 1.0);
  }

  std::string path = temp_path("kg.json");
  save_kg(kg, path);
  KnowledgeGraph loaded = load_kg(path);
  CHECK(loaded.word_to_node == kg.word_to_node);
  CHECK(loaded.node_emb == kg.node_emb);
  CHECK(loaded.node_types == kg.node_types);
  std::remove(path.c_str());
}

TEST_CASE("invalid generator configs are rejected") {
  SynthConfig cfg;
  cfg.cross_turn_prob = 1.4;
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
  cfg = SynthConfig{};
  cfg.n_conversations = 0;
  CHECK_THROWS_AS(generate_synthetic(cfg), ConfigError);
}
