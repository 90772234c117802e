#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "rsat/baseline.hpp"
#include "rsat/synth.hpp"
#include "rsat/training.hpp"

using namespace rsat;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// One entity, one property, one relation; small dims everywhere.
AnnotatedConversation toy_conversation() {
  AnnotatedConversation conv;
  conv.id = "toy";
  conv.task = Task::Sx;
  Utterance q;
  q.speaker = Speaker::DR;
  for (const char* w : {"do", "you", "have", "pain", "?"})
    q.tokens.push_back({w, 0, -1});
  Utterance a;
  a.speaker = Speaker::PT;
  for (const char* w : {"yes", "my", "pain", "is", "really", "bad", "."})
    a.tokens.push_back({w, 0, -1});
  conv.utterances = {q, a};
  conv.spans.push_back(
      {SpanKind::Entity, 3, 4, {{kAttrSymType, 0}, {kAttrSymStatus, 0}}});
  conv.spans.push_back(
      {SpanKind::Entity, 7, 8, {{kAttrSymType, 0}, {kAttrSymStatus, 0}}});
  conv.spans.push_back({SpanKind::Property, 9, 11, {{kAttrPropType, 0}}});
  conv.relations.push_back({2, 1});
  return conv;
}

std::unique_ptr<Model> toy_model(TrainConfig tcfg,
                                 const AnnotatedConversation& conv) {
  EncoderConfig ecfg;
  ecfg.word_dim = 3;
  ecfg.lstm_cell = 3;
  ecfg.ff_widths = {4, 3};
  ecfg.use_kg = false;
  ecfg.use_pos = false;
  tcfg.use_kg = false;
  Vocabulary vocab = Vocabulary::build({conv});
  return build_model(Task::Sx, TaskOntology::sx(4, 3, 3), ecfg, tcfg, vocab,
                     std::nullopt);
}

}  // namespace

TEST_CASE("curriculum schedule decays linearly then holds") {
  TrainConfig cfg;
  cfg.epochs = 20;
  cfg.decay_epochs = 10;
  cfg.p_start = 1.0;
  cfg.p_end = 0.0;
  CHECK(curriculum_p(0, cfg) == doctest::Approx(1.0));
  CHECK(curriculum_p(5, cfg) == doctest::Approx(0.5));
  CHECK(curriculum_p(10, cfg) == doctest::Approx(0.0));
  CHECK(curriculum_p(19, cfg) == doctest::Approx(0.0));
}

TEST_CASE("curriculum sampling follows the Bernoulli draw") {
  std::vector<Span> gold = {{0, 1, SpanKind::Entity}};
  std::vector<Span> pred = {{2, 3, SpanKind::Entity}};
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    CHECK(&curriculum_sample(1.0, gold, pred, rng) == &gold);
    CHECK(&curriculum_sample(0.0, gold, pred, rng) == &pred);
  }
  int gold_count = 0;
  Rng rng2(4);
  for (int i = 0; i < 10000; ++i)
    if (&curriculum_sample(0.5, gold, pred, rng2) == &gold) ++gold_count;
  double frac = gold_count / 10000.0;
  CHECK(frac >= 0.47);
  CHECK(frac <= 0.53);
}

TEST_CASE("a rigged model reaches joint loss exactly zero") {
  AnnotatedConversation conv = toy_conversation();
  // drop the second mention so the buffer holds a single entry
  conv.spans.erase(conv.spans.begin() + 1);
  conv.relations[0] = {1, 0};
  TrainConfig tcfg;
  tcfg.l2 = 0.0;
  tcfg.dropout = 0.0;
  tcfg.vn_std = 0.0;
  auto m = toy_model(tcfg, conv);

  // CRF: free the gold path only, zero scores elsewhere
  std::vector<int> gold =
      tags_of_spans(conv.spans, conv.token_count(), m->tagset);
  m->crf.transitions->value.fill(0.0);
  m->crf.tag_emb->value.fill(0.0);
  m->crf.mask.fill(kMaskedScore);
  m->crf.mask.at(m->crf.start_state(), gold.front()) = 0.0;
  for (std::size_t i = 0; i + 1 < gold.size(); ++i)
    m->crf.mask.at(gold[i], gold[i + 1]) = 0.0;
  m->crf.mask.at(gold.back(), m->crf.stop_state()) = 0.0;

  // heads: decisive biases, zero projections
  auto rig = [](AttributeHead& h, int gold_class) {
    h.w->value.fill(0.0);
    h.b->value.fill(-200.0);
    h.b->value.at(gold_class) = 200.0;
  };
  rig(m->sym_type, 0);
  rig(m->sym_status, 0);
  rig(m->prop_type, 0);

  Rng rng(1);
  double loss = joint_loss(*m, conv, 1.0, rng);
  CHECK(loss == 0.0);
}

TEST_CASE("joint loss equals the hand-assembled component sum") {
  AnnotatedConversation conv = toy_conversation();
  TrainConfig tcfg;
  tcfg.l2 = 0.0;
  tcfg.dropout = 0.0;
  tcfg.vn_std = 0.0;
  tcfg.alpha = 0.01;
  auto m = toy_model(tcfg, conv);

  Rng rng(1);
  double loss = joint_loss(*m, conv, 1.0, rng);

  // components, assembled by hand from the module-level functions
  auto [tokens, boundaries] = flatten(conv);
  Graph g;
  std::vector<Var> h = m->encoder->encode(g, tokens);
  std::vector<Tensor> hv;
  for (Var v : h) hv.push_back(g.value(v));
  std::vector<int> gold = tags_of_spans(conv.spans, conv.token_count(), m->tagset);
  double crf_term = crf_log_likelihood(gold, hv, m->crf);

  double attr_term = 0.0;
  auto ce = [&](const AttributeHead& head, const Span& s, int cls) {
    Tensor repr = g.value(aggregate(g, h, s.start, s.end));
    auto probs = classify(head, repr);
    return -std::log(probs[cls]);
  };
  attr_term += ce(m->sym_type, {3, 4, SpanKind::Entity}, 0);
  attr_term += ce(m->sym_status, {3, 4, SpanKind::Entity}, 0);
  attr_term += ce(m->sym_type, {7, 8, SpanKind::Entity}, 0);
  attr_term += ce(m->sym_status, {7, 8, SpanKind::Entity}, 0);
  attr_term += ce(m->prop_type, {9, 11, SpanKind::Property}, 0);

  Var table = g.frozen(*m->params.find("enc.word_emb"));
  std::vector<Span> espans = {{3, 4, SpanKind::Entity}, {7, 8, SpanKind::Entity}};
  auto buffer = build_buffer(g, *m, h, table, tokens, espans, {0, 0});
  Var yp = property_repr_for_span(g, *m, h, table, tokens,
                                  {9, 11, SpanKind::Property});
  const Tensor& dist = g.value(g.softmax(relation_scores(g, m->rel, yp, buffer)));
  double rel_term = -std::log(dist.at(1));  // nearest mention is the second

  CHECK(loss == doctest::Approx(tcfg.alpha * crf_term + attr_term + rel_term)
                    .epsilon(1e-9));
}

TEST_CASE("the CRF weight scales only the span-extraction component") {
  AnnotatedConversation conv = toy_conversation();
  TrainConfig tcfg;
  tcfg.l2 = 0.0;
  tcfg.dropout = 0.0;
  tcfg.vn_std = 0.0;
  tcfg.alpha = 0.01;
  auto m1 = toy_model(tcfg, conv);
  tcfg.alpha = 0.02;
  auto m2 = toy_model(tcfg, conv);

  Rng r1(1), r2(1);
  double l1 = joint_loss(*m1, conv, 1.0, r1);
  double l2 = joint_loss(*m2, conv, 1.0, r2);

  auto [tokens, boundaries] = flatten(conv);
  Graph g;
  std::vector<Var> h = m1->encoder->encode(g, tokens);
  std::vector<Tensor> hv;
  for (Var v : h) hv.push_back(g.value(v));
  std::vector<int> gold = tags_of_spans(conv.spans, conv.token_count(), m1->tagset);
  double crf_term = crf_log_likelihood(gold, hv, m1->crf);
  CHECK(l2 - l1 == doctest::Approx(0.01 * crf_term).epsilon(1e-9));
}

TEST_CASE("full joint loss passes the finite-difference check") {
  AnnotatedConversation conv = toy_conversation();
  TrainConfig tcfg;
  tcfg.dropout = 0.0;
  tcfg.vn_std = 0.0;
  tcfg.l2 = 1e-4;
  auto m = toy_model(tcfg, conv);
  auto loss_fn = [&]() {
    Graph g(true);
    ForwardOpts opts{0.0, nullptr};
    Var loss = joint_loss_g(g, *m, conv, true, opts);
    g.backward(loss);
    return g.value(loss).at(0);
  };
  CHECK(grad_check(loss_fn, m->params, 1e-5, 6, 7) < 1e-4);
}

TEST_CASE("with gold spans throughout, attribute and relation losses ignore CRF quality") {
  AnnotatedConversation conv = toy_conversation();
  TrainConfig tcfg;
  tcfg.l2 = 0.0;
  tcfg.dropout = 0.0;
  tcfg.vn_std = 0.0;
  auto m = toy_model(tcfg, conv);

  Rng r1(5);
  double before = joint_loss(*m, conv, 1.0, r1);
  auto [tokens, boundaries] = flatten(conv);
  Graph g0;
  std::vector<Var> h0 = m->encoder->encode(g0, tokens);
  std::vector<Tensor> hv;
  for (Var v : h0) hv.push_back(g0.value(v));
  std::vector<int> gold = tags_of_spans(conv.spans, conv.token_count(), m->tagset);
  double crf_before = crf_log_likelihood(gold, hv, m->crf);

  // corrupt the CRF transitions badly
  Rng noise(9);
  for (int i = 0; i < m->crf.transitions->value.size(); ++i)
    m->crf.transitions->value.at(i) = noise.uniform(-5, 5);

  Rng r2(5);
  double after = joint_loss(*m, conv, 1.0, r2);
  double crf_after = crf_log_likelihood(gold, hv, m->crf);

  // only the alpha-weighted CRF term moved
  CHECK(after - before ==
        doctest::Approx(m->train_cfg.alpha * (crf_after - crf_before))
            .epsilon(1e-9));
}

TEST_CASE("joint loss is finite at initialization across a generated corpus") {
  SynthConfig scfg;
  scfg.n_conversations = 12;
  scfg.seed = 43;
  auto out = generate_corpus(scfg);
  EncoderConfig ecfg;
  ecfg.word_dim = 4;
  ecfg.lstm_cell = 4;
  ecfg.ff_widths = {4};
  TrainConfig tcfg;
  Vocabulary vocab = Vocabulary::build(out.conversations);
  auto m = build_model(Task::Sx, out.ontology, ecfg, tcfg, vocab, out.kg);
  Rng rng(2);
  for (const auto& conv : out.conversations) {
    double loss = joint_loss(*m, conv, 1.0, rng);
    CHECK(std::isfinite(loss));
    double loss_pred = joint_loss(*m, conv, 0.0, rng);
    CHECK(std::isfinite(loss_pred));
  }
}

TEST_CASE("the buffer ablation is rejected for the medication task") {
  TrainConfig tcfg;
  tcfg.use_buffer = false;
  EncoderConfig ecfg;
  Vocabulary vocab = Vocabulary::from_words({"<unk>", "a"});
  CHECK_THROWS_AS(
      build_model(Task::Rx, TaskOntology::rx(), ecfg, tcfg, vocab, std::nullopt),
      ConfigError);
}

TEST_CASE("same-seed training runs produce identical checkpoints and logs") {
  SynthConfig scfg;
  scfg.n_conversations = 12;
  scfg.seed = 47;
  auto out = generate_corpus(scfg);
  auto [train, dev, rest] = split_corpus(out.conversations, {0.8, 0.2, 0.0}, 3);
  EncoderConfig ecfg;
  ecfg.word_dim = 4;
  ecfg.lstm_cell = 4;
  ecfg.ff_widths = {4};
  TrainConfig tcfg;
  tcfg.epochs = 2;
  tcfg.seed = 5;

  TrainResult a = train_model(train, dev, Task::Sx, out.ontology, ecfg, tcfg, out.kg);
  TrainResult b = train_model(train, dev, Task::Sx, out.ontology, ecfg, tcfg, out.kg);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].dev_f1 == b.log[i].dev_f1);
  }
  save_checkpoint(*a.model, "/tmp/rsat_det_a.ckpt");
  save_checkpoint(*b.model, "/tmp/rsat_det_b.ckpt");
  CHECK(slurp("/tmp/rsat_det_a.ckpt") == slurp("/tmp/rsat_det_b.ckpt"));

  // and a checkpoint round-trips losslessly
  auto loaded = load_checkpoint("/tmp/rsat_det_a.ckpt");
  save_checkpoint(*loaded, "/tmp/rsat_det_c.ckpt");
  CHECK(slurp("/tmp/rsat_det_a.ckpt") == slurp("/tmp/rsat_det_c.ckpt"));
  std::remove("/tmp/rsat_det_a.ckpt");
  std::remove("/tmp/rsat_det_b.ckpt");
  std::remove("/tmp/rsat_det_c.ckpt");
}

TEST_CASE("a 50-conversation overfit run reaches training tuple-F1 0.95") {
  SynthConfig scfg;
  scfg.n_conversations = 50;
  scfg.seed = 53;
  auto out = generate_corpus(scfg);
  EncoderConfig ecfg = EncoderConfig::desk();
  TrainConfig tcfg = TrainConfig::desk();
  tcfg.lr = 3e-3;
  tcfg.alpha = 0.1;
  tcfg.epochs = 30;
  tcfg.patience = 30;
  tcfg.seed = 1;
  TrainResult r = train_model(out.conversations, out.conversations, Task::Sx,
                              out.ontology, ecfg, tcfg, out.kg);
  TaskEval ev = evaluate_model(*r.model, out.conversations);
  CHECK(ev.property.f1 >= 0.95);
}
