#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "rsat/crf.hpp"
#include "rsat/optim.hpp"
#include "rsat/synth.hpp"

using namespace rsat;

namespace {

struct Fixture {
  ParamStore store;
  TagSet tags = TagSet::generic(Task::Sx);
  CrfParams crf;

  Fixture(int h_dim, bool bio_mask, std::uint64_t seed) {
    Rng rng(seed);
    crf = make_crf(store, tags, h_dim, bio_mask, rng);
  }

  void zero_all() {
    crf.transitions->value.fill(0.0);
    crf.tag_emb->value.fill(0.0);
  }
};

std::vector<Tensor> random_features(int n, int d, Rng& rng) {
  std::vector<Tensor> h;
  for (int i = 0; i < n; ++i) {
    Tensor t = Tensor::zeros({d});
    for (int j = 0; j < d; ++j) t.at(j) = rng.uniform(-1.5, 1.5);
    h.push_back(std::move(t));
  }
  return h;
}

// Enumeration oracle over all K^N sequences (masked ones fall out through
// their -1e30 scores).
struct Enumerated {
  double log_z;
  std::vector<int> argmax;
  double max_score;
  std::vector<std::vector<double>> marginals;  // [n][k]
};

Enumerated enumerate_all(const std::vector<Tensor>& h, const CrfParams& crf) {
  int n = static_cast<int>(h.size());
  int k = crf.n_tags;
  long total = 1;
  for (int i = 0; i < n; ++i) total *= k;
  Enumerated out;
  out.marginals.assign(n, std::vector<double>(k, 0.0));
  std::vector<double> scores;
  std::vector<std::vector<int>> seqs;
  double best = -1e300;
  for (long code = 0; code < total; ++code) {
    std::vector<int> y(n);
    long c = code;
    for (int i = 0; i < n; ++i) {
      y[i] = static_cast<int>(c % k);
      c /= k;
    }
    double s = crf_score(y, h, crf);
    scores.push_back(s);
    seqs.push_back(y);
    if (s > best) {
      best = s;
      out.argmax = y;
    }
  }
  double mx = best;
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  out.log_z = mx + std::log(z);
  out.max_score = best;
  for (std::size_t q = 0; q < seqs.size(); ++q) {
    double p = std::exp(scores[q] - out.log_z);
    for (int i = 0; i < n; ++i) out.marginals[i][seqs[q][i]] += p;
  }
  return out;
}

}  // namespace

TEST_CASE("crf_score analytic cases") {
  Fixture f(3, false, 1);
  f.zero_all();
  std::vector<Tensor> h = {Tensor::vec({1, 2, 3}), Tensor::vec({0, 1, 0})};
  CHECK(crf_score({0, 1}, h, f.crf) == 0.0);

  // N=1: A[START,y] + h.t_y + A[y,STOP]
  Rng rng(2);
  Fixture f2(3, false, 2);
  for (int i = 0; i < f2.crf.transitions->value.size(); ++i)
    f2.crf.transitions->value.at(i) = rng.uniform(-1, 1);
  for (int i = 0; i < f2.crf.tag_emb->value.size(); ++i)
    f2.crf.tag_emb->value.at(i) = rng.uniform(-1, 1);
  Tensor h1 = Tensor::vec({0.3, -0.7, 1.1});
  int y = 2;
  double emit = 0.0;
  for (int d = 0; d < 3; ++d) emit += f2.crf.tag_emb->value.at(y, d) * h1.at(d);
  double expect = f2.crf.transitions->value.at(f2.crf.start_state(), y) + emit +
                  f2.crf.transitions->value.at(y, f2.crf.stop_state());
  CHECK(crf_score({y}, {h1}, f2.crf) == doctest::Approx(expect).epsilon(1e-12));

  CHECK_THROWS(crf_score({0, 1, 0}, {h1}, f2.crf));
}

TEST_CASE("crf_score equals a term-by-term hand sum on a random instance") {
  Fixture f(4, false, 3);
  Rng rng(33);
  for (int i = 0; i < f.crf.transitions->value.size(); ++i)
    f.crf.transitions->value.at(i) = rng.uniform(-1, 1);
  for (int i = 0; i < f.crf.tag_emb->value.size(); ++i)
    f.crf.tag_emb->value.at(i) = rng.uniform(-1, 1);
  auto h = random_features(4, 4, rng);
  std::vector<int> yy = {1, 2, 0, 3};
  const Tensor& A = f.crf.transitions->value;
  double hand = A.at(f.crf.start_state(), 1) + A.at(1, 2) + A.at(2, 0) +
                A.at(0, 3) + A.at(3, f.crf.stop_state());
  for (int i = 0; i < 4; ++i)
    for (int d = 0; d < 4; ++d)
      hand += f.crf.tag_emb->value.at(yy[i], d) * h[i].at(d);
  CHECK(crf_score(yy, h, f.crf) == doctest::Approx(hand).epsilon(1e-12));
}

TEST_CASE("log-likelihood under all-zero scores is N ln K") {
  Fixture f(3, false, 4);
  f.zero_all();
  for (int n : {1, 2, 5}) {
    std::vector<Tensor> h(n, Tensor::zeros({3}));
    std::vector<int> y(n, 1);
    double loss = crf_log_likelihood(y, h, f.crf);
    CHECK(loss == doctest::Approx(n * std::log(5.0)).epsilon(1e-12));
  }
}

TEST_CASE("probability one when only the reference path is unmasked") {
  Fixture f(3, false, 5);
  f.zero_all();
  std::vector<int> y = {1, 2, 0};
  // mask every transition, then free the reference path
  f.crf.mask.fill(kMaskedScore);
  f.crf.mask.at(f.crf.start_state(), y[0]) = 0.0;
  f.crf.mask.at(y[0], y[1]) = 0.0;
  f.crf.mask.at(y[1], y[2]) = 0.0;
  f.crf.mask.at(y[2], f.crf.stop_state()) = 0.0;
  std::vector<Tensor> h(3, Tensor::zeros({3}));
  double loss = crf_log_likelihood(y, h, f.crf);
  CHECK(std::fabs(loss) < 1e-9);
  CHECK(std::exp(-loss) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("forward recursion and Viterbi match exhaustive enumeration") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    bool masked = seed % 2 == 0;
    Fixture f(3, masked, seed);
    for (int i = 0; i < f.crf.transitions->value.size(); ++i)
      f.crf.transitions->value.at(i) = rng.uniform(-2, 2);
    for (int i = 0; i < f.crf.tag_emb->value.size(); ++i)
      f.crf.tag_emb->value.at(i) = rng.uniform(-2, 2);
    int n = 1 + rng.uniform_int(6);
    auto h = random_features(n, 3, rng);
    Enumerated oracle = enumerate_all(h, f.crf);

    std::vector<int> y(n, 0);
    double loss = crf_log_likelihood(y, h, f.crf);
    double expected = oracle.log_z - crf_score(y, h, f.crf);
    CHECK(std::fabs(loss - expected) < 1e-8);

    CHECK(viterbi_decode(h, f.crf) == oracle.argmax);

    // decoded sequence satisfies the BIO mask
    auto decoded = viterbi_decode(h, f.crf);
    if (masked) {
      CHECK(f.tags.valid_start(decoded.front()));
      for (std::size_t i = 0; i + 1 < decoded.size(); ++i)
        CHECK(f.tags.valid_transition(decoded[i], decoded[i + 1]));
    }
  }
}

TEST_CASE("sequence probabilities sum to one") {
  Rng rng(71);
  Fixture f(3, true, 71);
  for (int i = 0; i < f.crf.transitions->value.size(); ++i)
    f.crf.transitions->value.at(i) = rng.uniform(-1, 1);
  for (int i = 0; i < f.crf.tag_emb->value.size(); ++i)
    f.crf.tag_emb->value.at(i) = rng.uniform(-1, 1);
  auto h = random_features(4, 3, rng);
  Enumerated oracle = enumerate_all(h, f.crf);
  // exp(-loss) in (0,1] for the reference and every enumerated sequence
  double sum = 0.0;
  int k = f.crf.n_tags;
  long total = 1;
  for (int i = 0; i < 4; ++i) total *= k;
  for (long code = 0; code < total; ++code) {
    std::vector<int> y(4);
    long c = code;
    for (int i = 0; i < 4; ++i) {
      y[i] = static_cast<int>(c % k);
      c /= k;
    }
    double p = std::exp(crf_score(y, h, f.crf) - oracle.log_z);
    sum += p;
    bool valid = f.tags.valid_start(y[0]);
    for (int i = 0; i + 1 < 4 && valid; ++i)
      valid = f.tags.valid_transition(y[i], y[i + 1]);
    if (valid) {
      double loss = crf_log_likelihood(y, h, f.crf);
      CHECK(std::exp(-loss) > 0.0);
      CHECK(std::exp(-loss) <= 1.0 + 1e-12);
    }
  }
  CHECK(std::fabs(sum - 1.0) < 1e-8);
}

TEST_CASE("emission gradient equals marginals minus one-hot") {
  Rng rng(55);
  // identity tag embedding makes the encoder features the emissions
  ParamStore store;
  TagSet tags = TagSet::generic(Task::Sx);
  CrfParams crf = make_crf(store, tags, 5, true, rng);
  crf.tag_emb->value.fill(0.0);
  for (int i = 0; i < 5; ++i) crf.tag_emb->value.at(i, i) = 1.0;
  for (int i = 0; i < crf.transitions->value.size(); ++i)
    crf.transitions->value.at(i) = rng.uniform(-1, 1);

  int n = 4;
  auto h = random_features(n, 5, rng);
  std::vector<int> y = {0, 1, 2, 0};

  Graph g;
  std::vector<Var> hv;
  for (const auto& t : h) hv.push_back(g.constant(t));
  Var loss = crf_log_likelihood_g(g, hv, y, crf);
  g.backward(loss);

  Enumerated oracle = enumerate_all(h, crf);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 5; ++k) {
      double expect = oracle.marginals[i][k] - (y[i] == k ? 1.0 : 0.0);
      CHECK(g.grad(hv[i]).at(k) == doctest::Approx(expect).epsilon(1e-8));
    }

  // and the same path passes a finite-difference check on the parameters
  auto loss_fn = [&]() {
    Graph gg;
    std::vector<Var> hh;
    for (const auto& t : h) hh.push_back(gg.constant(t));
    Var l = crf_log_likelihood_g(gg, hh, y, crf);
    gg.backward(l);
    return gg.value(l).at(0);
  };
  CHECK(grad_check(loss_fn, store, 1e-6, 24, 19) < 1e-6);
}

TEST_CASE("viterbi tie-breaking prefers the all-O sequence on zero scores") {
  Fixture f(3, true, 6);
  f.zero_all();
  std::vector<Tensor> h(5, Tensor::zeros({3}));
  CHECK(viterbi_decode(h, f.crf) == std::vector<int>{0, 0, 0, 0, 0});
}

TEST_CASE("emissions strongly favoring a valid sequence recover it") {
  Fixture f(5, true, 7);
  f.zero_all();
  for (int i = 0; i < 5; ++i) f.crf.tag_emb->value.at(i, i) = 1.0;
  std::vector<int> want = {1, 2, 0, 3, 4};
  std::vector<Tensor> h;
  for (int tag : want) {
    Tensor t = Tensor::zeros({5});
    t.at(tag) = 50.0;
    h.push_back(std::move(t));
  }
  CHECK(viterbi_decode(h, f.crf) == want);
}

TEST_CASE("extract_spans follows the BIO definition") {
  TagSet ts = TagSet::generic(Task::Sx);
  // O sym_B sym_I O symprop_B
  auto spans = extract_spans({0, 1, 2, 0, 3}, ts);
  REQUIRE(spans.size() == 2);
  CHECK(spans[0] == Span{1, 3, SpanKind::Entity});
  CHECK(spans[1] == Span{4, 5, SpanKind::Property});

  // stray I opens a span
  spans = extract_spans({2, 2}, ts);
  REQUIRE(spans.size() == 1);
  CHECK(spans[0] == Span{0, 2, SpanKind::Entity});

  // I after a different kind starts fresh
  spans = extract_spans({3, 2, 2}, ts);
  REQUIRE(spans.size() == 2);
  CHECK(spans[0] == Span{0, 1, SpanKind::Property});
  CHECK(spans[1] == Span{1, 3, SpanKind::Entity});
}

TEST_CASE("the Figure-1 style sentence round-trips through tags") {
  // "i feel some pain in my back" with entity "some pain", property "my back"
  TagSet ts = TagSet::generic(Task::Sx);
  std::vector<SpanAnnotation> gold = {
      {SpanKind::Entity, 2, 4, {}},
      {SpanKind::Property, 5, 7, {}},
  };
  auto tags = tags_of_spans(gold, 7, ts);
  CHECK(tags == std::vector<int>{0, 0, 1, 2, 0, 3, 4});
  auto spans = extract_spans(tags, ts);
  REQUIRE(spans.size() == 2);
  CHECK(spans[0] == Span{2, 4, SpanKind::Entity});
  CHECK(spans[1] == Span{5, 7, SpanKind::Property});
}

TEST_CASE("gold tags of generated corpora recover the gold spans exactly") {
  for (Task task : {Task::Sx, Task::Rx}) {
    SynthConfig cfg;
    cfg.task = task;
    cfg.n_conversations = 25;
    cfg.seed = 17;
    TagSet ts = TagSet::generic(task);
    for (const auto& conv : generate_synthetic(cfg)) {
      auto tags = tags_of_spans(conv.spans, conv.token_count(), ts);
      auto spans = extract_spans(tags, ts);
      REQUIRE(spans.size() == conv.spans.size());
      std::vector<Span> gold;
      for (const auto& s : conv.spans) gold.push_back({s.start, s.end, s.kind});
      std::sort(gold.begin(), gold.end(), [](const Span& a, const Span& b) {
        return a.start < b.start;
      });
      CHECK(spans == gold);
    }
  }
}

TEST_CASE("cross-kind overlaps cannot be BIO-encoded") {
  TagSet ts = TagSet::generic(Task::Sx);
  std::vector<SpanAnnotation> bad = {
      {SpanKind::Entity, 0, 2, {}},
      {SpanKind::Property, 1, 3, {}},
  };
  CHECK_THROWS_AS(tags_of_spans(bad, 4, ts), DataError);
}
