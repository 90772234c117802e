// Input encoder: word embedding (optionally fused with KG node embeddings),
// bidirectional LSTM, and a two-layer feed-forward head. When POS/KG fusion
// is on, the feed-forward output is concatenated with the POS one-hot and the
// KG node-type multi-hot before downstream consumption.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "rsat/corpus.hpp"
#include "rsat/graph.hpp"
#include "rsat/kg.hpp"
#include "rsat/optim.hpp"
#include "rsat/synth.hpp"

namespace rsat {

struct EncoderConfig {
  int word_dim = 32;
  int lstm_cell = 64;
  int lstm_layers = 1;
  std::vector<int> ff_widths = {64, 48};
  double dropout = 0.1;
  bool use_kg = true;
  bool use_pos = true;
  int pos_count = kPosCount;
  int kg_dim = 16;
  int kg_types = 6;

  static EncoderConfig desk() { return EncoderConfig{}; }

  // Table-scale profile from the paper's hyperparameter listing.
  static EncoderConfig paper() {
    EncoderConfig c;
    c.word_dim = 256;
    c.lstm_cell = 1024;
    c.lstm_layers = 1;
    c.ff_widths = {512, 256};
    c.dropout = 0.4;
    c.pos_count = 47;
    c.kg_dim = 256;
    c.kg_types = 87;
    return c;
  }

  void check() const {
    if (word_dim <= 0 || lstm_cell <= 0 || lstm_layers <= 0)
      throw ConfigError("encoder dims must be positive");
    if (ff_widths.empty()) throw ConfigError("feed-forward widths empty");
    if (dropout < 0.0 || dropout >= 1.0)
      throw ConfigError("dropout must be in [0,1)");
  }
};

// Word index built from the training corpus; id 0 is the learned OOV slot.
struct Vocabulary {
  std::vector<std::string> words;  // words[0] == "<unk>"
  std::map<std::string, int> index;

  int size() const { return static_cast<int>(words.size()); }

  int id(const std::string& w) const {
    auto it = index.find(w);
    return it == index.end() ? 0 : it->second;
  }

  static Vocabulary build(const std::vector<AnnotatedConversation>& corpus) {
    Vocabulary v;
    v.words.push_back("<unk>");
    v.index["<unk>"] = 0;
    for (const auto& conv : corpus)
      for (const auto& u : conv.utterances)
        for (const auto& t : u.tokens)
          if (!v.index.count(t.text)) {
            v.index[t.text] = v.size();
            v.words.push_back(t.text);
          }
    return v;
  }

  static Vocabulary from_words(std::vector<std::string> ws) {
    Vocabulary v;
    v.words = std::move(ws);
    for (int i = 0; i < v.size(); ++i) v.index[v.words[i]] = i;
    return v;
  }
};

// Per-forward options; dropout comes from the config, variational noise from
// the training loop. Both are inert outside train-mode graphs.
struct ForwardOpts {
  double vn_std = 0.0;
  Rng* rng = nullptr;
};

namespace init {
inline void uniform_fan_in(Parameter& p, int fan_in, Rng& rng) {
  double a = std::sqrt(1.0 / fan_in);
  for (int i = 0; i < p.value.size(); ++i) p.value.at(i) = rng.uniform(-a, a);
}
inline void uniform(Parameter& p, double a, Rng& rng) {
  for (int i = 0; i < p.value.size(); ++i) p.value.at(i) = rng.uniform(-a, a);
}
}  // namespace init

class Encoder {
 public:
  Encoder(ParamStore& store, const EncoderConfig& cfg, const Vocabulary& vocab,
          const KnowledgeGraph* kg, Rng& rng)
      : cfg_(cfg), vocab_(&vocab), kg_(kg) {
    cfg_.check();
    if (cfg_.use_kg && kg_ == nullptr)
      throw ConfigError("encoder: use_kg requires a knowledge graph");
    if (cfg_.use_kg) cfg_.kg_dim = kg_->dim, cfg_.kg_types = kg_->n_types;

    word_emb_ = &store.add("enc.word_emb", {vocab.size(), cfg_.word_dim});
    init::uniform(*word_emb_, 0.1, rng);
    if (cfg_.use_kg) {
      kg_unk_ = &store.add("enc.kg_unk", {cfg_.kg_dim});
      init::uniform(*kg_unk_, 0.1, rng);
    }

    int input_dim = cfg_.word_dim + (cfg_.use_kg ? cfg_.kg_dim : 0);
    int h = cfg_.lstm_cell;
    for (int l = 0; l < cfg_.lstm_layers; ++l) {
      int in_dim = l == 0 ? input_dim : 2 * h;
      for (int d = 0; d < 2; ++d) {
        std::string base = "enc.l" + std::to_string(l) +
                           (d == 0 ? ".fw" : ".bw");
        Cell c;
        c.wx = &store.add(base + ".Wx", {4 * h, in_dim});
        c.wh = &store.add(base + ".Wh", {4 * h, h});
        c.b = &store.add(base + ".b", {4 * h});
        init::uniform_fan_in(*c.wx, in_dim, rng);
        init::uniform_fan_in(*c.wh, h, rng);
        for (int i = h; i < 2 * h; ++i) c.b->value.at(i) = 1.0;  // forget bias
        cells_.push_back(c);
      }
    }

    int prev = 2 * h;
    for (std::size_t i = 0; i < cfg_.ff_widths.size(); ++i) {
      Ff f;
      f.w = &store.add("enc.ff" + std::to_string(i) + ".W",
                       {cfg_.ff_widths[i], prev});
      f.b = &store.add("enc.ff" + std::to_string(i) + ".b", {cfg_.ff_widths[i]});
      init::uniform_fan_in(*f.w, prev, rng);
      prev = cfg_.ff_widths[i];
      ff_.push_back(f);
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return *vocab_; }
  const KnowledgeGraph* kg() const { return kg_; }

  int output_dim() const {
    int d = cfg_.ff_widths.back();
    if (cfg_.use_pos) d += cfg_.pos_count;
    if (cfg_.use_kg) d += cfg_.kg_types;
    return d;
  }

  // Per-token input vectors: word embedding, concatenated with the token's
  // KG node embedding (or the learnable UNK vector) when fusion is on.
  std::vector<Var> embed(Graph& g, const std::vector<Token>& tokens,
                         const ForwardOpts& opts = {}) const {
    Var table = g.param(*word_emb_);
    Var unk;
    if (cfg_.use_kg) unk = maybe_noise(g, g.param(*kg_unk_), opts);
    std::vector<Var> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) {
      Var e = maybe_noise(g, g.row(table, vocab_->id(t.text)), opts);
      if (cfg_.use_kg) {
        int node = t.kg_node >= 0 ? t.kg_node : kg_->node_of(t.text);
        if (node >= 0 && node < kg_->n_nodes()) {
          e = g.concat({e, g.constant(Tensor::vec(kg_->node_emb[node]))});
        } else {
          e = g.concat({e, unk});
        }
      }
      out.push_back(e);
    }
    return out;
  }

  struct BiLstmOut {
    std::vector<Var> h;   // concat of both directions, per token
    std::vector<Var> fw;  // last-layer forward states
    std::vector<Var> bw;  // last-layer backward states
  };

  BiLstmOut bilstm(Graph& g, const std::vector<Var>& inputs,
                   const ForwardOpts& opts = {}) const {
    if (inputs.empty()) throw std::invalid_argument("bilstm: empty sequence");
    int n = static_cast<int>(inputs.size());
    std::vector<Var> layer_in = inputs;
    BiLstmOut out;
    for (int l = 0; l < cfg_.lstm_layers; ++l) {
      std::vector<Var> fw = run_dir(g, cells_[2 * l], layer_in, false, opts);
      std::vector<Var> bw = run_dir(g, cells_[2 * l + 1], layer_in, true, opts);
      std::vector<Var> h(n);
      for (int t = 0; t < n; ++t) h[t] = g.concat({fw[t], bw[t]});
      layer_in = h;
      if (l == cfg_.lstm_layers - 1) {
        out.fw = std::move(fw);
        out.bw = std::move(bw);
      }
    }
    out.h = std::move(layer_in);
    return out;
  }

  // Full pipeline: embed -> BiLSTM -> MLP -> POS/KG-type fusion.
  std::vector<Var> encode(Graph& g, const std::vector<Token>& tokens,
                          const ForwardOpts& opts = {}) const {
    std::vector<Var> x = embed(g, tokens, opts);
    if (g.train_mode() && opts.rng)
      for (auto& v : x) v = g.dropout(v, cfg_.dropout, *opts.rng);
    BiLstmOut states = bilstm(g, x, opts);
    std::vector<Var> ws, bs;
    for (const auto& f : ff_) {
      ws.push_back(maybe_noise(g, g.param(*f.w), opts));
      bs.push_back(g.param(*f.b));
    }
    std::vector<Var> out;
    out.reserve(tokens.size());
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      Var h = states.h[t];
      for (std::size_t i = 0; i < ff_.size(); ++i) {
        h = g.tanh_op(g.add(g.matvec(ws[i], h), bs[i]));
        if (g.train_mode() && opts.rng)
          h = g.dropout(h, cfg_.dropout, *opts.rng);
      }
      if (cfg_.use_pos || cfg_.use_kg) {
        std::vector<Var> parts{h};
        if (cfg_.use_pos) {
          Tensor onehot = Tensor::zeros({cfg_.pos_count});
          int p = tokens[t].pos_tag;
          if (p >= 0 && p < cfg_.pos_count) onehot.at(p) = 1.0;
          parts.push_back(g.constant(std::move(onehot)));
        }
        if (cfg_.use_kg) {
          int node = tokens[t].kg_node >= 0 ? tokens[t].kg_node
                                            : kg_->node_of(tokens[t].text);
          std::vector<double> mh = node >= 0 && node < kg_->n_nodes()
                                       ? kg_->type_multihot(node)
                                       : std::vector<double>(cfg_.kg_types, 0.0);
          parts.push_back(g.constant(Tensor::vec(std::move(mh))));
        }
        h = g.concat(parts);
      }
      out.push_back(h);
    }
    return out;
  }

 private:
  struct Cell {
    Parameter *wx, *wh, *b;
  };
  struct Ff {
    Parameter *w, *b;
  };

  Var maybe_noise(Graph& g, Var v, const ForwardOpts& opts) const {
    if (g.train_mode() && opts.vn_std > 0.0 && opts.rng)
      return g.gaussian_noise(v, opts.vn_std, *opts.rng);
    return v;
  }

  std::vector<Var> run_dir(Graph& g, const Cell& cell,
                           const std::vector<Var>& inputs, bool reverse,
                           const ForwardOpts& opts) const {
    int n = static_cast<int>(inputs.size());
    int hdim = cfg_.lstm_cell;
    Var wx = maybe_noise(g, g.param(*cell.wx), opts);
    Var wh = maybe_noise(g, g.param(*cell.wh), opts);
    Var b = g.param(*cell.b);
    Var h = g.constant(Tensor::zeros({hdim}));
    Var c = g.constant(Tensor::zeros({hdim}));
    std::vector<Var> states(n);
    for (int step = 0; step < n; ++step) {
      int t = reverse ? n - 1 - step : step;
      Var z = g.add(g.add(g.matvec(wx, inputs[t]), g.matvec(wh, h)), b);
      Var i = g.sigmoid_op(g.slice(z, 0, hdim));
      Var f = g.sigmoid_op(g.slice(z, hdim, hdim));
      Var u = g.tanh_op(g.slice(z, 2 * hdim, hdim));
      Var o = g.sigmoid_op(g.slice(z, 3 * hdim, hdim));
      c = g.add(g.mul(f, c), g.mul(i, u));
      h = g.mul(o, g.tanh_op(c));
      states[t] = h;
    }
    return states;
  }

  EncoderConfig cfg_;
  const Vocabulary* vocab_;
  const KnowledgeGraph* kg_;
  Parameter* word_emb_ = nullptr;
  Parameter* kg_unk_ = nullptr;
  std::vector<Cell> cells_;
  std::vector<Ff> ff_;
};

// ---------------------------------------------------------------------------
// Simplified next-turn pretraining: predict the bag of words of the next
// utterance from the mean-pooled encoding of the current one.

struct Pretrained {
  Vocabulary vocab;
  std::map<std::string, Tensor> values;
};

struct PretrainConfig {
  int epochs = 5;
  double lr = 1e-2;
  double vn_std = 0.0;
  std::uint64_t seed = 1;
};

inline Pretrained pretrain_next_turn(
    const std::vector<AnnotatedConversation>& corpus, EncoderConfig enc_cfg,
    const KnowledgeGraph* kg, const PretrainConfig& cfg) {
  Vocabulary vocab = Vocabulary::build(corpus);
  ParamStore store;
  Rng init_rng(cfg.seed);
  Encoder enc(store, enc_cfg, vocab, kg, init_rng);
  Parameter& head_w =
      store.add("pre.out.W", {vocab.size(), enc.output_dim()});
  Parameter& head_b = store.add("pre.out.b", {vocab.size()});
  init::uniform_fan_in(head_w, enc.output_dim(), init_rng);

  AdamConfig acfg;
  acfg.lr = cfg.lr;
  Adam opt(store, acfg);
  Rng train_rng(cfg.seed ^ 0xF00DULL);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(corpus.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    train_rng.shuffle(order);
    for (int ci : order) {
      const auto& conv = corpus[ci];
      for (std::size_t u = 0; u + 1 < conv.utterances.size(); ++u) {
        Graph g(true);
        Rng noise = train_rng.split(u + 1);
        ForwardOpts opts{cfg.vn_std, &noise};
        std::vector<Var> h = enc.encode(g, conv.utterances[u].tokens, opts);
        Var pooled = g.mean_vars(h);
        Var logits =
            g.add(g.matvec(g.param(head_w), pooled), g.param(head_b));
        std::vector<double> target(vocab.size(), 0.0);
        for (const auto& t : conv.utterances[u + 1].tokens)
          target[vocab.id(t.text)] = 1.0;
        Var loss = g.bce_logits(logits, target);
        g.backward(loss);
        opt.step(store);
      }
    }
  }

  Pretrained out;
  out.vocab = vocab;
  for (auto& p : store)
    if (p->name.rfind("enc.", 0) == 0) out.values[p->name] = p->value;
  return out;
}

// Average next-turn BCE over a corpus with the given encoder parameters;
// exposed for the degenerate-corpus convergence check.
inline double pretrain_loss(const std::vector<AnnotatedConversation>& corpus,
                            const Encoder& enc, ParamStore& store) {
  Parameter* head_w = store.find("pre.out.W");
  Parameter* head_b = store.find("pre.out.b");
  double total = 0.0;
  int count = 0;
  for (const auto& conv : corpus)
    for (std::size_t u = 0; u + 1 < conv.utterances.size(); ++u) {
      Graph g(false);
      std::vector<Var> h = enc.encode(g, conv.utterances[u].tokens);
      Var pooled = g.mean_vars(h);
      Var logits = g.add(g.matvec(g.param(*head_w), pooled), g.param(*head_b));
      std::vector<double> target(enc.vocab().size(), 0.0);
      for (const auto& t : conv.utterances[u + 1].tokens)
        target[enc.vocab().id(t.text)] = 1.0;
      total += g.value(g.bce_logits(logits, target)).at(0);
      ++count;
    }
  return count ? total / count : 0.0;
}

// Copies pretrained tensors into a model's store: exact-name matches for
// network weights, per-word rows for the embedding table.
inline void apply_pretrained(ParamStore& store, const Vocabulary& vocab,
                             const Pretrained& pre) {
  for (auto& p : store) {
    if (p->name == "enc.word_emb") {
      auto it = pre.values.find(p->name);
      if (it == pre.values.end()) continue;
      const Tensor& src = it->second;
      int dim = p->value.cols();
      if (src.cols() != dim) continue;
      for (int w = 0; w < vocab.size(); ++w) {
        int pw = pre.vocab.id(vocab.words[w]);
        if (pw == 0 && vocab.words[w] != "<unk>") continue;
        for (int d = 0; d < dim; ++d) p->value.at(w, d) = src.at(pw, d);
      }
    } else {
      auto it = pre.values.find(p->name);
      if (it != pre.values.end() && it->second.shape == p->value.shape)
        p->value = it->second;
    }
  }
}

}  // namespace rsat
