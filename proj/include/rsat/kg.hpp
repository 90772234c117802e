// Knowledge-graph feature table: frozen node embeddings, multi-hot node
// types, and a word -> node map. The synthetic builder maps a configurable
// fraction of the vocabulary to randomly embedded, randomly typed nodes; the
// learnable UNK vector for unmapped words lives with the model parameters.
#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsat/corpus.hpp"
#include "rsat/rng.hpp"

namespace rsat {

constexpr int kKgFormatVersion = 1;

struct KnowledgeGraph {
  int dim = 0;
  int n_types = 0;
  std::vector<std::vector<double>> node_emb;
  std::vector<std::vector<int>> node_types;  // type ids per node
  std::map<std::string, int> word_to_node;

  int n_nodes() const { return static_cast<int>(node_emb.size()); }

  int node_of(const std::string& word) const {
    auto it = word_to_node.find(word);
    return it == word_to_node.end() ? -1 : it->second;
  }

  std::vector<double> type_multihot(int node) const {
    std::vector<double> t(n_types, 0.0);
    if (node >= 0)
      for (int ty : node_types[node]) t[ty] = 1.0;
    return t;
  }
};

inline KnowledgeGraph make_synthetic_kg(const std::vector<std::string>& words,
                                        double mapped_fraction, int dim,
                                        int n_types, std::uint64_t seed) {
  if (mapped_fraction < 0.0 || mapped_fraction > 1.0)
    throw ConfigError("kg mapped_fraction must be in [0,1]");
  KnowledgeGraph kg;
  kg.dim = dim;
  kg.n_types = n_types;
  Rng rng(seed);
  for (const auto& w : words) {
    if (kg.word_to_node.count(w)) continue;
    if (!rng.bernoulli(mapped_fraction)) continue;
    int id = kg.n_nodes();
    std::vector<double> emb(dim);
    for (auto& x : emb) x = rng.uniform(-0.5, 0.5);
    kg.node_emb.push_back(std::move(emb));
    std::vector<int> types{rng.uniform_int(n_types)};
    if (rng.bernoulli(0.2)) {  // some nodes belong to multiple types
      int extra = rng.uniform_int(n_types);
      if (extra != types[0]) types.push_back(extra);
    }
    kg.node_types.push_back(std::move(types));
    kg.word_to_node[w] = id;
  }
  return kg;
}

inline nlohmann::json to_json(const KnowledgeGraph& kg) {
  nlohmann::json j;
  j["version"] = kKgFormatVersion;
  j["dim"] = kg.dim;
  j["types"] = kg.n_types;
  nlohmann::json nodes = nlohmann::json::array();
  for (int i = 0; i < kg.n_nodes(); ++i)
    nodes.push_back({{"id", i}, {"emb", kg.node_emb[i]}, {"types", kg.node_types[i]}});
  j["nodes"] = std::move(nodes);
  j["word_to_node"] = kg.word_to_node;
  return j;
}

inline KnowledgeGraph kg_from_json(const nlohmann::json& j) {
  if (!j.contains("version") || j.at("version").get<int>() != kKgFormatVersion)
    throw DataError("unsupported kg format version");
  KnowledgeGraph kg;
  kg.dim = j.at("dim").get<int>();
  kg.n_types = j.at("types").get<int>();
  for (const auto& jn : j.at("nodes")) {
    kg.node_emb.push_back(jn.at("emb").get<std::vector<double>>());
    kg.node_types.push_back(jn.at("types").get<std::vector<int>>());
    if (static_cast<int>(kg.node_emb.back().size()) != kg.dim)
      throw DataError("kg node embedding dimension mismatch");
    for (int t : kg.node_types.back())
      if (t < 0 || t >= kg.n_types) throw DataError("kg node type out of range");
  }
  kg.word_to_node = j.at("word_to_node").get<std::map<std::string, int>>();
  for (const auto& [w, n] : kg.word_to_node)
    if (n < 0 || n >= kg.n_nodes())
      throw DataError("kg word '" + w + "' maps to missing node");
  return kg;
}

inline void save_kg(const KnowledgeGraph& kg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path);
  out << to_json(kg).dump() << "\n";
}

inline KnowledgeGraph load_kg(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": parse error: " + e.what());
  }
  return kg_from_json(j);
}

}  // namespace rsat
