#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "qvad/corpus.h"
#include "qvad/tensor.h"

namespace qvad {

// Document-level co-occurrence statistics. Every document is reduced to its
// token set before counting.
struct CooccurrenceCounts {
  std::uint64_t doc_count = 0;
  std::unordered_map<WordId, std::uint64_t> df;
  // Keyed by pair_key(min, max).
  std::unordered_map<std::uint64_t, std::uint64_t> joint_df;

  std::uint64_t joint(WordId i, WordId j) const;
  std::uint64_t freq(WordId i) const;

  // Adds another shard's counts; merging is associative and exact.
  void merge(const CooccurrenceCounts& other);
  bool operator==(const CooccurrenceCounts& other) const = default;
};

inline std::uint64_t pair_key(WordId a, WordId b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

// Throws DataError on an empty document list.
CooccurrenceCounts count_cooccurrence(std::span<const std::vector<WordId>> docs);
// Counts shards on up to `threads` workers and merges them in shard order.
CooccurrenceCounts count_cooccurrence_parallel(std::span<const std::vector<WordId>> docs,
                                               std::size_t threads);

// ln(p(i,j) / (p(i) p(j))) with probabilities from document counts; -inf when
// the pair never co-occurs. Throws DataError for a word with df == 0.
double pmi(const CooccurrenceCounts& counts, WordId i, WordId j);

struct Edge {
  WordId neighbor = 0;
  double weight = 0.0;  // PMI / threshold
  bool operator==(const Edge& other) const = default;
};

// Association word graph: undirected, capped degree, weights PMI / threshold.
class Akwg {
 public:
  Akwg() = default;
  Akwg(std::size_t num_nodes, double threshold, std::size_t max_degree);

  std::size_t num_nodes() const { return adjacency_.size(); }
  double threshold() const { return threshold_; }
  std::size_t max_degree() const { return max_degree_; }
  std::size_t edge_count() const;

  // Sorted by neighbor id; empty for ids outside the graph.
  std::span<const Edge> neighbors(WordId id) const;
  // True if the edge exists; its weight is written to *weight when given.
  bool edge(WordId a, WordId b, double* weight = nullptr) const;

  // Inserts a symmetric edge; used by the builder and the loader.
  void add_edge(WordId a, WordId b, double weight);
  void sort_neighbors();

  bool operator==(const Akwg& other) const = default;

  // Binary layout (little-endian): "AKWG", u32 version, u32 N, f64 threshold,
  // u32 max_degree, then per node: u32 degree, degree x (u32 id, f32 weight).
  void save_binary(const std::filesystem::path& path) const;
  static Akwg load_binary(const std::filesystem::path& path);
  // word_i <TAB> word_j <TAB> pmi <TAB> weight, one line per edge with i < j.
  // The PMI column is recomputed from `counts` when given, otherwise it is
  // weight * threshold.
  void export_tsv(const std::filesystem::path& path, const Vocab& vocab,
                  const CooccurrenceCounts* counts = nullptr) const;

 private:
  std::vector<std::vector<Edge>> adjacency_;
  double threshold_ = 8.0;
  std::size_t max_degree_ = 20;
};

// Keeps pairs with PMI > threshold, caps each node at max_degree neighbors by
// descending PMI (ties: smaller id), keeps an edge only if both endpoints
// retained it. num_nodes must exceed every counted word id.
Akwg build_graph(const CooccurrenceCounts& counts, double threshold, std::size_t max_degree,
                 std::size_t num_nodes);

enum class NodeType : std::uint8_t { kKeyword = 0, kQuery = 1, kAssociated = 2 };
inline constexpr std::size_t kNodeTypeCount = 3;

struct LocalEdge {
  std::size_t a = 0;  // local indices, a < b
  std::size_t b = 0;
  double weight = 0.0;
  bool operator==(const LocalEdge& other) const = default;
};

// Per-example graph over the input words (and, once extended, the
// associated words). norm_adj = D^-1/2 (A + I) D^-1/2.
struct SubGraph {
  std::vector<WordId> node_ids;
  std::vector<NodeType> node_types;
  std::vector<LocalEdge> edges;
  Tensor norm_adj;

  std::size_t size() const { return node_ids.size(); }
  bool contains(WordId id) const;
};

struct TypedWord {
  WordId id;
  NodeType type;
};

// Nodes in first-occurrence order; a word listed as both keyword and query
// becomes one keyword node. Throws DataError when words is empty.
SubGraph build_subgraph(std::span<const TypedWord> words, const Akwg& graph);

struct Anchor {
  std::size_t node = 0;  // index into the sub-graph
  double weight = 0.0;
};

struct Candidate {
  WordId id = 0;
  std::vector<Anchor> anchors;
  double max_weight() const;
};

// One-hop AKWG neighbours of the sub-graph nodes, excluding the sub-graph
// itself and `exclude`, in ascending id order.
std::vector<Candidate> one_hop_candidates(const SubGraph& sub, const Akwg& graph,
                                          const std::unordered_set<WordId>& exclude = {});

// Appends `chosen` as associated nodes and adds every AKWG edge among the
// extended node set. Throws DataError if a chosen word is already present.
SubGraph extend_subgraph(const SubGraph& sub, std::span<const WordId> chosen, const Akwg& graph);

Tensor normalized_adjacency(std::size_t n, std::span<const LocalEdge> edges);

}  // namespace qvad
