#include "qvad/akwg.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <thread>

#include "qvad/error.h"
#include "qvad/serialize.h"

namespace qvad {

std::uint64_t CooccurrenceCounts::joint(WordId i, WordId j) const {
  auto it = joint_df.find(pair_key(i, j));
  return it == joint_df.end() ? 0 : it->second;
}

std::uint64_t CooccurrenceCounts::freq(WordId i) const {
  auto it = df.find(i);
  return it == df.end() ? 0 : it->second;
}

void CooccurrenceCounts::merge(const CooccurrenceCounts& other) {
  doc_count += other.doc_count;
  for (const auto& [w, c] : other.df) df[w] += c;
  for (const auto& [k, c] : other.joint_df) joint_df[k] += c;
}

namespace {

void count_into(CooccurrenceCounts& counts, std::span<const std::vector<WordId>> docs) {
  std::vector<WordId> set;
  for (const auto& doc : docs) {
    set.assign(doc.begin(), doc.end());
    std::sort(set.begin(), set.end());
    set.erase(std::unique(set.begin(), set.end()), set.end());
    ++counts.doc_count;
    for (std::size_t a = 0; a < set.size(); ++a) {
      ++counts.df[set[a]];
      for (std::size_t b = a + 1; b < set.size(); ++b) ++counts.joint_df[pair_key(set[a], set[b])];
    }
  }
}

}  // namespace

CooccurrenceCounts count_cooccurrence(std::span<const std::vector<WordId>> docs) {
  if (docs.empty()) throw DataError("co-occurrence counting needs at least one document");
  CooccurrenceCounts counts;
  count_into(counts, docs);
  return counts;
}

CooccurrenceCounts count_cooccurrence_parallel(std::span<const std::vector<WordId>> docs,
                                               std::size_t threads) {
  if (docs.empty()) throw DataError("co-occurrence counting needs at least one document");
  threads = std::clamp<std::size_t>(threads, 1, docs.size());
  if (threads == 1) return count_cooccurrence(docs);
  std::vector<CooccurrenceCounts> shards(threads);
  std::vector<std::thread> workers;
  const std::size_t per = (docs.size() + threads - 1) / threads;
  for (std::size_t s = 0; s < threads; ++s) {
    const std::size_t begin = std::min(docs.size(), s * per);
    const std::size_t end = std::min(docs.size(), begin + per);
    workers.emplace_back(
        [&shards, s, part = docs.subspan(begin, end - begin)] { count_into(shards[s], part); });
  }
  for (auto& w : workers) w.join();
  CooccurrenceCounts merged;
  for (const auto& shard : shards) merged.merge(shard);
  return merged;
}

double pmi(const CooccurrenceCounts& counts, WordId i, WordId j) {
  const std::uint64_t di = counts.freq(i), dj = counts.freq(j);
  if (di == 0 || dj == 0) {
    throw DataError("pmi: unseen word id " + std::to_string(di == 0 ? i : j));
  }
  const std::uint64_t joint = counts.joint(i, j);
  if (joint == 0) return -std::numeric_limits<double>::infinity();
  // Integer products stay exact in double, so equal ratios give equal PMI.
  const double num = static_cast<double>(joint) * static_cast<double>(counts.doc_count);
  const double den = static_cast<double>(di) * static_cast<double>(dj);
  return std::log(num / den);
}

Akwg::Akwg(std::size_t num_nodes, double threshold, std::size_t max_degree)
    : adjacency_(num_nodes), threshold_(threshold), max_degree_(max_degree) {}

std::size_t Akwg::edge_count() const {
  std::size_t n = 0;
  for (const auto& adj : adjacency_) n += adj.size();
  return n / 2;
}

std::span<const Edge> Akwg::neighbors(WordId id) const {
  if (id >= adjacency_.size()) return {};
  return adjacency_[id];
}

bool Akwg::edge(WordId a, WordId b, double* weight) const {
  auto adj = neighbors(a);
  auto it = std::lower_bound(adj.begin(), adj.end(), b,
                             [](const Edge& e, WordId id) { return e.neighbor < id; });
  if (it == adj.end() || it->neighbor != b) return false;
  if (weight) *weight = it->weight;
  return true;
}

void Akwg::add_edge(WordId a, WordId b, double weight) {
  if (a == b) throw DataError("akwg: self-loop on word " + std::to_string(a));
  if (a >= adjacency_.size() || b >= adjacency_.size()) {
    throw DataError("akwg: edge endpoint outside graph of " + std::to_string(adjacency_.size()) +
                    " nodes");
  }
  adjacency_[a].push_back({b, weight});
  adjacency_[b].push_back({a, weight});
}

void Akwg::sort_neighbors() {
  for (auto& adj : adjacency_) {
    std::sort(adj.begin(), adj.end(),
              [](const Edge& x, const Edge& y) { return x.neighbor < y.neighbor; });
  }
}

Akwg build_graph(const CooccurrenceCounts& counts, double threshold, std::size_t max_degree,
                 std::size_t num_nodes) {
  if (!(threshold > 0.0)) throw UsageError("akwg threshold must be positive");
  struct Scored {
    double pmi;
    WordId other;
  };
  std::map<WordId, std::vector<Scored>> per_node;
  for (const auto& [key, joint] : counts.joint_df) {
    const auto a = static_cast<WordId>(key >> 32);
    const auto b = static_cast<WordId>(key & 0xffffffffu);
    if (a >= num_nodes || b >= num_nodes) {
      throw DataError("akwg: word id " + std::to_string(std::max(a, b)) +
                      " outside graph of " + std::to_string(num_nodes) + " nodes");
    }
    const double p = pmi(counts, a, b);
    if (p > threshold) {
      per_node[a].push_back({p, b});
      per_node[b].push_back({p, a});
    }
  }
  std::map<WordId, std::vector<WordId>> kept;
  for (auto& [node, list] : per_node) {
    std::sort(list.begin(), list.end(), [](const Scored& x, const Scored& y) {
      return x.pmi != y.pmi ? x.pmi > y.pmi : x.other < y.other;
    });
    if (list.size() > max_degree) list.resize(max_degree);
    auto& ids = kept[node];
    for (const auto& s : list) ids.push_back(s.other);
    std::sort(ids.begin(), ids.end());
  }
  Akwg graph(num_nodes, threshold, max_degree);
  for (const auto& [node, list] : per_node) {
    for (const auto& s : list) {
      if (s.other <= node) continue;
      const auto& back = kept[s.other];
      if (std::binary_search(back.begin(), back.end(), node)) {
        graph.add_edge(node, s.other, s.pmi / threshold);
      }
    }
  }
  graph.sort_neighbors();
  return graph;
}

namespace {
constexpr char kAkwgMagic[4] = {'A', 'K', 'W', 'G'};
constexpr std::uint32_t kAkwgVersion = 1;
}  // namespace

void Akwg::save_binary(const std::filesystem::path& path) const {
  BinaryWriter w(path);
  w.bytes(kAkwgMagic, 4);
  w.u32(kAkwgVersion);
  w.u32(static_cast<std::uint32_t>(adjacency_.size()));
  w.f64(threshold_);
  w.u32(static_cast<std::uint32_t>(max_degree_));
  for (const auto& adj : adjacency_) {
    w.u32(static_cast<std::uint32_t>(adj.size()));
    for (const Edge& e : adj) {
      w.u32(e.neighbor);
      w.f32(static_cast<float>(e.weight));
    }
  }
  w.finish();
}

Akwg Akwg::load_binary(const std::filesystem::path& path) {
  BinaryReader r(path);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kAkwgMagic, 4) != 0) throw DataError("not an AKWG file: " + path.string());
  if (const auto v = r.u32(); v != kAkwgVersion) {
    throw DataError("unsupported AKWG version " + std::to_string(v));
  }
  const std::uint32_t n = r.u32();
  const double threshold = r.f64();
  const std::uint32_t max_degree = r.u32();
  Akwg g(n, threshold, max_degree);
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint32_t deg = r.u32();
    auto& adj = g.adjacency_[i];
    adj.reserve(deg);
    for (std::uint32_t k = 0; k < deg; ++k) {
      const std::uint32_t nb = r.u32();
      const double w = r.f32();
      if (nb >= n || nb == i) throw DataError("AKWG file has an invalid edge at node " + std::to_string(i));
      adj.push_back({nb, w});
    }
  }
  r.expect_end();
  g.sort_neighbors();
  for (std::uint32_t i = 0; i < n; ++i) {
    for (const Edge& e : g.adjacency_[i]) {
      double back = 0.0;
      if (!g.edge(e.neighbor, i, &back) || back != e.weight) {
        throw DataError("AKWG file is not symmetric at node " + std::to_string(i));
      }
    }
  }
  return g;
}

void Akwg::export_tsv(const std::filesystem::path& path, const Vocab& vocab,
                      const CooccurrenceCounts* counts) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[64];
  for (std::size_t i = 0; i < adjacency_.size(); ++i) {
    for (const Edge& e : adjacency_[i]) {
      if (e.neighbor <= i) continue;
      out << vocab.word(static_cast<WordId>(i)) << '\t' << vocab.word(e.neighbor) << '\t';
      const double p = counts != nullptr ? pmi(*counts, static_cast<WordId>(i), e.neighbor)
                                         : e.weight * threshold_;
      std::snprintf(buf, sizeof buf, "%.17g", p);
      out << buf << '\t';
      std::snprintf(buf, sizeof buf, "%.17g", e.weight);
      out << buf << '\n';
    }
  }
  if (!out) throw DataError("failed writing " + path.string());
}

bool SubGraph::contains(WordId id) const {
  return std::find(node_ids.begin(), node_ids.end(), id) != node_ids.end();
}

Tensor normalized_adjacency(std::size_t n, std::span<const LocalEdge> edges) {
  Tensor a = Tensor::identity(n);
  for (const LocalEdge& e : edges) {
    a(e.a, e.b) += e.weight;
    a(e.b, e.a) += e.weight;
  }
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += a(i, j);
    inv_sqrt[i] = 1.0 / std::sqrt(d);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a(i, j) *= inv_sqrt[i] * inv_sqrt[j];
  }
  return a;
}

namespace {

std::vector<LocalEdge> induced_edges(const std::vector<WordId>& ids, const Akwg& graph) {
  std::vector<LocalEdge> edges;
  for (std::size_t a = 0; a < ids.size(); ++a) {
    for (std::size_t b = a + 1; b < ids.size(); ++b) {
      double w = 0.0;
      if (graph.edge(ids[a], ids[b], &w)) edges.push_back({a, b, w});
    }
  }
  return edges;
}

}  // namespace

SubGraph build_subgraph(std::span<const TypedWord> words, const Akwg& graph) {
  if (words.empty()) throw DataError("sub-graph needs at least one input word");
  SubGraph sub;
  for (const TypedWord& w : words) {
    if (w.type == NodeType::kAssociated) {
      throw DataError("sub-graph inputs must be keyword or query words");
    }
    auto it = std::find(sub.node_ids.begin(), sub.node_ids.end(), w.id);
    if (it == sub.node_ids.end()) {
      sub.node_ids.push_back(w.id);
      sub.node_types.push_back(w.type);
    } else if (w.type == NodeType::kKeyword) {
      sub.node_types[static_cast<std::size_t>(it - sub.node_ids.begin())] = NodeType::kKeyword;
    }
  }
  sub.edges = induced_edges(sub.node_ids, graph);
  sub.norm_adj = normalized_adjacency(sub.size(), sub.edges);
  return sub;
}

double Candidate::max_weight() const {
  double m = 0.0;
  for (const Anchor& a : anchors) m = std::max(m, a.weight);
  return m;
}

std::vector<Candidate> one_hop_candidates(const SubGraph& sub, const Akwg& graph,
                                          const std::unordered_set<WordId>& exclude) {
  std::map<WordId, Candidate> found;
  for (std::size_t i = 0; i < sub.size(); ++i) {
    for (const Edge& e : graph.neighbors(sub.node_ids[i])) {
      if (exclude.count(e.neighbor) || sub.contains(e.neighbor)) continue;
      Candidate& c = found[e.neighbor];
      c.id = e.neighbor;
      c.anchors.push_back({i, e.weight});
    }
  }
  std::vector<Candidate> out;
  out.reserve(found.size());
  for (auto& [id, c] : found) out.push_back(std::move(c));
  return out;
}

SubGraph extend_subgraph(const SubGraph& sub, std::span<const WordId> chosen, const Akwg& graph) {
  SubGraph ext = sub;
  for (WordId id : chosen) {
    if (ext.contains(id)) {
      throw DataError("extend_subgraph: word " + std::to_string(id) + " is already a node");
    }
    ext.node_ids.push_back(id);
    ext.node_types.push_back(NodeType::kAssociated);
  }
  if (chosen.empty()) return ext;
  ext.edges = induced_edges(ext.node_ids, graph);
  ext.norm_adj = normalized_adjacency(ext.size(), ext.edges);
  return ext;
}

}  // namespace qvad
