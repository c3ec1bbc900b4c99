#include "qvad/association.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qvad/error.h"

namespace qvad {

AssociationModule::AssociationModule(ParamStore& store, const ModelConfig& config, Rng& rng) {
  const std::size_t emb = config.embedding_dim, hid = config.hidden_dim;
  word_emb_ = &store.add("assoc.word_emb", uniform({config.vocab_size, emb}, 0.1, rng));
  type_emb_ = &store.add("assoc.type_emb", uniform({kNodeTypeCount, emb}, 0.1, rng));
  gcn_ = GatedGcn(store, "assoc.gcn", emb, hid, config.association_layers, true, rng);
  score_w_ = &store.add("assoc.score_w", xavier_uniform(hid + emb, 1, rng));
}

namespace {

std::vector<std::uint32_t> type_ids(const SubGraph& sub) {
  std::vector<std::uint32_t> out;
  out.reserve(sub.size());
  for (NodeType t : sub.node_types) out.push_back(static_cast<std::uint32_t>(t));
  return out;
}

}  // namespace

Var AssociationModule::embed(Tape& tape, const SubGraph& sub) const {
  if (sub.size() == 0) throw DataError("association: empty sub-graph");
  const auto types = type_ids(sub);
  return add(gather_rows(tape.param(*word_emb_), sub.node_ids),
             gather_rows(tape.param(*type_emb_), types));
}

GatedGcnOutput AssociationModule::encode(Tape& tape, const SubGraph& sub) const {
  Var x = embed(tape, sub);
  return gcn_(x, tape.constant(sub.norm_adj));
}

Var AssociationModule::score(Var global, std::span<const WordId> candidates) const {
  if (candidates.empty()) return {};
  Tape& t = *global.tape();
  const std::size_t m = candidates.size();
  Var tiled = matmul(t.constant(Tensor({m, 1}, 1.0)), global);
  Var features = concat_cols({tiled, gather_rows(t.param(*word_emb_), candidates)});
  return transpose(matmul(features, t.param(*score_w_)));
}

std::vector<WordId> select_top_phi(std::span<const double> scores,
                                   std::span<const WordId> candidates, std::size_t phi) {
  if (scores.size() != candidates.size()) {
    throw ShapeError("select_top_phi: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(candidates.size()) + " candidates");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] != scores[b] ? scores[a] > scores[b] : candidates[a] < candidates[b];
  });
  order.resize(std::min(phi, order.size()));
  std::vector<WordId> out;
  out.reserve(order.size());
  for (std::size_t i : order) out.push_back(candidates[i]);
  return out;
}

SelectionTrace sample_phi(std::span<const double> scores, std::span<const WordId> candidates,
                          std::size_t phi, double temperature, Rng& rng) {
  if (scores.size() != candidates.size()) {
    throw ShapeError("sample_phi: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(candidates.size()) + " candidates");
  }
  if (!(temperature > 0.0)) throw UsageError("sample_phi: temperature must be positive");
  const std::size_t m = scores.size();
  const std::size_t draws = std::min(phi, m);
  std::vector<bool> taken(m, false);
  std::vector<double> probs(m);
  SelectionTrace trace;
  for (std::size_t k = 0; k < draws; ++k) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      if (!taken[i]) mx = std::max(mx, scores[i] / temperature);
    }
    double z = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      probs[i] = taken[i] ? 0.0 : std::exp(scores[i] / temperature - mx);
      z += probs[i];
    }
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * z;
    std::size_t drawn = m;
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (taken[i]) continue;
      acc += probs[i];
      drawn = i;
      if (u < acc) break;
    }
    taken[drawn] = true;
    trace.chosen.push_back(candidates[drawn]);
    trace.positions.push_back(drawn);
    trace.log_probs.push_back(scores[drawn] / temperature - mx - std::log(z));
  }
  return trace;
}

Var selection_log_prob(Var scores, const SelectionTrace& trace, double temperature) {
  if (trace.positions.empty()) throw UsageError("selection_log_prob: empty selection");
  const std::size_t m = scores.cols();
  Var scaled = scale(scores, 1.0 / temperature);
  Mask mask(m, 1);
  Var total;
  for (std::size_t pos : trace.positions) {
    Var lp = pick(log_softmax_rows(scaled, mask), 0, pos);
    total = total.valid() ? add(total, lp) : lp;
    mask[pos] = 0;
  }
  return total;
}

double reward_from_cross_entropy(double ce) {
  // 1 - tanh(x) == 2 / (1 + e^{2x}); the right-hand form stays positive for
  // large x where 1 - tanh(x) rounds to zero.
  if (ce >= 0.0) return 2.0 / (1.0 + std::exp(2.0 * ce));
  return 1.0 - std::tanh(ce);
}

double compute_reward(std::span<const double> gold_probs) {
  if (gold_probs.empty()) throw NumericError("reward: empty target");
  double ce = 0.0;
  for (double p : gold_probs) {
    if (!(p > 0.0)) throw NumericError("reward: non-positive gold probability");
    ce -= std::log(p);
  }
  return reward_from_cross_entropy(ce / static_cast<double>(gold_probs.size()));
}

void RewardBaseline::update(double reward) {
  if (!initialized_) {
    value_ = reward;
    initialized_ = true;
    return;
  }
  value_ = decay_ * value_ + (1.0 - decay_) * reward;
}

Var reinforce_loss(Var log_prob_sum, double reward, double baseline, std::size_t n_words) {
  if (n_words == 0) throw UsageError("reinforce_loss: n_words must be positive");
  return scale(log_prob_sum, -(reward - baseline) / static_cast<double>(n_words));
}

}  // namespace qvad
