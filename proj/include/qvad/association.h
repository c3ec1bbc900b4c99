#pragma once

#include <span>
#include <vector>

#include "qvad/akwg.h"
#include "qvad/config.h"
#include "qvad/gated_gcn.h"

namespace qvad {

// Encodes the input sub-graph and scores one-hop candidates with
// score_c = w · [g^L ; v_c], w in R^(hidden + embedding).
class AssociationModule {
 public:
  AssociationModule(ParamStore& store, const ModelConfig& config, Rng& rng);

  // word_embedding(id) + type_embedding(type) per node, [n x emb].
  Var embed(Tape& tape, const SubGraph& sub) const;
  GatedGcnOutput encode(Tape& tape, const SubGraph& sub) const;
  // [1 x m] scores; an empty candidate list yields an invalid Var.
  Var score(Var global, std::span<const WordId> candidates) const;

  Parameter& word_embedding() const { return *word_emb_; }
  Parameter& type_embedding() const { return *type_emb_; }
  Parameter& score_weight() const { return *score_w_; }
  const GatedGcn& encoder() const { return gcn_; }

 private:
  Parameter* word_emb_;
  Parameter* type_emb_;
  Parameter* score_w_;  // [(hidden + emb) x 1]
  GatedGcn gcn_;
};

// Ids of the min(phi, m) highest-scoring candidates, best first; equal
// scores prefer the smaller word id.
std::vector<WordId> select_top_phi(std::span<const double> scores,
                                   std::span<const WordId> candidates, std::size_t phi);

struct SelectionTrace {
  std::vector<WordId> chosen;
  std::vector<std::size_t> positions;  // indices into the candidate list
  std::vector<double> log_probs;       // per draw, <= 0
  std::size_t n_words = 0;             // node count of the extended sub-graph
};

// Draws min(phi, m) candidates without replacement from
// softmax(scores / temperature), renormalising after each draw.
// n_words is left for the caller to fill once the extension is known.
SelectionTrace sample_phi(std::span<const double> scores, std::span<const WordId> candidates,
                          std::size_t phi, double temperature, Rng& rng);

// Sum of the trace's per-draw log-probabilities, recomputed on the tape from
// the score node so gradients reach the scorer.
Var selection_log_prob(Var scores, const SelectionTrace& trace, double temperature);

// 1 - tanh(-(1/n) sum_j log p_j) over the gold-token probabilities.
// Throws NumericError for any p <= 0 or an empty list.
double compute_reward(std::span<const double> gold_probs);
double reward_from_cross_entropy(double ce);

// Exponential moving average of rewards; seeded with the first observation.
class RewardBaseline {
 public:
  explicit RewardBaseline(double decay = 0.99) : decay_(decay) {}

  double value() const { return value_; }
  bool initialized() const { return initialized_; }
  // Baseline to compare the next reward against (the reward itself when no
  // observation has been seen yet).
  double reference(double reward) const { return initialized_ ? value_ : reward; }
  void update(double reward);

 private:
  double decay_;
  double value_ = 0.0;
  bool initialized_ = false;
};

// -(reward - baseline) * (sum log-probs) / n_words.
Var reinforce_loss(Var log_prob_sum, double reward, double baseline, std::size_t n_words);

}  // namespace qvad
