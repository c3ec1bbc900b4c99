#pragma once

#include <span>
#include <vector>

#include "qvad/akwg.h"
#include "qvad/config.h"
#include "qvad/gated_gcn.h"

namespace qvad {

struct EncodedGraph {
  Var memories;                 // [n x hidden]
  Mask source_mask;             // n entries, all 1 (every node is attendable)
  std::vector<NodeType> types;  // kept for inspection
};

struct DecodeOutput {
  Var logits;  // [T x V], one row per predicted position
  Var loss;    // mean cross-entropy over predicted positions
};

// Graph-aware encoder-decoder. Nodes are embedded as word + type embedding
// (no positions), passed through a GatedGCN and full self-attention blocks.
// The decoder adds sinusoidal positions to target embeddings and runs
// pre-norm blocks with causal self-attention and cross-attention.
class GenerationModule {
 public:
  GenerationModule(ParamStore& store, const ModelConfig& config, Rng& rng);

  Var embed_nodes(Tape& tape, const SubGraph& sub) const;
  EncodedGraph encode_graph(Tape& tape, const SubGraph& sub) const;

  // Logits for every prefix position of `inputs` (teacher forcing).
  Var decoder_logits(const EncodedGraph& enc, std::span<const WordId> inputs) const;
  // target = BOS w1 .. wk EOS; predicts target[1..] from target[..-1].
  DecodeOutput decode_train(const EncodedGraph& enc, std::span<const WordId> target) const;

  // Probability the model assigns to each gold token of `target` under
  // teacher forcing, evaluated without recording gradients.
  std::vector<double> gold_probabilities(const SubGraph& sub,
                                         std::span<const WordId> target) const;

  // Autoregressive decoding from BOS until EOS or max_len content tokens.
  // Returned ids exclude BOS/EOS.
  std::vector<WordId> generate(const SubGraph& sub, DecodeMode mode, std::size_t beam_size,
                               std::size_t max_len) const;

  Parameter& word_embedding() const { return *word_emb_; }
  Parameter& type_embedding() const { return *type_emb_; }
  Parameter& output_bias() const { return *out_.bias(); }
  const Tensor& positional_encoding() const { return positions_; }
  std::size_t max_target_length() const { return max_len_ + 2; }

 private:
  Parameter* word_emb_;
  Parameter* type_emb_;
  GatedGcn gcn_;
  std::vector<EncoderBlock> encoder_;
  LayerNorm enc_norm_;
  Linear dec_in_;
  std::vector<DecoderBlock> decoder_;
  LayerNorm dec_norm_;
  Linear out_;
  Tensor positions_;
  std::size_t max_len_;
  std::size_t vocab_;
};

// Sinusoidal table: PE(p, 2i) = sin(p / 10000^(2i/d)), PE(p, 2i+1) = cos(...).
Tensor sinusoidal_positions(std::size_t length, std::size_t dim);

}  // namespace qvad
