#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qvad/ops.h"
#include "qvad/tape.h"

namespace qvad {

using Rng = std::mt19937_64;

// Owns every learnable tensor of a model under a hierarchical name
// ("gen.dec.0.self.wq"). Addresses are stable for the lifetime of the store.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  // Parameters in creation order.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> with_prefix(const std::string& prefix);

  void set_trainable(const std::string& prefix, bool trainable);
  void zero_grad();
  std::size_t scalar_count() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> index_;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);
Tensor uniform(Shape shape, double bound, Rng& rng);

// y = x W + b.
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         bool bias = true);
  Var operator()(Var x) const;

  Parameter* weight() const { return w_; }
  Parameter* bias() const { return b_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
};

// relu(adj · H · W): one graph-convolution aggregation step.
Var gcn_layer(Var h, Var norm_adj, Var w);

struct LstmState {
  Var h;
  Var c;
};

// Standard LSTM cell applied row-wise: i, f, o = sigmoid, g = tanh,
// c' = f*c + i*g, h' = o*tanh(c'). Gate column order in the fused weights is
// [i | f | g | o].
class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(ParamStore& store, const std::string& name, std::size_t input, std::size_t hidden,
           Rng& rng);
  LstmState operator()(Var x, LstmState state) const;

  std::size_t hidden() const { return hidden_; }
  Parameter* input_weight() const { return wx_; }
  Parameter* hidden_weight() const { return wh_; }
  Parameter* bias() const { return b_; }

 private:
  Parameter* wx_ = nullptr;
  Parameter* wh_ = nullptr;
  Parameter* b_ = nullptr;
  std::size_t hidden_ = 0;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, std::size_t dim);
  Var operator()(Var x) const;

 private:
  Parameter* gain_ = nullptr;
  Parameter* bias_ = nullptr;
};

// Softmax-weighted sum of node states: w = softmax_i(u · tanh(W h_i)),
// result = sum_i w_i h_i as a [1 x h] row.
class AttnPooling {
 public:
  AttnPooling() = default;
  AttnPooling(ParamStore& store, const std::string& name, std::size_t dim, Rng& rng);
  Var operator()(Var h, Var* weights_out = nullptr) const;

  Parameter* projection() const { return wa_; }
  Parameter* context() const { return u_; }

 private:
  Parameter* wa_ = nullptr;
  Parameter* u_ = nullptr;
};

// Scaled dot-product multi-head attention with output projection.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, std::size_t dim,
                     std::size_t heads, Rng& rng);

  // queries: [Tq x d], memory: [Tk x d], mask: empty or Tq*Tk entries.
  // When probs_out is given it receives one [Tq x Tk] weight matrix per head.
  Var operator()(Var queries, Var memory, const Mask& mask = {},
                 std::vector<Tensor>* probs_out = nullptr) const;

  std::size_t heads() const { return heads_; }

 private:
  Linear q_, k_, v_, o_;
  std::size_t heads_ = 1;
  std::size_t dim_ = 0;
};

class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, std::size_t dim, std::size_t inner,
              Rng& rng);
  Var operator()(Var x) const;

 private:
  Linear in_, out_;
};

// Pre-norm transformer encoder block: x + SelfAttn(LN x), then x + FFN(LN x).
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads,
               std::size_t inner, Rng& rng);
  Var operator()(Var x, const Mask& mask = {}) const;

  const MultiHeadAttention& attention() const { return attn_; }

 private:
  LayerNorm ln_attn_, ln_ffn_;
  MultiHeadAttention attn_;
  FeedForward ffn_;
};

// Pre-norm decoder block: causal self-attention, cross-attention to the
// encoder memory, feed-forward; each wrapped in a residual connection.
class DecoderBlock {
 public:
  DecoderBlock() = default;
  DecoderBlock(ParamStore& store, const std::string& name, std::size_t dim, std::size_t heads,
               std::size_t inner, Rng& rng);
  Var operator()(Var x, Var memory, const Mask& self_mask, const Mask& cross_mask) const;

 private:
  LayerNorm ln_self_, ln_cross_, ln_ffn_;
  MultiHeadAttention self_, cross_;
  FeedForward ffn_;
};

// Lower-triangular [n x n] mask.
Mask causal_mask(std::size_t n);

}  // namespace qvad
