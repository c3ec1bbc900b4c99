#include "qvad/nn.h"

#include <cmath>

#include "qvad/error.h"

namespace qvad {

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  if (index_.count(name)) throw UsageError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->value = std::move(init);
  Parameter& ref = *p;
  params_.push_back(std::move(p));
  index_.emplace(name, &ref);
  return ref;
}

Parameter& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter: " + name);
  return *it->second;
}

const Parameter& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw UsageError("unknown parameter: " + name);
  return *it->second;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParamStore::with_prefix(const std::string& prefix) {
  std::vector<Parameter*> out;
  for (auto& p : params_) {
    if (p->name.compare(0, prefix.size(), prefix) == 0) out.push_back(p.get());
  }
  return out;
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
  for (Parameter* p : with_prefix(prefix)) p->trainable = trainable;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad = Tensor();
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

Tensor uniform(Shape shape, double bound, Rng& rng) {
  Tensor t(std::move(shape));
  // Mapped by hand so the draw sequence does not depend on the standard
  // library's distribution implementation.
  for (double& v : t.values()) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = (2.0 * u - 1.0) * bound;
  }
  return t;
}

Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  return uniform({rows, cols}, bound, rng);
}

Linear::Linear(ParamStore& store, const std::string& name, std::size_t in, std::size_t out,
               Rng& rng, bool bias) {
  w_ = &store.add(name + ".w", xavier_uniform(in, out, rng));
  if (bias) b_ = &store.add(name + ".b", Tensor({1, out}));
}

Var Linear::operator()(Var x) const {
  Tape& t = *x.tape();
  Var y = matmul(x, t.param(*w_));
  return b_ ? add(y, t.param(*b_)) : y;
}

Var gcn_layer(Var h, Var norm_adj, Var w) {
  if (norm_adj.rows() != norm_adj.cols() || norm_adj.rows() != h.rows()) {
    throw ShapeError("gcn_layer: adjacency " + shape_string(norm_adj.shape()) +
                     " does not match node states " + shape_string(h.shape()));
  }
  return relu(matmul(matmul(norm_adj, h), w));
}

LstmCell::LstmCell(ParamStore& store, const std::string& name, std::size_t input,
                   std::size_t hidden, Rng& rng)
    : hidden_(hidden) {
  wx_ = &store.add(name + ".wx", xavier_uniform(input, 4 * hidden, rng));
  wh_ = &store.add(name + ".wh", xavier_uniform(hidden, 4 * hidden, rng));
  b_ = &store.add(name + ".b", Tensor({1, 4 * hidden}));
}

LstmState LstmCell::operator()(Var x, LstmState state) const {
  Tape& t = *x.tape();
  if (state.h.cols() != hidden_ || state.c.cols() != hidden_ || state.h.rows() != x.rows() ||
      state.c.rows() != x.rows()) {
    throw ShapeError("lstm_cell: state " + shape_string(state.h.shape()) + "/" +
                     shape_string(state.c.shape()) + " incompatible with input " +
                     shape_string(x.shape()) + " and hidden " + std::to_string(hidden_));
  }
  Var gates = add(add(matmul(x, t.param(*wx_)), matmul(state.h, t.param(*wh_))), t.param(*b_));
  Var i = sigmoid(slice_cols(gates, 0, hidden_));
  Var f = sigmoid(slice_cols(gates, hidden_, hidden_));
  Var g = tanh(slice_cols(gates, 2 * hidden_, hidden_));
  Var o = sigmoid(slice_cols(gates, 3 * hidden_, hidden_));
  Var c = add(mul(f, state.c), mul(i, g));
  Var h = mul(o, tanh(c));
  return {h, c};
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, std::size_t dim) {
  gain_ = &store.add(name + ".gain", Tensor({1, dim}, 1.0));
  bias_ = &store.add(name + ".bias", Tensor({1, dim}));
}

Var LayerNorm::operator()(Var x) const {
  Tape& t = *x.tape();
  return layer_norm(x, t.param(*gain_), t.param(*bias_));
}

AttnPooling::AttnPooling(ParamStore& store, const std::string& name, std::size_t dim, Rng& rng) {
  wa_ = &store.add(name + ".wa", xavier_uniform(dim, dim, rng));
  u_ = &store.add(name + ".u", xavier_uniform(dim, 1, rng));
}

Var AttnPooling::operator()(Var h, Var* weights_out) const {
  if (h.rows() == 0) throw ShapeError("attn_pooling: no nodes");
  Tape& t = *h.tape();
  Var logits = transpose(matmul(tanh(matmul(h, t.param(*wa_))), t.param(*u_)));  // [1 x n]
  Var weights = softmax_rows(logits);
  if (weights_out) *weights_out = weights;
  return matmul(weights, h);
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name,
                                       std::size_t dim, std::size_t heads, Rng& rng)
    : heads_(heads), dim_(dim) {
  if (heads == 0 || dim % heads != 0) {
    throw UsageError("attention: head count " + std::to_string(heads) +
                     " does not divide dimension " + std::to_string(dim));
  }
  q_ = Linear(store, name + ".q", dim, dim, rng);
  k_ = Linear(store, name + ".k", dim, dim, rng);
  v_ = Linear(store, name + ".v", dim, dim, rng);
  o_ = Linear(store, name + ".o", dim, dim, rng);
}

Var MultiHeadAttention::operator()(Var queries, Var memory, const Mask& mask,
                                   std::vector<Tensor>* probs_out) const {
  const std::size_t tq = queries.rows(), tk = memory.rows();
  if (!mask.empty() && mask.size() != tq * tk) {
    throw ShapeError("attention: mask has " + std::to_string(mask.size()) + " entries, expected " +
                     std::to_string(tq) + "x" + std::to_string(tk));
  }
  Var q = q_(queries), k = k_(memory), v = v_(memory);
  const std::size_t dk = dim_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<Var> outs;
  outs.reserve(heads_);
  if (probs_out) probs_out->clear();
  for (std::size_t hd = 0; hd < heads_; ++hd) {
    Var qh = slice_cols(q, hd * dk, dk);
    Var kh = slice_cols(k, hd * dk, dk);
    Var vh = slice_cols(v, hd * dk, dk);
    Var probs = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt), mask);
    if (probs_out) probs_out->push_back(probs.value());
    outs.push_back(matmul(probs, vh));
  }
  return o_(heads_ == 1 ? outs.front() : concat_cols(outs));
}

FeedForward::FeedForward(ParamStore& store, const std::string& name, std::size_t dim,
                         std::size_t inner, Rng& rng)
    : in_(store, name + ".in", dim, inner, rng), out_(store, name + ".out", inner, dim, rng) {}

Var FeedForward::operator()(Var x) const { return out_(relu(in_(x))); }

EncoderBlock::EncoderBlock(ParamStore& store, const std::string& name, std::size_t dim,
                           std::size_t heads, std::size_t inner, Rng& rng)
    : ln_attn_(store, name + ".ln_attn", dim),
      ln_ffn_(store, name + ".ln_ffn", dim),
      attn_(store, name + ".attn", dim, heads, rng),
      ffn_(store, name + ".ffn", dim, inner, rng) {}

Var EncoderBlock::operator()(Var x, const Mask& mask) const {
  Var n = ln_attn_(x);
  x = add(x, attn_(n, n, mask));
  return add(x, ffn_(ln_ffn_(x)));
}

DecoderBlock::DecoderBlock(ParamStore& store, const std::string& name, std::size_t dim,
                           std::size_t heads, std::size_t inner, Rng& rng)
    : ln_self_(store, name + ".ln_self", dim),
      ln_cross_(store, name + ".ln_cross", dim),
      ln_ffn_(store, name + ".ln_ffn", dim),
      self_(store, name + ".self", dim, heads, rng),
      cross_(store, name + ".cross", dim, heads, rng),
      ffn_(store, name + ".ffn", dim, inner, rng) {}

Var DecoderBlock::operator()(Var x, Var memory, const Mask& self_mask,
                             const Mask& cross_mask) const {
  Var n = ln_self_(x);
  x = add(x, self_(n, n, self_mask));
  x = add(x, cross_(ln_cross_(x), memory, cross_mask));
  return add(x, ffn_(ln_ffn_(x)));
}

Mask causal_mask(std::size_t n) {
  Mask m(n * n, 0);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c <= r; ++c) m[r * n + c] = 1;
  }
  return m;
}

}  // namespace qvad
