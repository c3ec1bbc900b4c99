#include "qvad/generation.h"

#include <algorithm>
#include <cmath>

#include "qvad/error.h"

namespace qvad {

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  Tensor pe({length, dim});
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double rate =
          std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double angle = static_cast<double>(p) / rate;
      pe(p, i) = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

GenerationModule::GenerationModule(ParamStore& store, const ModelConfig& config, Rng& rng)
    : max_len_(config.max_decode_length), vocab_(config.vocab_size) {
  const std::size_t emb = config.embedding_dim, hid = config.hidden_dim;
  word_emb_ = &store.add("gen.word_emb", uniform({config.vocab_size, emb}, 0.1, rng));
  type_emb_ = &store.add("gen.type_emb", uniform({kNodeTypeCount, emb}, 0.1, rng));
  gcn_ = GatedGcn(store, "gen.gcn", emb, hid, config.gcn_layers, false, rng);
  for (std::size_t l = 0; l < config.encoder_layers; ++l) {
    encoder_.emplace_back(store, "gen.enc" + std::to_string(l), hid, config.heads,
                          config.ffn_dim, rng);
  }
  enc_norm_ = LayerNorm(store, "gen.enc_norm", hid);
  dec_in_ = Linear(store, "gen.dec_in", emb, hid, rng);
  for (std::size_t l = 0; l < config.decoder_layers; ++l) {
    decoder_.emplace_back(store, "gen.dec" + std::to_string(l), hid, config.heads,
                          config.ffn_dim, rng);
  }
  dec_norm_ = LayerNorm(store, "gen.dec_norm", hid);
  out_ = Linear(store, "gen.out", hid, config.vocab_size, rng);
  positions_ = sinusoidal_positions(max_len_ + 2, emb);
}

Var GenerationModule::embed_nodes(Tape& tape, const SubGraph& sub) const {
  if (sub.size() == 0) throw DataError("generation: empty sub-graph");
  std::vector<std::uint32_t> types;
  types.reserve(sub.size());
  for (NodeType t : sub.node_types) {
    const auto v = static_cast<std::uint32_t>(t);
    if (v >= kNodeTypeCount) throw DataError("generation: unknown node type " + std::to_string(v));
    types.push_back(v);
  }
  return add(gather_rows(tape.param(*word_emb_), sub.node_ids),
             gather_rows(tape.param(*type_emb_), types));
}

EncodedGraph GenerationModule::encode_graph(Tape& tape, const SubGraph& sub) const {
  Var x = embed_nodes(tape, sub);
  Var h = gcn_(x, tape.constant(sub.norm_adj)).nodes;
  for (const auto& block : encoder_) h = block(h);
  return {enc_norm_(h), Mask(sub.size(), 1), sub.node_types};
}

Var GenerationModule::decoder_logits(const EncodedGraph& enc, std::span<const WordId> inputs) const {
  const std::size_t t = inputs.size();
  if (t == 0 || t > positions_.rows()) {
    throw DataError("decoder input length " + std::to_string(t) + " outside [1, " +
                    std::to_string(positions_.rows()) + "]");
  }
  Tape& tape = *enc.memories.tape();
  Tensor pe({t, positions_.cols()});
  std::copy_n(positions_.data(), pe.size(), pe.data());
  Var x = dec_in_(add(gather_rows(tape.param(*word_emb_), inputs), tape.constant(std::move(pe))));
  const Mask self_mask = causal_mask(t);
  const std::size_t n = enc.memories.rows();
  Mask cross_mask;
  cross_mask.reserve(t * n);
  for (std::size_t r = 0; r < t; ++r) {
    cross_mask.insert(cross_mask.end(), enc.source_mask.begin(), enc.source_mask.end());
  }
  for (const auto& block : decoder_) x = block(x, enc.memories, self_mask, cross_mask);
  return out_(dec_norm_(x));
}

DecodeOutput GenerationModule::decode_train(const EncodedGraph& enc,
                                            std::span<const WordId> target) const {
  if (target.size() < 2) throw DataError("decode_train: target needs BOS and EOS");
  if (target.size() > max_target_length()) {
    throw DataError("decode_train: target length " + std::to_string(target.size()) +
                    " exceeds " + std::to_string(max_target_length()));
  }
  Var logits = decoder_logits(enc, target.first(target.size() - 1));
  Var loss = cross_entropy(logits, target.subspan(1), kPad);
  return {logits, loss};
}

std::vector<double> GenerationModule::gold_probabilities(const SubGraph& sub,
                                                         std::span<const WordId> target) const {
  Tape tape(false);
  EncodedGraph enc = encode_graph(tape, sub);
  Var logits = decoder_logits(enc, target.first(target.size() - 1));
  const Tensor probs = softmax_rows(logits.value());
  std::vector<double> out;
  out.reserve(target.size() - 1);
  for (std::size_t r = 0; r + 1 < target.size(); ++r) out.push_back(probs(r, target[r + 1]));
  return out;
}

namespace {

// Log-softmax of the last row of a logits matrix.
std::vector<double> last_row_log_probs(const Tensor& logits) {
  const std::size_t v = logits.cols();
  const double* row = logits.data() + (logits.rows() - 1) * v;
  const double mx = *std::max_element(row, row + v);
  double z = 0.0;
  for (std::size_t i = 0; i < v; ++i) z += std::exp(row[i] - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(row, row + v);
  for (double& x : out) x -= lz;
  return out;
}

struct Hypothesis {
  std::vector<WordId> tokens;  // starts with BOS
  double log_prob = 0.0;
  bool finished = false;

  double normalized() const {
    return log_prob / static_cast<double>(std::max<std::size_t>(1, tokens.size() - 1));
  }
};

bool better(const Hypothesis& a, const Hypothesis& b) {
  if (a.normalized() != b.normalized()) return a.normalized() > b.normalized();
  return a.tokens < b.tokens;
}

}  // namespace

std::vector<WordId> GenerationModule::generate(const SubGraph& sub, DecodeMode mode,
                                               std::size_t beam_size, std::size_t max_len) const {
  max_len = std::min(max_len, max_len_);
  Tape tape(false);
  const EncodedGraph enc = encode_graph(tape, sub);
  const std::size_t width = mode == DecodeMode::kGreedy ? 1 : std::max<std::size_t>(1, beam_size);

  std::vector<Hypothesis> beam{{{kBos}, 0.0, false}};
  // Each step appends one token (content or EOS) to every live hypothesis.
  for (std::size_t step = 0; step <= max_len; ++step) {
    std::vector<Hypothesis> next;
    bool any_live = false;
    for (const Hypothesis& h : beam) {
      if (h.finished) {
        next.push_back(h);
        continue;
      }
      any_live = true;
      const auto lp = last_row_log_probs(decoder_logits(enc, h.tokens).value());
      std::vector<WordId> order(lp.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<WordId>(i);
      const std::size_t k = std::min(width, order.size());
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](WordId a, WordId b) { return lp[a] != lp[b] ? lp[a] > lp[b] : a < b; });
      for (std::size_t i = 0; i < k; ++i) {
        Hypothesis c = h;
        c.tokens.push_back(order[i]);
        c.log_prob += lp[order[i]];
        // The content budget is exhausted after max_len tokens.
        c.finished = order[i] == kEos || c.tokens.size() - 1 >= max_len;
        next.push_back(std::move(c));
      }
    }
    if (!any_live) break;
    if (width == 1) {
      // Greedy: keep the single expansion of the single hypothesis.
      beam = std::move(next);
    } else {
      std::sort(next.begin(), next.end(), better);
      if (next.size() > width) next.resize(width);
      beam = std::move(next);
    }
  }
  const Hypothesis& best =
      width == 1 ? beam.front() : *std::min_element(beam.begin(), beam.end(), better);
  std::vector<WordId> out;
  for (std::size_t i = 1; i < best.tokens.size(); ++i) {
    if (best.tokens[i] == kEos) break;
    out.push_back(best.tokens[i]);
  }
  return out;
}

}  // namespace qvad
