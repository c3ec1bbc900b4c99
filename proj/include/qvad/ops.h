#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "qvad/tape.h"

namespace qvad {

// Attention-style mask over a [rows x cols] matrix: 1 keeps, 0 masks.
using Mask = std::vector<std::uint8_t>;

// Elementwise ops. The second operand of add/sub/mul may also be a [1 x c]
// row broadcast over every row of the first.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var exp(Var a);
Var log(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }

Var matmul(Var a, Var b);
Var transpose(Var a);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
// out[i] = table[ids[i]]; backward scatters into the table gradient.
Var gather_rows(Var table, std::span<const std::uint32_t> ids);

Var sum(Var a);
Var mean(Var a);
// Element (r, c) as a [1 x 1] scalar.
Var pick(Var a, std::size_t r, std::size_t c);

// Row-wise softmax. Masked entries get exactly zero probability; a fully
// masked row yields all zeros.
Var softmax_rows(Var a, const Mask& mask = {});
// Row-wise log-softmax over unmasked entries; masked entries are set to 0
// and receive no gradient.
Var log_softmax_rows(Var a, const Mask& mask = {});

// Per-row normalisation to zero mean / unit variance, then gain and bias
// ([1 x c] each).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// Mean over non-ignored rows of -log softmax(logits)[row, target[row]].
// Rows whose target equals ignore_index are masked out.
Var cross_entropy(Var logits, std::span<const std::uint32_t> targets,
                  std::int64_t ignore_index = -1);

// Plain (non-differentiable) helpers.
Tensor softmax_rows(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace qvad
