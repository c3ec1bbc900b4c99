#include "qvad/ops.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "qvad/error.h"

namespace qvad {
namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMajor>;
using Map = Eigen::Map<RowMajor>;

MapC view(const Tensor& t) {
  return MapC(t.data(), static_cast<Eigen::Index>(t.rows()),
              static_cast<Eigen::Index>(t.cols()));
}
Map view(Tensor& t) {
  return Map(t.data(), static_cast<Eigen::Index>(t.rows()),
             static_cast<Eigen::Index>(t.cols()));
}

Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || a.tape() != b.tape()) {
    throw ShapeError(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape();
}

Shape mat_shape(std::size_t r, std::size_t c) { return {r, c}; }

enum class Broadcast { kNone, kRow };

Broadcast check_binary(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (b.rows() == 1 && b.cols() == a.cols() && b.size() == a.cols()) return Broadcast::kRow;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                   shape_string(b.shape()));
}

// Adds g (shaped like the op output) into b's gradient, reducing over rows
// when b was broadcast.
void accumulate_broadcast(Tape& t, Var b, Broadcast mode, const Tensor& g) {
  Tensor& gb = t.grad_buffer(b);
  if (mode == Broadcast::kNone) {
    gb.add_inplace(g);
    return;
  }
  const std::size_t rows = g.rows(), cols = g.cols();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) gb[c] += g(r, c);
  }
}

// Elementwise op whose local derivative is evaluated during the forward pass.
template <class F, class D>
Var unary(Var a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  Tensor dy(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y[i] = f(x[i]);
    dy[i] = dfdx(x[i], y[i]);
  }
  return a.tape()->push(std::move(y), {a}, [a, dy = std::move(dy)](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dy[i];
  });
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = same_tape(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Broadcast mode = check_binary(av, bv, "add");
  Tensor y = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] += mode == Broadcast::kNone ? bv[i] : bv[i % cols];
  }
  return t.push(std::move(y), {a, b}, [a, b, mode](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.grad_buffer(a).add_inplace(g);
    if (tp.requires_grad(b)) accumulate_broadcast(tp, b, mode, g);
  });
}

Var sub(Var a, Var b) {
  Tape& t = same_tape(a, b, "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Broadcast mode = check_binary(av, bv, "sub");
  Tensor y = av;
  const std::size_t cols = av.cols();
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] -= mode == Broadcast::kNone ? bv[i] : bv[i % cols];
  }
  return t.push(std::move(y), {a, b}, [a, b, mode](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.grad_buffer(a).add_inplace(g);
    if (tp.requires_grad(b)) {
      Tensor neg = g;
      for (double& v : neg.values()) v = -v;
      accumulate_broadcast(tp, b, mode, neg);
    }
  });
}

Var mul(Var a, Var b) {
  Tape& t = same_tape(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Broadcast mode = check_binary(av, bv, "mul");
  const std::size_t cols = av.cols();
  Tensor y = av;
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] *= mode == Broadcast::kNone ? bv[i] : bv[i % cols];
  }
  return t.push(std::move(y), {a, b}, [a, b, mode, cols](Tape& tp, const Tensor& g) {
    const Tensor& x = tp.value(a);
    const Tensor& z = tp.value(b);
    auto bat = [&](std::size_t i) { return mode == Broadcast::kNone ? z[i] : z[i % cols]; };
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad_buffer(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bat(i);
    }
    if (tp.requires_grad(b)) {
      Tensor gb(g.shape());
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * x[i];
      accumulate_broadcast(tp, b, mode, gb);
    }
  });
}

Var scale(Var a, double s) {
  Tensor y = a.value();
  for (double& v : y.values()) v *= s;
  return a.tape()->push(std::move(y), {a}, [a, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var tanh(Var a) {
  return unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(
      a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(
      a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(
      a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor y(mat_shape(a.rows(), b.cols()));
  view(y).noalias() = view(a) * view(b);
  return y;
}

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b, "matmul");
  Tensor y = matmul(a.value(), b.value());
  return t.push(std::move(y), {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) {
      view(tp.grad_buffer(a)).noalias() += view(g) * view(tp.value(b)).transpose();
    }
    if (tp.requires_grad(b)) {
      view(tp.grad_buffer(b)).noalias() += view(tp.value(a)).transpose() * view(g);
    }
  });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  Tensor y(mat_shape(x.cols(), x.rows()));
  view(y) = view(x).transpose();
  return a.tape()->push(std::move(y), {a}, [a](Tape& t, const Tensor& g) {
    view(t.grad_buffer(a)) += view(g).transpose();
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  for (Var p : parts) {
    if (p.tape() != parts.front().tape()) throw ShapeError("concat_cols: mixed tapes");
    if (p.rows() != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_string(parts.front().shape()) +
                       " vs " + shape_string(p.shape()));
    }
    total += p.cols();
  }
  Tensor y(mat_shape(rows, total));
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data() + r * v.cols(), v.cols(), y.data() + r * total + off);
    }
    off += v.cols();
  }
  return parts.front().tape()->push(std::move(y), parts, [parts, total](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (Var p : parts) {
      const std::size_t c = t.value(p).cols();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad_buffer(p);
        for (std::size_t r = 0; r < gp.rows(); ++r) {
          for (std::size_t j = 0; j < c; ++j) gp(r, j) += g[r * total + offset + j];
        }
      }
      offset += c;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t total = 0;
  for (Var p : parts) {
    if (p.tape() != parts.front().tape()) throw ShapeError("concat_rows: mixed tapes");
    if (p.cols() != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_string(parts.front().shape()) +
                       " vs " + shape_string(p.shape()));
    }
    total += p.rows();
  }
  Tensor y(mat_shape(total, cols));
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    std::copy_n(v.data(), v.size(), y.data() + off);
    off += v.size();
  }
  return parts.front().tape()->push(std::move(y), parts, [parts](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (Var p : parts) {
      const std::size_t n = t.value(p).size();
      if (t.requires_grad(p)) {
        Tensor& gp = t.grad_buffer(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  if (begin + count > x.rows()) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + shape_string(x.shape()));
  }
  const std::size_t cols = x.cols();
  Tensor y(mat_shape(count, cols));
  std::copy_n(x.data() + begin * cols, count * cols, y.data());
  return a.tape()->push(std::move(y), {a}, [a, begin, cols](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * cols + i] += g[i];
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& x = a.value();
  if (begin + count > x.cols()) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") out of " + shape_string(x.shape()));
  }
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y(mat_shape(rows, count));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(x.data() + r * cols + begin, count, y.data() + r * count);
  }
  return a.tape()->push(std::move(y), {a}, [a, begin, count, cols](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t j = 0; j < count; ++j) ga[r * cols + begin + j] += g(r, j);
    }
  });
}

Var gather_rows(Var table, std::span<const std::uint32_t> ids) {
  const Tensor& x = table.value();
  const std::size_t cols = x.cols();
  Tensor y(mat_shape(ids.size(), cols));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= x.rows()) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " out of " +
                       shape_string(x.shape()));
    }
    std::copy_n(x.data() + ids[i] * cols, cols, y.data() + i * cols);
  }
  std::vector<std::uint32_t> idv(ids.begin(), ids.end());
  return table.tape()->push(std::move(y), {table},
                            [table, idv = std::move(idv), cols](Tape& t, const Tensor& g) {
                              Tensor& gt = t.grad_buffer(table);
                              for (std::size_t i = 0; i < idv.size(); ++i) {
                                for (std::size_t j = 0; j < cols; ++j) {
                                  gt[idv[i] * cols + j] += g[i * cols + j];
                                }
                              }
                            });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape()->push(Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    for (double& v : ga.values()) v += g[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var pick(Var a, std::size_t r, std::size_t c) {
  const Tensor& x = a.value();
  if (r >= x.rows() || c >= x.cols()) {
    throw ShapeError("pick: index out of " + shape_string(x.shape()));
  }
  const std::size_t idx = r * x.cols() + c;
  return a.tape()->push(Tensor::scalar(x[idx]), {a}, [a, idx](Tape& t, const Tensor& g) {
    t.grad_buffer(a)[idx] += g[0];
  });
}

namespace {

void check_mask(const Tensor& x, const Mask& mask, const char* op) {
  if (!mask.empty() && mask.size() != x.size()) {
    throw ShapeError(std::string(op) + ": mask of " + std::to_string(mask.size()) +
                     " entries does not match " + shape_string(x.shape()));
  }
}

Tensor masked_softmax(const Tensor& x, const Mask& mask) {
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      if (mask.empty() || mask[i]) mx = std::max(mx, x[i]);
    }
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      if (mask.empty() || mask[i]) {
        y[i] = std::exp(x[i] - mx);
        z += y[i];
      }
    }
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] /= z;
  }
  return y;
}

}  // namespace

Tensor softmax_rows(const Tensor& a) { return masked_softmax(a, {}); }

Var softmax_rows(Var a, const Mask& mask) {
  check_mask(a.value(), mask, "softmax_rows");
  Tensor y = masked_softmax(a.value(), mask);
  Tensor probs = y;
  return a.tape()->push(std::move(y), {a}, [a, probs = std::move(probs)](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(a);
    const std::size_t rows = probs.rows(), cols = probs.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += g(r, c) * probs(r, c);
      for (std::size_t c = 0; c < cols; ++c) ga(r, c) += probs(r, c) * (g(r, c) - dot);
    }
  });
}

Var log_softmax_rows(Var a, const Mask& mask) {
  const Tensor& x = a.value();
  check_mask(x, mask, "log_softmax_rows");
  Tensor probs = masked_softmax(x, mask);
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      if (mask.empty() || mask[i]) mx = std::max(mx, x[i]);
    }
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      if (mask.empty() || mask[i]) z += std::exp(x[i] - mx);
    }
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      if (mask.empty() || mask[i]) y[i] = x[i] - lse;
    }
  }
  return a.tape()->push(std::move(y), {a},
                        [a, probs = std::move(probs), mask](Tape& t, const Tensor& g) {
                          Tensor& ga = t.grad_buffer(a);
                          const std::size_t rows = probs.rows(), cols = probs.cols();
                          for (std::size_t r = 0; r < rows; ++r) {
                            double gs = 0.0;
                            for (std::size_t c = 0; c < cols; ++c) {
                              const std::size_t i = r * cols + c;
                              if (mask.empty() || mask[i]) gs += g[i];
                            }
                            for (std::size_t c = 0; c < cols; ++c) {
                              const std::size_t i = r * cols + c;
                              if (mask.empty() || mask[i]) ga[i] += g[i] - probs[i] * gs;
                            }
                          }
                        });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Tape& t = same_tape(x, gain, "layer_norm");
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gain.value().size() != cols || bias.value().size() != cols) {
    throw ShapeError("layer_norm: gain/bias " + shape_string(gain.shape()) + " vs input " +
                     shape_string(xv.shape()));
  }
  Tensor xhat(xv.shape());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += xv(r, c);
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double d = xv(r, c) - mu;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) xhat(r, c) = (xv(r, c) - mu) * inv_std[r];
  }
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) y(r, c) = xhat(r, c) * gv[c] + bv[c];
  }
  return t.push(std::move(y), {x, gain, bias},
                [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Tape& tp, const Tensor& g) {
                  const std::size_t rows = xhat.rows(), cols = xhat.cols();
                  const Tensor& gv = tp.value(gain);
                  if (tp.requires_grad(gain)) {
                    Tensor& gg = tp.grad_buffer(gain);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < cols; ++c) gg[c] += g(r, c) * xhat(r, c);
                    }
                  }
                  if (tp.requires_grad(bias)) {
                    Tensor& gb = tp.grad_buffer(bias);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t c = 0; c < cols; ++c) gb[c] += g(r, c);
                    }
                  }
                  if (tp.requires_grad(x)) {
                    Tensor& gx = tp.grad_buffer(x);
                    const double n = static_cast<double>(cols);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double dxh = g(r, c) * gv[c];
                        s1 += dxh;
                        s2 += dxh * xhat(r, c);
                      }
                      for (std::size_t c = 0; c < cols; ++c) {
                        const double dxh = g(r, c) * gv[c];
                        gx(r, c) += inv_std[r] * (dxh - s1 / n - xhat(r, c) * s2 / n);
                      }
                    }
                  }
                });
}

Var cross_entropy(Var logits, std::span<const std::uint32_t> targets, std::int64_t ignore_index) {
  const Tensor& x = logits.value();
  const std::size_t rows = x.rows(), cols = x.cols();
  if (targets.size() != rows) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     shape_string(x.shape()) + " logits");
  }
  Tensor probs = masked_softmax(x, {});
  double loss = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (static_cast<std::int64_t>(targets[r]) == ignore_index) continue;
    if (targets[r] >= cols) {
      throw ShapeError("cross_entropy: target id " + std::to_string(targets[r]) +
                       " >= class count " + std::to_string(cols));
    }
    // log p computed from max-subtracted logits.
    double mx = x(r, 0);
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, x(r, c));
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(x(r, c) - mx);
    loss -= x(r, targets[r]) - mx - std::log(z);
    ++count;
  }
  if (count == 0) throw ShapeError("cross_entropy: every target is ignored");
  loss /= static_cast<double>(count);
  std::vector<std::uint32_t> tv(targets.begin(), targets.end());
  return logits.tape()->push(
      Tensor::scalar(loss), {logits},
      [logits, probs = std::move(probs), tv = std::move(tv), ignore_index, count](
          Tape& t, const Tensor& g) {
        Tensor& gl = t.grad_buffer(logits);
        const double w = g[0] / static_cast<double>(count);
        const std::size_t cols = probs.cols();
        for (std::size_t r = 0; r < tv.size(); ++r) {
          if (static_cast<std::int64_t>(tv[r]) == ignore_index) continue;
          for (std::size_t c = 0; c < cols; ++c) gl(r, c) += w * probs(r, c);
          gl(r, tv[r]) -= w;
        }
      });
}

}  // namespace qvad
