#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qvad/tape.h"

namespace qvad {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Parameters whose gradient
// buffer is empty are treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config);

  // Applies one update from the accumulated gradients and clears them. Throws
  // NumericError, leaving parameters and state untouched, if any gradient
  // entry is non-finite.
  void step();

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  const Tensor& first_moment(std::size_t i) const { return m_[i]; }
  const Tensor& second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamConfig config_;
  std::int64_t step_ = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<param>[index]" of the largest error
};

struct GradCheckOptions {
  double step = 1e-5;
  // Per-parameter cap on checked coordinates; larger tensors are sampled.
  std::size_t max_coordinates = 64;
  // Denominator floor so that near-zero gradients compare absolutely.
  double floor = 1e-6;
  std::uint64_t seed = 7;
};

// Compares tape gradients of a scalar computation against central
// differences (f(x+h) - f(x-h)) / 2h for sampled coordinates of every given
// parameter. Error per coordinate is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const std::function<Var(Tape&)>& f,
                           const std::vector<Parameter*>& params,
                           const GradCheckOptions& options = {});

}  // namespace qvad
