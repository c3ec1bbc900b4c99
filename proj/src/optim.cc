#include "qvad/optim.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "qvad/error.h"

namespace qvad {

Adam::Adam(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step() {
  for (Parameter* p : params_) {
    if (!p->grad.empty() && !p->grad.all_finite()) {
      throw NumericError("adam: non-finite gradient in " + p->name);
    }
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter& p = *params_[k];
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    const bool has_grad = !p.grad.empty();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = has_grad ? p.grad[i] : 0.0;
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p.value[i] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
    p.grad = Tensor();
  }
}

GradCheckResult grad_check(const std::function<Var(Tape&)>& f,
                           const std::vector<Parameter*>& params,
                           const GradCheckOptions& options) {
  for (Parameter* p : params) p->grad = Tensor();
  {
    Tape tape;
    Var loss = f(tape);
    tape.backward(loss);
  }
  auto evaluate = [&f]() {
    Tape tape(false);
    return f(tape).value()[0];
  };

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  for (Parameter* p : params) {
    const Tensor analytic = p->grad.empty() ? Tensor(p->value.shape()) : p->grad;
    std::vector<std::size_t> coords(p->value.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (coords.size() > options.max_coordinates) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coordinates);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + options.step;
      const double fp = evaluate();
      p->value[i] = saved - options.step;
      const double fm = evaluate();
      p->value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * options.step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double err = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (result.worst.empty() || err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
    p->grad = Tensor();
  }
  return result;
}

}  // namespace qvad
