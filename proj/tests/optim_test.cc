#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "qvad/error.h"
#include "qvad/nn.h"
#include "qvad/optim.h"

using namespace qvad;

namespace {

Parameter make(const std::string& name, Tensor value, Tensor grad) {
  Parameter p{name, std::move(value), std::move(grad), true};
  return p;
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParamsAndDecaysState) {
  Parameter p = make("p", Tensor::matrix(1, 2, {1.0, -2.0}), Tensor::matrix(1, 2, {1.0, 1.0}));
  Adam adam({&p}, {});
  adam.step();
  const Tensor after_first = p.value;
  const double m1 = adam.first_moment(0)[0];
  const double v1 = adam.second_moment(0)[0];
  p.grad = Tensor({1, 2});
  adam.step();
  // The moments decay but a non-zero m still moves the parameter, so compare
  // against the closed form rather than equality.
  EXPECT_DOUBLE_EQ(adam.first_moment(0)[0], 0.9 * m1);
  EXPECT_DOUBLE_EQ(adam.second_moment(0)[0], 0.999 * v1);
  EXPECT_EQ(adam.steps(), 2);
  EXPECT_NE(p.value, after_first);
}

TEST(Adam, ZeroGradientFromFreshStateIsIdentity) {
  Parameter p = make("p", Tensor::matrix(1, 3, {1, 2, 3}), Tensor({1, 3}));
  const Tensor before = p.value;
  Adam adam({&p}, {});
  adam.step();
  EXPECT_EQ(p.value, before);
}

TEST(Adam, FirstStepWithUnitGradient) {
  const double lr = 0.01, eps = 1e-8;
  Parameter p = make("p", Tensor::matrix(1, 2, {0.5, -0.5}), Tensor({1, 2}, 1.0));
  Adam adam({&p}, {lr, 0.9, 0.999, eps});
  adam.step();
  EXPECT_NEAR(p.value[0], 0.5 - lr / (1.0 + eps), 1e-15);
  EXPECT_NEAR(p.value[1], -0.5 - lr / (1.0 + eps), 1e-15);
}

TEST(Adam, StepClearsGradients) {
  Parameter p = make("p", Tensor::matrix(1, 1, {0.0}), Tensor::matrix(1, 1, {3.0}));
  Adam adam({&p}, {});
  adam.step();
  for (double g : p.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Adam, ZeroLearningRateIsIdentity) {
  Rng rng(1);
  Parameter p = make("p", uniform({3, 3}, 1.0, rng), uniform({3, 3}, 1.0, rng));
  const Tensor before = p.value;
  Adam adam({&p}, {0.0, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 5; ++i) {
    p.grad = uniform({3, 3}, 1.0, rng);
    adam.step();
  }
  EXPECT_EQ(p.value, before);
}

TEST(Adam, NonFiniteGradientIsRefused) {
  Parameter a = make("a", Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(1, 2, {0.5, 0.5}));
  Parameter b = make("b", Tensor::matrix(1, 1, {3}),
                     Tensor::matrix(1, 1, {std::numeric_limits<double>::quiet_NaN()}));
  Adam adam({&a, &b}, {});
  EXPECT_THROW(adam.step(), NumericError);
  EXPECT_EQ(a.value, Tensor::matrix(1, 2, {1, 2}));
  EXPECT_EQ(adam.steps(), 0);
  EXPECT_EQ(adam.first_moment(0)[0], 0.0);
}

TEST(Adam, IdenticalRunsAreBitwiseIdentical) {
  auto run = [] {
    Rng rng(42);
    Parameter p = make("p", uniform({4, 4}, 1.0, rng), {});
    Adam adam({&p}, {});
    for (int i = 0; i < 20; ++i) {
      Tape tape;
      Var v = tape.param(p);
      tape.backward(sum(mul(tanh(v), v)));
      adam.step();
    }
    return p.value;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, MinimisesAQuadratic) {
  Parameter p = make("p", Tensor::matrix(1, 2, {3.0, -4.0}), {});
  Adam adam({&p}, {0.05, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 2000; ++i) {
    Tape tape;
    Var v = tape.param(p);
    tape.backward(sum(mul(v, v)));
    adam.step();
  }
  EXPECT_LT(std::abs(p.value[0]), 1e-2);
  EXPECT_LT(std::abs(p.value[1]), 1e-2);
}

TEST(Adam, FrozenParameterStaysPut) {
  Parameter p = make("p", Tensor::matrix(1, 1, {1.0}), {});
  p.trainable = false;
  Adam adam({&p}, {});
  Tape tape;
  tape.backward(sum(mul(tape.param(p), tape.param(p))));
  adam.step();
  EXPECT_EQ(p.value[0], 1.0);
}
