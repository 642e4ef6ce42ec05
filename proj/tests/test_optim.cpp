#include <cmath>

#include "doctest.h"
#include "dibm/errors.hpp"
#include "dibm/optim.hpp"

using namespace dibm;

TEST_SUITE("optim") {

TEST_CASE("zero gradient without decay leaves parameters unchanged") {
  Parameter p("p", Tensor::matrix(1, 3, {0.5f, -2.0f, 7.0f}));
  AdamW opt({&p}, {.lr = 0.1f, .weight_decay = 0.0f});
  const Tensor before = p.value;
  for (int i = 0; i < 3; ++i) opt.step();
  CHECK(p.value.values()[0] == before[0]);
  CHECK(p.value.values()[1] == before[1]);
  CHECK(p.value.values()[2] == before[2]);
}

TEST_CASE("zero gradient with decay scales by one minus lr times decay") {
  Parameter p("p", Tensor::matrix(1, 2, {2.0f, -4.0f}));
  AdamW opt({&p}, {.lr = 0.1f, .weight_decay = 0.5f});
  opt.step();
  CHECK(p.value[0] == doctest::Approx(2.0 * 0.95).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(-4.0 * 0.95).epsilon(1e-6));
}

TEST_CASE("constant unit gradient follows the hand-computed trajectory") {
  // Reference values from a double-precision evaluation of the update rule.
  const double expected[] = {-0.09999999900000009, -0.19999999799999946, -0.2999999969999995};
  Parameter p("p", Tensor::scalar(0.0f));
  AdamW opt({&p}, {.lr = 0.1f, .weight_decay = 0.0f, .beta1 = 0.9f, .beta2 = 0.999f});
  for (double e : expected) {
    p.grad[0] = 1.0f;
    opt.step();
    CHECK(std::abs(p.value[0] - e) < 1e-6);
  }
  CHECK(opt.step_count() == 3);
}

TEST_CASE("varying gradients with decay follow the reference trajectory") {
  const double grads[] = {0.3, -1.2, 2.0, 0.05};
  const double expected[] = {1.4885000003333333, 1.4926065352094235, 1.4879541627045982,
                             1.48375489372286};
  Parameter p("p", Tensor::scalar(1.5f));
  AdamW opt({&p}, {.lr = 0.01f, .weight_decay = 0.1f});
  for (int t = 0; t < 4; ++t) {
    p.grad[0] = static_cast<float>(grads[t]);
    opt.step();
    CHECK(std::abs(p.value[0] - expected[t]) < 1e-6);
  }
}

TEST_CASE("missing gradient is a contract error") {
  Parameter p;
  p.name = "ghost";
  p.value = Tensor::scalar(1.0f);
  AdamW opt({&p}, {});
  CHECK_THROWS_AS(opt.step(), ContractError);
}

TEST_CASE("zero_grad clears every gradient") {
  Parameter a("a", Tensor::scalar(1.0f)), b("b", Tensor::matrix(1, 2, {1, 2}));
  a.grad[0] = 3.0f;
  b.grad[1] = -1.0f;
  AdamW opt({&a, &b}, {});
  opt.zero_grad();
  CHECK(a.grad[0] == 0.0f);
  CHECK(b.grad[1] == 0.0f);
}

}
