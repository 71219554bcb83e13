#include <doctest.h>

#include <cmath>

#include "dmeta/adam.hpp"
#include "dmeta/errors.hpp"
#include "dmeta/params.hpp"

using namespace dmeta;

namespace {

ParameterSet scalar_params(float value) {
  ParameterSet p;
  p.add({"w", ParamRole::ConvWeight, false, true, Tensor::from({1}, {value})});
  return p;
}

std::vector<Tensor> scalar_grad(float g) {
  std::vector<Tensor> grads(1);
  grads[0] = Tensor::from({1}, {g});
  return grads;
}

}  // namespace

TEST_SUITE_BEGIN("adam");

TEST_CASE("zero gradient leaves parameters unchanged") {
  ParameterSet p = scalar_params(1.25f);
  AdamState adam(p, AdamConfig{1e-3f, 0.0f, 0.999f, 1e-8f}, TrainScope::All);
  for (int i = 0; i < 5; ++i) adam.step(p, scalar_grad(0.0f));
  CHECK(p.item(0).tensor[0] == 1.25f);
}

TEST_CASE("first step with unit gradient moves by about lr") {
  // beta1=0, beta2=0.999, lr=1e-3, g=1: v_hat=1, step = lr/(1+eps)
  ParameterSet p = scalar_params(0.0f);
  AdamState adam(p, AdamConfig{1e-3f, 0.0f, 0.999f, 1e-8f}, TrainScope::All);
  adam.step(p, scalar_grad(1.0f));
  CHECK(p.item(0).tensor[0] == doctest::Approx(-1e-3).epsilon(1e-4));
}

TEST_CASE("identical seeds give bit-identical trajectories") {
  ParameterSet a = scalar_params(0.5f);
  ParameterSet b = scalar_params(0.5f);
  AdamState sa(a, AdamConfig{}, TrainScope::All);
  AdamState sb(b, AdamConfig{}, TrainScope::All);
  for (int i = 0; i < 20; ++i) {
    const float g = 0.1f * static_cast<float>(i % 3) - 0.05f;
    sa.step(a, scalar_grad(g));
    sb.step(b, scalar_grad(g));
  }
  CHECK(a.equals(b));
}

TEST_CASE("non-finite gradient raises a numeric error naming the parameter") {
  ParameterSet p = scalar_params(0.0f);
  AdamState adam(p, AdamConfig{}, TrainScope::All);
  try {
    adam.step(p, scalar_grad(std::nanf("")));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("w") != std::string::npos);
  }
}

TEST_CASE("momentum accumulates only when beta1 > 0") {
  ParameterSet p0 = scalar_params(0.0f);
  ParameterSet p9 = scalar_params(0.0f);
  AdamState s0(p0, AdamConfig{1e-3f, 0.0f, 0.999f, 1e-8f}, TrainScope::All);
  AdamState s9(p9, AdamConfig{1e-3f, 0.9f, 0.999f, 1e-8f}, TrainScope::All);
  // gradient flips sign; with momentum the second step still moves along
  // the first direction's average
  s0.step(p0, scalar_grad(1.0f));
  s9.step(p9, scalar_grad(1.0f));
  s0.step(p0, scalar_grad(-1.0f));
  s9.step(p9, scalar_grad(-1.0f));
  // beta1=0: second step fully reverses; beta1=0.9: barely moves back
  CHECK(p0.item(0).tensor[0] > p9.item(0).tensor[0]);
}

TEST_CASE("head-only scope ignores body items") {
  ParameterSet p;
  p.add({"conv.w", ParamRole::ConvWeight, false, true, Tensor::from({1}, {1.0f})});
  p.add({"fc.weight", ParamRole::FcWeight, true, true, Tensor::from({1}, {1.0f})});
  AdamState adam(p, AdamConfig{}, TrainScope::HeadOnly);
  std::vector<Tensor> grads(2);
  grads[1] = Tensor::from({1}, {1.0f});
  adam.step(p, grads);
  CHECK(p.item(0).tensor[0] == 1.0f);
  CHECK(p.item(1).tensor[0] < 1.0f);
}

TEST_SUITE_END();
