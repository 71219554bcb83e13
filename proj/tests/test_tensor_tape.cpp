#include <doctest.h>

#include "dmeta/tape.hpp"
#include "dmeta/tensor.hpp"
#include "oracles.hpp"

using dmeta::TapeD;
using dmeta::Tensor;
using dmeta::TensorD;

TEST_SUITE_BEGIN("tensor_tape");

TEST_CASE("tensor shape/data length invariant is enforced") {
  CHECK_THROWS_AS(Tensor::from({2, 3}, {1.0f, 2.0f}), std::invalid_argument);
  auto t = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(t.numel() == 4);
  CHECK_THROWS_AS(Tensor({-1, 3}), std::invalid_argument);
}

TEST_CASE("backward visits nodes in exact reverse of forward order") {
  TapeD t;
  std::vector<int> visits;
  t.set_visit_log(&visits);
  dmeta::RngStream rng(1);
  int x = t.leaf(oracle::random_tensor({2, 4}, rng), true);
  int a = t.relu(x);                       // id 1
  int b = t.softmax(a);                    // id 2
  int c = t.scale(b, 2.0);                 // id 3
  int loss = t.weighted_sum(c, TensorD({2, 4}, 1.0));  // id 4
  t.backward(loss);
  REQUIRE(visits.size() == 4);
  CHECK(visits[0] == loss);
  CHECK(visits[1] == c);
  CHECK(visits[2] == b);
  CHECK(visits[3] == a);
}

TEST_CASE("trainable leaves always end backward with a gradient") {
  TapeD t;
  dmeta::RngStream rng(2);
  int used = t.leaf(oracle::random_tensor({3}, rng), true);
  int unused = t.leaf(oracle::random_tensor({5}, rng), true);
  int frozen = t.leaf(oracle::random_tensor({3}, rng), false);
  int loss = t.weighted_sum(used, TensorD({3}, 1.0));
  t.backward(loss);
  CHECK(t.grad(used).numel() == 3);
  REQUIRE(t.grad(unused).numel() == 5);  // populated with zeros
  for (int i = 0; i < 5; ++i) CHECK(t.grad(unused)[i] == 0.0);
  CHECK(t.grad(frozen).data.empty());
}

TEST_CASE("flatten reshapes and routes gradient through") {
  TapeD t;
  dmeta::RngStream rng(3);
  auto x = oracle::random_tensor({2, 3, 2, 2}, rng);
  int xid = t.leaf(x, true);
  int f = t.flatten(xid);
  CHECK(t.value(f).shape == std::vector<int>{2, 12});
  auto probe = oracle::random_tensor({2, 12}, rng);
  int loss = t.weighted_sum(f, probe);
  t.backward(loss);
  for (std::int64_t i = 0; i < 24; ++i) CHECK(t.grad(xid)[i] == probe[i]);
}

TEST_CASE("ops with constant-only inputs skip gradient bookkeeping") {
  TapeD t;
  dmeta::RngStream rng(4);
  int x = t.constant(oracle::random_tensor({2, 3}, rng));
  int y = t.relu(x);
  CHECK_FALSE(t.needs_grad(y));
}

TEST_SUITE_END();
