#include <doctest.h>

#include "helpers.hpp"
#include "pfseg/ops.hpp"
#include "pfseg/tensor.hpp"

using namespace pfseg;

TEST_CASE("factories and shape bookkeeping") {
  auto t = Tensor<float>::zeros({2, 3, 4, 5});
  CHECK(t.size() == 120);
  CHECK(t.rank() == 4);
  CHECK(t.extent(3) == 5);
  CHECK(!t.requires_grad());

  auto f = Tensor<float>::full({3}, 2.5f);
  for (float v : f.data()) CHECK(v == 2.5f);

  auto d = Tensor<double>::from_data({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(d.value() == 1.0);
  CHECK_THROWS_AS(Tensor<double>::from_data({2, 2}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("at4 follows x-fastest channel-major layout") {
  auto t = Tensor<float>::zeros({2, 3, 4, 5});  // C,W,H,D
  t.at4(1, 2, 3, 4) = 7.0f;
  // idx = ((c*D + z)*H + y)*W + x = ((1*5+4)*4+3)*3 + 2
  CHECK(t.data()[((1 * 5 + 4) * 4 + 3) * 3 + 2] == 7.0f);
}

TEST_CASE("copies are shallow handles over one node") {
  auto a = Tensor<float>::full({4}, 1.0f);
  Tensor<float> b = a;
  b.data()[2] = 9.0f;
  CHECK(a.data()[2] == 9.0f);
  CHECK(a.id() == b.id());
}

TEST_CASE("backward of sum yields ones and accumulates across calls") {
  auto x = Tensor<double>::full({2, 2, 2, 2}, 3.0, true);
  auto loss = reduce_sum(x);
  backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);
  backward(loss);
  for (double g : x.grad()) CHECK(g == 2.0);  // accumulation contract
  x.zero_grad();
  backward(loss);
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  auto x = Tensor<double>::full({3}, 1.0, true);
  auto y = square(x);
  CHECK_THROWS_AS(backward(y), ValidationError);
}

TEST_CASE("grad of reduce_sum(square(x)) equals 2x exactly") {
  Rng rng(7);
  auto x = pfseg_test::rand_tensor({3, 2, 2, 2}, rng);
  auto loss = reduce_sum(square(x));
  backward(loss);
  for (std::int64_t i = 0; i < x.size(); ++i)
    CHECK(x.grad()[static_cast<std::size_t>(i)] ==
          doctest::Approx(2.0 * x.data()[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("graph ordering puts parents before children") {
  auto x = Tensor<double>::full({2}, 1.0, true);
  auto y = square(x);
  auto z = reduce_sum(y);
  auto g = Graph<double>::from_root(z);
  REQUIRE(g.nodes.size() == 3);
  CHECK(g.nodes[0]->id == x.id());
  CHECK(g.nodes[1]->id == y.id());
  CHECK(g.nodes[2]->id == z.id());
}

TEST_CASE("NoGradGuard suppresses graph recording") {
  auto x = Tensor<double>::full({2}, 2.0, true);
  {
    NoGradGuard ng;
    auto y = square(x);
    CHECK(!y.requires_grad());
    CHECK(y.node()->parents.empty());
    CHECK(y.node()->is_leaf());
  }
  auto y2 = square(x);
  CHECK(y2.requires_grad());
  CHECK(y2.node()->parents.size() == 1);
}

TEST_CASE("constants contribute no gradient buffers") {
  auto x = Tensor<double>::full({3}, 2.0, true);
  auto c = Tensor<double>::full({3}, 5.0, false);
  auto loss = reduce_sum(mul(x, c));
  backward(loss);
  CHECK(x.has_grad());
  CHECK(!c.has_grad());
  for (double g : x.grad()) CHECK(g == 5.0);
}
