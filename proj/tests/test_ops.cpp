#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "pfseg/ops.hpp"
#include "pfseg/tensor.hpp"

using namespace pfseg;
using pfseg_test::gradcheck;
using pfseg_test::project;
using pfseg_test::rand_tensor;

TEST_CASE("conv3d identity kernel reproduces the input") {
  Rng rng(11);
  auto x = rand_tensor({1, 4, 4, 4}, rng, -1.0, 1.0, false);
  auto k = Tensor<double>::zeros({1, 1, 3, 3, 3});
  // center tap: kx=ky=kz=1
  k.data()[(((0 * 1 + 0) * 3 + 1) * 3 + 1) * 3 + 1] = 1.0;
  auto b = Tensor<double>::zeros({1});
  auto y = conv3d(x, k, b, 1, 1);
  REQUIRE(same_shape(y.shape(), x.shape()));
  for (std::int64_t i = 0; i < x.size(); ++i)
    CHECK(y.data()[static_cast<std::size_t>(i)] ==
          doctest::Approx(x.data()[static_cast<std::size_t>(i)]).epsilon(1e-14));
}

TEST_CASE("conv3d full-sum case: ones 2x2x2 against ones 2x2x2 kernel = 8") {
  auto x = Tensor<double>::full({1, 2, 2, 2}, 1.0);
  auto k = Tensor<double>::full({1, 1, 2, 2, 2}, 1.0);
  auto b = Tensor<double>::zeros({1});
  auto y = conv3d(x, k, b, 1, 0);
  REQUIRE(y.size() == 1);
  CHECK(y.value() == doctest::Approx(8.0).epsilon(1e-14));
}

TEST_CASE("conv3d output extents follow the floor formula") {
  auto x = Tensor<float>::zeros({2, 9, 7, 5});
  auto k = Tensor<float>::zeros({4, 2, 3, 3, 3});
  auto b = Tensor<float>::zeros({4});
  auto y = conv3d(x, k, b, 2, 1);
  CHECK(y.extent(0) == 4);
  CHECK(y.extent(1) == (9 + 2 - 3) / 2 + 1);
  CHECK(y.extent(2) == (7 + 2 - 3) / 2 + 1);
  CHECK(y.extent(3) == (5 + 2 - 3) / 2 + 1);
}

TEST_CASE("conv3d rejects channel mismatch naming both shapes") {
  auto x = Tensor<float>::zeros({2, 4, 4, 4});
  auto k = Tensor<float>::zeros({1, 3, 3, 3, 3});
  auto b = Tensor<float>::zeros({1});
  CHECK_THROWS_AS(conv3d(x, k, b, 1, 1), ShapeError);
  try {
    conv3d(x, k, b, 1, 1);
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,3,3,3,3]") != std::string::npos);
  }
}

TEST_CASE("conv3d gradients match finite differences") {
  Rng rng(23);
  auto x = rand_tensor({2, 3, 3, 3}, rng);
  auto k = rand_tensor({2, 2, 3, 3, 3}, rng);
  auto b = rand_tensor({2}, rng);

  SUBCASE("stride 1, padding 1") {
    auto w = rand_tensor({2, 3, 3, 3}, rng, -1.0, 1.0, false);
    gradcheck([&] { return project(conv3d(x, k, b, 1, 1), w); }, {x, k, b});
  }
  SUBCASE("stride 2, padding 1") {
    auto w = rand_tensor({2, 2, 2, 2}, rng, -1.0, 1.0, false);
    gradcheck([&] { return project(conv3d(x, k, b, 2, 1), w); }, {x, k, b});
  }
  SUBCASE("pointwise kernel, no padding") {
    auto k1 = rand_tensor({3, 2, 1, 1, 1}, rng);
    auto b1 = rand_tensor({3}, rng);
    auto w = rand_tensor({3, 3, 3, 3}, rng, -1.0, 1.0, false);
    gradcheck([&] { return project(conv3d(x, k1, b1, 1, 0), w); }, {x, k1, b1});
  }
}

TEST_CASE("upsample_trilinear of a constant volume is constant") {
  auto x = Tensor<double>::full({2, 3, 2, 2}, 0.7);
  auto y = upsample_trilinear(x, 2);
  REQUIRE(y.extent(1) == 6);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-14));
}

TEST_CASE("upsample_trilinear 1D-degenerate values (0,1) -> (0,0.25,0.75,1)") {
  auto x = Tensor<double>::from_data({1, 2, 1, 1}, {0.0, 1.0});
  auto y = upsample_trilinear(x, 2);
  REQUIRE(y.shape() == Shape{1, 4, 2, 2});
  const double want[4] = {0.0, 0.25, 0.75, 1.0};
  // degenerate axes only replicate, so every x-profile is the 1D answer
  for (std::int64_t zo = 0; zo < 2; ++zo)
    for (std::int64_t yo = 0; yo < 2; ++yo)
      for (std::int64_t xo = 0; xo < 4; ++xo)
        CHECK(y.at4(0, xo, yo, zo) ==
              doctest::Approx(want[xo]).epsilon(1e-14));
}

TEST_CASE("upsample_trilinear agrees with a scalar reference evaluation") {
  // Independent route: evaluate source coords directly per output voxel.
  Rng rng(31);
  auto x = rand_tensor({2, 3, 2, 4}, rng, 0.0, 1.0, false);
  const int f = 3;
  auto y = upsample_trilinear(x, f);
  const std::int64_t W = 3, H = 2, D = 4;
  auto clampi = [](std::int64_t v, std::int64_t hi) {
    return v < 0 ? 0 : (v > hi ? hi : v);
  };
  for (std::int64_t c = 0; c < 2; ++c)
    for (std::int64_t zo = 0; zo < D * f; ++zo)
      for (std::int64_t yo = 0; yo < H * f; ++yo)
        for (std::int64_t xo = 0; xo < W * f; ++xo) {
          auto axis = [&](std::int64_t o, std::int64_t n) {
            double s = (o + 0.5) / f - 0.5;
            double fl = std::floor(s);
            return std::tuple<std::int64_t, std::int64_t, double>(
                clampi(static_cast<std::int64_t>(fl), n - 1),
                clampi(static_cast<std::int64_t>(fl) + 1, n - 1), s - fl);
          };
          auto [x0, x1, wx] = axis(xo, W);
          auto [y0, y1, wy] = axis(yo, H);
          auto [z0, z1, wz] = axis(zo, D);
          double ref = 0.0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                double w = (dx ? wx : 1 - wx) * (dy ? wy : 1 - wy) * (dz ? wz : 1 - wz);
                ref += w * x.at4(c, dx ? x1 : x0, dy ? y1 : y0, dz ? z1 : z0);
              }
          CHECK(y.at4(c, xo, yo, zo) == doctest::Approx(ref).epsilon(1e-12));
        }
}

TEST_CASE("upsample_trilinear gradient matches finite differences") {
  Rng rng(37);
  auto x = rand_tensor({1, 3, 3, 2}, rng);
  auto w = rand_tensor({1, 6, 6, 4}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(upsample_trilinear(x, 2), w); }, {x});
}

TEST_CASE("upsample_trilinear rejects factor < 2") {
  auto x = Tensor<float>::zeros({1, 2, 2, 2});
  CHECK_THROWS_AS(upsample_trilinear(x, 1), ValidationError);
}

TEST_CASE("instance_norm normalizes each channel before affine") {
  Rng rng(41);
  auto x = rand_tensor({3, 4, 4, 4}, rng, -2.0, 5.0, false);
  auto g = Tensor<double>::full({3}, 1.0);
  auto b = Tensor<double>::zeros({3});
  auto y = instance_norm(x, g, b, 1e-9);
  const std::int64_t N = 64;
  for (std::int64_t c = 0; c < 3; ++c) {
    double m = 0.0, v = 0.0;
    for (std::int64_t i = 0; i < N; ++i)
      m += y.data()[static_cast<std::size_t>(c * N + i)];
    m /= N;
    for (std::int64_t i = 0; i < N; ++i) {
      double d = y.data()[static_cast<std::size_t>(c * N + i)] - m;
      v += d * d;
    }
    v /= N;
    CHECK(std::abs(m) < 1e-5);
    CHECK(std::abs(v - 1.0) < 1e-4);
  }
}

TEST_CASE("instance_norm of a constant channel returns beta") {
  auto x = Tensor<double>::full({2, 2, 2, 2}, 4.2);
  auto g = Tensor<double>::full({2}, 3.0);
  auto b = Tensor<double>::from_data({2}, {0.5, -1.5});
  auto y = instance_norm(x, g, b, 1e-5);
  for (std::int64_t i = 0; i < 8; ++i) {
    CHECK(y.data()[static_cast<std::size_t>(i)] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(y.data()[static_cast<std::size_t>(8 + i)] ==
          doctest::Approx(-1.5).epsilon(1e-9));
  }
}

TEST_CASE("instance_norm gradients match finite differences") {
  Rng rng(43);
  auto x = rand_tensor({2, 3, 2, 2}, rng);
  auto g = rand_tensor({2}, rng, 0.5, 1.5);
  auto b = rand_tensor({2}, rng);
  auto w = rand_tensor({2, 3, 2, 2}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(instance_norm(x, g, b, 1e-5), w); }, {x, g, b}, 1e-5,
            1e-5);
}

TEST_CASE("leaky_relu and sigmoid point values") {
  auto x = Tensor<double>::from_data({3}, {-1.0, 0.0, 2.0});
  auto y = leaky_relu(x, 0.01);
  CHECK(y.data()[0] == doctest::Approx(-0.01).epsilon(1e-14));
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == doctest::Approx(2.0).epsilon(1e-14));

  auto s = sigmoid(Tensor<double>::from_data({3}, {0.0, 100.0, -100.0}));
  CHECK(s.data()[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(s.data()[1] > 0.0);
  CHECK(s.data()[1] < 1.0);  // strictly inside (0,1) even at extremes
  CHECK(s.data()[2] > 0.0);
}

TEST_CASE("leaky_relu and sigmoid gradients match finite differences") {
  Rng rng(47);
  auto x = rand_tensor({2, 2, 2, 2}, rng);
  for (auto& v : x.data()) v += (v < 0 ? -0.2 : 0.2);  // keep clear of the kink
  auto w = rand_tensor({2, 2, 2, 2}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(leaky_relu(x, 0.01), w); }, {x});
  gradcheck([&] { return project(sigmoid(x), w); }, {x});
}

TEST_CASE("concat_channels shape, round trip, and gradient routing") {
  Rng rng(53);
  auto a = rand_tensor({2, 4, 4, 2}, rng);
  auto b = rand_tensor({3, 4, 4, 2}, rng);
  auto y = concat_channels(a, b);
  REQUIRE(y.shape() == Shape{5, 4, 4, 2});

  auto ra = slice_channels(y, 0, 2);
  auto rb = slice_channels(y, 2, 3);
  CHECK(ra.data() == a.data());  // bit-exact recovery
  CHECK(rb.data() == b.data());

  a.zero_grad();
  b.zero_grad();
  backward(reduce_sum(y));
  for (double g : a.grad()) CHECK(g == 1.0);
  for (double g : b.grad()) CHECK(g == 1.0);

  auto w = rand_tensor({5, 4, 4, 2}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(concat_channels(a, b), w); }, {a, b});

  auto c = Tensor<float>::zeros({1, 3, 4, 2});
  auto d = Tensor<float>::zeros({1, 4, 4, 2});
  CHECK_THROWS_AS(concat_channels(c, d), ShapeError);
}

TEST_CASE("slice_channels validates the channel range") {
  auto x = Tensor<float>::zeros({3, 2, 2, 2});
  CHECK_THROWS_AS(slice_channels(x, 2, 2), ValidationError);
  CHECK_THROWS_AS(slice_channels(x, -1, 1), ValidationError);
}

TEST_CASE("slice_channels gradient hits only the sliced range") {
  Rng rng(59);
  auto x = rand_tensor({3, 2, 2, 2}, rng);
  auto w = rand_tensor({1, 2, 2, 2}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(slice_channels(x, 1, 1), w); }, {x});
  x.zero_grad();
  backward(reduce_sum(slice_channels(x, 1, 1)));
  for (std::int64_t i = 0; i < 8; ++i) {
    CHECK(x.grad()[static_cast<std::size_t>(i)] == 0.0);
    CHECK(x.grad()[static_cast<std::size_t>(8 + i)] == 1.0);
    CHECK(x.grad()[static_cast<std::size_t>(16 + i)] == 0.0);
  }
}

TEST_CASE("max_pool2 takes window maxima and routes gradient to argmax") {
  auto x = Tensor<double>::zeros({1, 2, 2, 2}, true);
  for (std::int64_t i = 0; i < 8; ++i)
    x.data()[static_cast<std::size_t>(i)] = static_cast<double>(i);
  auto y = max_pool2(x);
  REQUIRE(y.size() == 1);
  CHECK(y.value() == 7.0);
  backward(reduce_sum(y));
  for (std::int64_t i = 0; i < 7; ++i)
    CHECK(x.grad()[static_cast<std::size_t>(i)] == 0.0);
  CHECK(x.grad()[7] == 1.0);

  CHECK_THROWS_AS(max_pool2(Tensor<double>::zeros({1, 3, 2, 2})), ShapeError);
}

TEST_CASE("max_pool2 gradient matches finite differences") {
  Rng rng(61);
  auto x = rand_tensor({2, 4, 4, 2}, rng);
  // stagger values so no window has near-ties that finite differences could flip
  for (std::size_t i = 0; i < x.data().size(); ++i)
    x.data()[i] += 1e-3 * static_cast<double>(i % 64);
  auto w = rand_tensor({2, 2, 2, 1}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(max_pool2(x), w); }, {x});
}

TEST_CASE("pointwise ops with scalar broadcast") {
  Rng rng(67);
  auto x = rand_tensor({2, 3, 2, 2}, rng);
  auto z = Tensor<double>::zeros({2, 3, 2, 2});
  auto m = mul(x, z);
  for (double v : m.data()) CHECK(v == 0.0);

  auto s = Tensor<double>::from_data({1}, {2.5}, true);
  auto y = mul(x, s);
  for (std::int64_t i = 0; i < x.size(); ++i)
    CHECK(y.data()[static_cast<std::size_t>(i)] ==
          doctest::Approx(2.5 * x.data()[static_cast<std::size_t>(i)]).epsilon(1e-14));

  auto w = rand_tensor({2, 3, 2, 2}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(mul(x, s), w); }, {x, s});
  gradcheck([&] { return project(add(s, x), w); }, {x, s});
  gradcheck([&] { return project(sub(x, s), w); }, {x, s});
  gradcheck([&] { return project(sub(s, x), w); }, {x, s});

  auto bad = Tensor<double>::zeros({2, 3, 2, 3});
  CHECK_THROWS_AS(add(x, bad), ShapeError);
}

TEST_CASE("square and scale") {
  Rng rng(71);
  auto x = rand_tensor({3, 2, 2, 2}, rng);
  auto w = rand_tensor({3, 2, 2, 2}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(square(x), w); }, {x});
  gradcheck([&] { return project(scale(x, -1.7), w); }, {x});
}

TEST_CASE("reduce_mean of a constant equals the constant") {
  auto x = Tensor<double>::full({4, 3, 2, 2}, 1.25);
  CHECK(reduce_mean(x).value() == doctest::Approx(1.25).epsilon(1e-14));
  Rng rng(73);
  auto y = rand_tensor({2, 2, 2, 2}, rng);
  gradcheck([&] { return reduce_mean(square(y)); }, {y});
}

TEST_CASE("matmul values and gradients") {
  auto I = Tensor<double>::from_data({2, 2}, {1, 0, 0, 1});
  auto A = Tensor<double>::from_data({2, 2}, {1, 2, 3, 4});
  auto y = matmul(I, A);
  CHECK(y.data() == A.data());

  auto r = Tensor<double>::from_data({1, 2}, {1, 2});
  auto c = Tensor<double>::from_data({2, 1}, {3, 4});
  CHECK(matmul(r, c).value() == doctest::Approx(11.0).epsilon(1e-14));

  Rng rng(79);
  auto a = rand_tensor({3, 4}, rng);
  auto b = rand_tensor({4, 2}, rng);
  auto w = rand_tensor({3, 2}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(matmul(a, b), w); }, {a, b});

  CHECK_THROWS_AS(matmul(a, Tensor<double>::zeros({3, 2})), ShapeError);
}

TEST_CASE("composite chain matches finite differences") {
  Rng rng(83);
  auto x = rand_tensor({2, 4, 4, 4}, rng);
  auto k = rand_tensor({3, 2, 3, 3, 3}, rng, -0.5, 0.5);
  auto b = rand_tensor({3}, rng);
  auto g = rand_tensor({3}, rng, 0.5, 1.5);
  auto bt = rand_tensor({3}, rng);
  auto loss_fn = [&] {
    auto h = conv3d(x, k, b, 1, 1);
    h = instance_norm(h, g, bt, 1e-5);
    h = leaky_relu(h, 0.01);
    return reduce_mean(h);
  };
  gradcheck(loss_fn, {x, k, b, g, bt}, 1e-5, 1e-4);
}

TEST_CASE("composite chain with pooling, upsampling, concat and sigmoid") {
  Rng rng(89);
  auto x = rand_tensor({2, 4, 4, 4}, rng);
  auto k = rand_tensor({2, 4, 1, 1, 1}, rng);
  auto b = rand_tensor({2}, rng);
  auto w = rand_tensor({2, 4, 4, 4}, rng, -1.0, 1.0, false);
  for (std::size_t i = 0; i < x.data().size(); ++i)
    x.data()[i] += 1e-3 * static_cast<double>(i % 97);  // de-tie pooling windows
  auto loss_fn = [&] {
    auto p = max_pool2(x);               // [2,2,2,2]
    auto u = upsample_trilinear(p, 2);   // [2,4,4,4]
    auto cat = concat_channels(u, x);    // [4,4,4,4]
    auto h = conv3d(cat, k, b, 1, 0);    // [2,4,4,4]
    return project(sigmoid(h), w);
  };
  gradcheck(loss_fn, {x, k, b}, 1e-5, 1e-4);
}

TEST_CASE("reciprocal values and gradient") {
  auto x = Tensor<double>::from_data({3}, {2.0, 0.5, -4.0});
  auto y = reciprocal(x);
  CHECK(y.data()[0] == doctest::Approx(0.5));
  CHECK(y.data()[1] == doctest::Approx(2.0));
  CHECK(y.data()[2] == doctest::Approx(-0.25));

  Rng rng(97);
  auto a = rand_tensor({2, 3}, rng, 0.5, 2.0);
  auto w = rand_tensor({2, 3}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(reciprocal(a), w); }, {a});
}

TEST_CASE("clamp limits values and gates the gradient") {
  auto x = Tensor<double>::from_data({5}, {-0.9, -0.4, 0.2, 0.8, 0.45}, true);
  auto y = clamp(x, -0.5, 0.5);
  CHECK(y.data()[0] == -0.5);
  CHECK(y.data()[1] == -0.4);
  CHECK(y.data()[3] == 0.5);

  auto s = reduce_sum(y);
  backward(s);
  CHECK(x.grad()[0] == 0.0);  // clamped low
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[3] == 0.0);  // clamped high
  CHECK(x.grad()[4] == 1.0);

  CHECK_THROWS_AS(clamp(x, 1.0, -1.0), ValidationError);

  auto w = Tensor<double>::from_data({5}, {0.3, -0.7, 1.1, 0.9, -0.2});
  gradcheck([&] { return project(clamp(x, -0.5, 0.5), w); }, {x});
}

TEST_CASE("log values, domain check, and gradient") {
  auto x = Tensor<double>::from_data({2}, {1.0, std::exp(1.0)});
  auto y = log(x);
  CHECK(y.data()[0] == doctest::Approx(0.0));
  CHECK(y.data()[1] == doctest::Approx(1.0));

  CHECK_THROWS_AS(log(Tensor<double>::from_data({2}, {0.5, 0.0})), ValidationError);
  CHECK_THROWS_AS(log(Tensor<double>::from_data({1}, {-1.0})), ValidationError);

  Rng rng(101);
  auto a = rand_tensor({2, 2, 2}, rng, 0.5, 2.0);
  auto w = rand_tensor({2, 2, 2}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(log(a), w); }, {a});
}

TEST_CASE("reshape relabels extents without moving data") {
  auto x = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto y = reshape(x, {3, 2});
  CHECK(y.shape() == Shape{3, 2});
  for (int i = 0; i < 6; ++i) CHECK(y.data()[i] == x.data()[i]);

  CHECK_THROWS_AS(reshape(x, {4, 2}), ShapeError);
  CHECK_THROWS_AS(reshape(x, {2, -3}), ShapeError);

  Rng rng(103);
  auto w = rand_tensor({6}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(reshape(x, {6}), w); }, {x});
}

TEST_CASE("transpose2 values, involution, and gradient") {
  auto x = Tensor<double>::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  auto y = transpose2(x);
  CHECK(y.shape() == Shape{3, 2});
  CHECK(y.data()[0] == 1);
  CHECK(y.data()[1] == 4);
  CHECK(y.data()[2] == 2);
  CHECK(y.data()[5] == 6);

  auto z = transpose2(y);
  for (int i = 0; i < 6; ++i) CHECK(z.data()[i] == x.data()[i]);

  CHECK_THROWS_AS(transpose2(Tensor<double>::zeros({2, 2, 2})), ShapeError);

  Rng rng(107);
  auto w = rand_tensor({3, 2}, rng, -1.0, 1.0, false);
  gradcheck([&] { return project(transpose2(x), w); }, {x});
}

TEST_CASE("gram chain reshape-transpose-matmul matches finite differences") {
  Rng rng(109);
  auto x = rand_tensor({2, 2, 2, 2}, rng);
  auto loss_fn = [&] {
    auto m = reshape(x, {2, 8});
    auto g = matmul(m, transpose2(m));
    return reduce_sum(square(g));
  };
  gradcheck(loss_fn, {x}, 1e-5, 1e-4);
}
