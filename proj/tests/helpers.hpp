#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "pfseg/common.hpp"
#include "pfseg/ops.hpp"
#include "pfseg/tensor.hpp"

namespace pfseg_test {

inline pfseg::Tensor<double> rand_tensor(pfseg::Shape shape, pfseg::Rng& rng,
                                         double lo = -1.0, double hi = 1.0,
                                         bool requires_grad = true) {
  auto t = pfseg::Tensor<double>::zeros(std::move(shape), requires_grad);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Scalarizes `out` with a fixed random projection so every element of the
// upstream gradient is distinct (sum alone would hide transposition bugs).
inline pfseg::Tensor<double> project(const pfseg::Tensor<double>& out,
                                     const pfseg::Tensor<double>& weights) {
  return pfseg::reduce_sum(pfseg::mul(out, weights));
}

// Central-difference check of d(loss)/d(input) for every listed input.
// loss_fn must be a pure function of the inputs' current data.
inline void gradcheck(const std::function<pfseg::Tensor<double>()>& loss_fn,
                      std::vector<pfseg::Tensor<double>> inputs, double h = 1e-5,
                      double tol = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  auto loss = loss_fn();
  pfseg::backward(loss);
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& t = inputs[ti];
    REQUIRE(t.has_grad());
    for (std::int64_t i = 0; i < t.size(); ++i) {
      const double orig = t.data()[static_cast<std::size_t>(i)];
      double lp, lm;
      {
        pfseg::NoGradGuard ng;
        t.data()[static_cast<std::size_t>(i)] = orig + h;
        lp = loss_fn().value();
        t.data()[static_cast<std::size_t>(i)] = orig - h;
        lm = loss_fn().value();
        t.data()[static_cast<std::size_t>(i)] = orig;
      }
      const double fd = (lp - lm) / (2.0 * h);
      const double an = t.grad()[static_cast<std::size_t>(i)];
      const double err = std::abs(an - fd) / std::max(1.0, std::abs(fd));
      if (err >= tol) {  // only capture on failure to keep output small
        CAPTURE(ti);
        CAPTURE(i);
        CAPTURE(an);
        CAPTURE(fd);
      }
      CHECK(err < tol);
    }
  }
}

}  // namespace pfseg_test
