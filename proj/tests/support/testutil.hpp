#pragma once

#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "noah/rng.hpp"
#include "noah/tensor.hpp"

namespace noah::test {

inline Tensor rand_tensor(Rng& rng, int b, int h, int w, int c, float lo = -1.0f,
                          float hi = 1.0f) {
  Tensor out(b, h, w, c);
  for (float& value : out.values()) value = rng.uniform_float(lo, hi);
  return out;
}

inline Matrix rand_matrix(Rng& rng, int rows, int cols, float lo = -1.0f, float hi = 1.0f) {
  Matrix out(rows, cols);
  for (float& value : out.values()) value = rng.uniform_float(lo, hi);
  return out;
}

// Enables the finite-output assertions for every test binary that includes
// this header.
class FiniteCheckEnvironment : public ::testing::Environment {
 public:
  void SetUp() override { set_finite_checks(true); }
};

inline const bool kFiniteChecksRegistered = [] {
  ::testing::AddGlobalTestEnvironment(new FiniteCheckEnvironment);
  return true;
}();

}  // namespace noah::test
