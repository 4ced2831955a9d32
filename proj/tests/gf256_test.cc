// Copyright 2026 The ecmem Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ecmem/gf256.h"

#include <random>

#include <gtest/gtest.h>

#include "test_support.h"

namespace ecmem::gf256 {
namespace {

using ecmem::testing::slow_mul;

TEST(Gf256, MultiplicationMatchesBitwiseProductExhaustively) {
  for (int a = 0; a < 256; ++a) {
    for (int b = 0; b < 256; ++b) {
      ASSERT_EQ(mul(a, b), slow_mul(a, b)) << a << " * " << b;
    }
  }
}

TEST(Gf256, EveryNonzeroElementHasAnInverse) {
  for (int a = 1; a < 256; ++a) {
    EXPECT_EQ(mul(a, inv(a)), 1) << a;
    for (int b = 1; b < 256; b += 17) {
      EXPECT_EQ(mul(div(a, b), b), a);
    }
  }
}

TEST(Gf256, GeneratorHasOrder255) {
  std::vector<bool> seen(256, false);
  for (int p = 0; p < 255; ++p) {
    const auto v = exp(p);
    EXPECT_FALSE(seen[v]) << "repeat at power " << p;
    seen[v] = true;
  }
  EXPECT_FALSE(seen[0]);
  EXPECT_EQ(exp(255), exp(0));
}

TEST(Gf256, MulAddAccumulates) {
  std::vector<std::uint8_t> src{1, 2, 3, 250};
  std::vector<std::uint8_t> dst{9, 9, 9, 9};
  mul_add(7, src, dst);
  for (std::size_t i = 0; i < src.size(); ++i) {
    EXPECT_EQ(dst[i], 9 ^ slow_mul(7, src[i]));
  }
  mul_add(0, src, dst);
  EXPECT_EQ(dst[0], 9 ^ slow_mul(7, 1));
}

TEST(Gf256, InvertRecoversIdentity) {
  std::mt19937_64 rng(3);
  int singular = 0;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix m(6, 6);
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 6; ++c) m.at(r, c) = static_cast<std::uint8_t>(rng());
    }
    Matrix inv_m;
    if (!m.invert(inv_m)) {
      ++singular;
      continue;
    }
    const Matrix id = m.multiply(inv_m);
    for (int r = 0; r < 6; ++r) {
      for (int c = 0; c < 6; ++c) EXPECT_EQ(id.at(r, c), r == c ? 1 : 0);
    }
  }
  EXPECT_LT(singular, 5);
}

TEST(Gf256, SingularMatrixIsReported) {
  Matrix m(2, 2);
  m.at(0, 0) = 3;
  m.at(0, 1) = 5;
  m.at(1, 0) = 3;
  m.at(1, 1) = 5;
  Matrix out;
  EXPECT_FALSE(m.invert(out));
}

}  // namespace
}  // namespace ecmem::gf256
