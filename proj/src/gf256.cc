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

#include <array>
#include <cassert>
#include <utility>

namespace ecmem::gf256 {

namespace {

constexpr unsigned kPolynomial = 0x11d;

struct Tables {
  std::array<std::uint8_t, 512> exp{};
  std::array<int, 256> log{};
  // Full product table; 64 KiB is cheap and keeps mul_add branch-free.
  std::array<std::array<std::uint8_t, 256>, 256> product{};

  Tables() {
    unsigned x = 1;
    for (int i = 0; i < 255; ++i) {
      exp[i] = static_cast<std::uint8_t>(x);
      log[x] = i;
      x <<= 1;
      if (x & 0x100) x ^= kPolynomial;
    }
    for (int i = 255; i < 512; ++i) exp[i] = exp[i - 255];
    log[0] = -1;
    for (int a = 0; a < 256; ++a) {
      for (int b = 0; b < 256; ++b) {
        product[a][b] =
            (a == 0 || b == 0) ? 0 : exp[log[a] + log[b]];
      }
    }
  }
};

const Tables& tables() {
  static const Tables t;
  return t;
}

}  // namespace

std::uint8_t mul(std::uint8_t a, std::uint8_t b) {
  return tables().product[a][b];
}

std::uint8_t inv(std::uint8_t a) {
  assert(a != 0);
  const auto& t = tables();
  return t.exp[255 - t.log[a]];
}

std::uint8_t div(std::uint8_t a, std::uint8_t b) {
  assert(b != 0);
  if (a == 0) return 0;
  const auto& t = tables();
  return t.exp[t.log[a] + 255 - t.log[b]];
}

std::uint8_t exp(int power) {
  power %= 255;
  if (power < 0) power += 255;
  return tables().exp[power];
}

void mul_add(std::uint8_t coef, std::span<const std::uint8_t> src,
             std::span<std::uint8_t> dst) {
  assert(src.size() == dst.size());
  if (coef == 0) return;
  if (coef == 1) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] ^= src[i];
    return;
  }
  const auto& row = tables().product[coef];
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] ^= row[src[i]];
}

bool Matrix::invert(Matrix& out) const {
  assert(rows_ == cols_);
  const int n = rows_;
  Matrix work = *this;
  out = Matrix(n, n);
  for (int i = 0; i < n; ++i) out.at(i, i) = 1;

  for (int col = 0; col < n; ++col) {
    int pivot = col;
    while (pivot < n && work.at(pivot, col) == 0) ++pivot;
    if (pivot == n) return false;
    if (pivot != col) {
      for (int c = 0; c < n; ++c) {
        std::swap(work.at(pivot, c), work.at(col, c));
        std::swap(out.at(pivot, c), out.at(col, c));
      }
    }
    const std::uint8_t scale = inv(work.at(col, col));
    for (int c = 0; c < n; ++c) {
      work.at(col, c) = mul(work.at(col, c), scale);
      out.at(col, c) = mul(out.at(col, c), scale);
    }
    for (int row = 0; row < n; ++row) {
      if (row == col) continue;
      const std::uint8_t factor = work.at(row, col);
      if (factor == 0) continue;
      for (int c = 0; c < n; ++c) {
        work.at(row, c) ^= mul(factor, work.at(col, c));
        out.at(row, c) ^= mul(factor, out.at(col, c));
      }
    }
  }
  return true;
}

Matrix Matrix::multiply(const Matrix& rhs) const {
  assert(cols_ == rhs.rows_);
  Matrix result(rows_, rhs.cols_);
  for (int i = 0; i < rows_; ++i) {
    for (int j = 0; j < rhs.cols_; ++j) {
      std::uint8_t acc = 0;
      for (int t = 0; t < cols_; ++t) acc ^= mul(at(i, t), rhs.at(t, j));
      result.at(i, j) = acc;
    }
  }
  return result;
}

}  // namespace ecmem::gf256
