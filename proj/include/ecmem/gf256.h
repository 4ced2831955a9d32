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

#ifndef ECMEM_GF256_H_
#define ECMEM_GF256_H_

#include <cstdint>
#include <span>
#include <vector>

namespace ecmem::gf256 {

// Arithmetic in GF(2^8) with the primitive polynomial x^8+x^4+x^3+x^2+1.
// Addition is XOR; multiplication goes through log/exp tables.

std::uint8_t mul(std::uint8_t a, std::uint8_t b);
std::uint8_t div(std::uint8_t a, std::uint8_t b);
std::uint8_t inv(std::uint8_t a);
std::uint8_t exp(int power);

// dst[i] ^= coef * src[i]
void mul_add(std::uint8_t coef, std::span<const std::uint8_t> src,
             std::span<std::uint8_t> dst);

// Dense row-major square matrix over GF(2^8).
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols), cells_(rows * cols) {}

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::uint8_t& at(int r, int c) { return cells_[r * cols_ + c]; }
  std::uint8_t at(int r, int c) const { return cells_[r * cols_ + c]; }

  // Gauss-Jordan inverse. Returns false when the matrix is singular.
  bool invert(Matrix& out) const;

  Matrix multiply(const Matrix& rhs) const;

  bool operator==(const Matrix&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> cells_;
};

}  // namespace ecmem::gf256

#endif  // ECMEM_GF256_H_
