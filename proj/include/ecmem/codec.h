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

#ifndef ECMEM_CODEC_H_
#define ECMEM_CODEC_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ecmem/gf256.h"

namespace ecmem {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::size_t kDefaultPageSize = 4096;
inline constexpr int kMaxCodeLength = 255;

struct CodecParams {
  int k = 8;      // data splits per page
  int r = 2;      // parity splits per page
  int delta = 1;  // extra reads per page; also tolerated corruptions

  int total() const { return k + r; }
  bool operator==(const CodecParams&) const = default;
};

// Throws Error(kInvalidParams) unless k >= 1, r >= 0, 0 <= delta <= r and
// k + r <= 255.
void validate(const CodecParams& params);

enum class SplitKind { kData, kParity };

// One fragment of a page. Indices [0, k) are data, [k, k+r) are parity.
struct Split {
  int index = 0;
  Bytes bytes;

  bool operator==(const Split&) const = default;
};

// Systematic (k, r) Reed-Solomon coder over GF(2^8). The generator is the
// k x k identity stacked on an r x k Cauchy matrix, normalized so the first
// parity row and first parity column are all ones. Every k x k submatrix of
// the stacked generator is invertible.
class Codec {
 public:
  const CodecParams& params() const { return params_; }
  int k() const { return params_.k; }
  int r() const { return params_.r; }
  int total() const { return params_.k + params_.r; }
  std::size_t page_size() const { return page_size_; }
  // ceil(page_size / k); the last data split carries the zero padding.
  std::size_t split_size() const { return split_size_; }
  SplitKind kind(int index) const {
    return index < params_.k ? SplitKind::kData : SplitKind::kParity;
  }
  // (k + r) x k generator matrix.
  const gf256::Matrix& generator() const { return generator_; }

  // Computes split `index` from the k data splits.
  Bytes compute_split(std::span<const Bytes> data, int index) const;

 private:
  friend Codec make_codec(const CodecParams&, std::size_t);

  CodecParams params_;
  std::size_t page_size_ = kDefaultPageSize;
  std::size_t split_size_ = 0;
  gf256::Matrix generator_;
};

Codec make_codec(const CodecParams& params,
                 std::size_t page_size = kDefaultPageSize);

// Splits a page into k equal data splits, zero-padding the last one.
std::vector<Split> split_page(std::span<const std::uint8_t> page, int k);

// Concatenates data splits in index order and truncates to page_size.
Bytes join_splits(std::span<const Split> data_splits, std::size_t page_size);

// Returns the r parity splits (indices k..k+r-1) for k data splits.
std::vector<Split> encode(const Codec& codec,
                          std::span<const Split> data_splits);

// split_page followed by encode: all k + r splits of a page, by index.
std::vector<Split> encode_page(const Codec& codec,
                               std::span<const std::uint8_t> page);

// Reconstructs the page from the first k entries of `available` (arrival
// order). When those are exactly the data splits no inversion happens.
Bytes decode(const Codec& codec, std::span<const Split> available);

// Same as decode but returns the k data splits instead of the joined page.
std::vector<Bytes> decode_data(const Codec& codec,
                               std::span<const Split> available);

// True iff the supplied splits are not all consistent with one codeword.
// Requires at least k + delta splits.
bool detect_corruption(const Codec& codec, std::span<const Split> splits,
                       int delta);

struct Correction {
  Bytes page;
  std::vector<int> corrupted;  // split indices, ascending
};

// Locates and removes up to `delta` corrupted splits by searching candidate
// subsets in increasing size. Requires at least k + 2*delta + 1 splits.
Correction correct_corruption(const Codec& codec,
                              std::span<const Split> splits, int delta);

// The same search with only k + 2*delta splits, the least that still pins
// down a unique codeword. No spare split is left to confirm the result.
Correction correct_within_distance(const Codec& codec,
                                   std::span<const Split> splits, int delta);

enum class ResilienceMode { kFailure, kDetect, kCorrect };

struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  static Rational reduced(std::int64_t num, std::int64_t den);
  double value() const { return static_cast<double>(num) / den; }
  bool operator==(const Rational&) const = default;
};

struct SplitRequirement {
  int count = 0;
  Rational overhead;  // memory (or read bandwidth) relative to the page
};

// Minimum number of remote splits needed per page for each resilience mode:
// failure -> k, detect -> k + delta, correct -> k + 2*delta + 1.
SplitRequirement min_splits(ResilienceMode mode, const CodecParams& params);

}  // namespace ecmem

#endif  // ECMEM_CODEC_H_
