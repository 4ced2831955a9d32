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

#include "ecmem/codec.h"

#include <algorithm>
#include <numeric>
#include <string>

#include "ecmem/error.h"

namespace ecmem {

namespace {

void check_splits(const Codec& codec, std::span<const Split> splits) {
  std::vector<bool> seen(codec.total(), false);
  for (const auto& s : splits) {
    if (s.index < 0 || s.index >= codec.total()) {
      throw Error(ErrorCode::kInvalidParams,
                  "split index " + std::to_string(s.index) + " out of range");
    }
    if (seen[s.index]) {
      throw Error(ErrorCode::kInvalidParams,
                  "duplicate split index " + std::to_string(s.index));
    }
    seen[s.index] = true;
    if (s.bytes.size() != codec.split_size()) {
      throw Error(ErrorCode::kLengthMismatch,
                  "split " + std::to_string(s.index) + " has " +
                      std::to_string(s.bytes.size()) + " bytes, expected " +
                      std::to_string(codec.split_size()));
    }
  }
}

// Decodes the data splits from exactly the first k entries. Assumes
// check_splits already passed.
std::vector<Bytes> solve_data(const Codec& codec,
                              std::span<const Split> first_k) {
  const int k = codec.k();
  std::vector<Bytes> data(k);
  bool systematic = true;
  for (const auto& s : first_k) {
    if (codec.kind(s.index) != SplitKind::kData) {
      systematic = false;
      break;
    }
  }
  if (systematic) {
    for (const auto& s : first_k) data[s.index] = s.bytes;
    return data;
  }

  gf256::Matrix sub(k, k);
  for (int row = 0; row < k; ++row) {
    for (int c = 0; c < k; ++c) {
      sub.at(row, c) = codec.generator().at(first_k[row].index, c);
    }
  }
  gf256::Matrix inverse;
  if (!sub.invert(inverse)) {
    // Unreachable for an MDS generator.
    throw Error(ErrorCode::kInvalidParams, "singular decoding submatrix");
  }
  for (int d = 0; d < k; ++d) {
    data[d].assign(codec.split_size(), 0);
    for (int row = 0; row < k; ++row) {
      gf256::mul_add(inverse.at(d, row), first_k[row].bytes, data[d]);
    }
  }
  return data;
}

bool consistent(const Codec& codec, std::span<const Split> splits,
                const std::vector<Bytes>& data) {
  for (std::size_t i = codec.k(); i < splits.size(); ++i) {
    const auto& s = splits[i];
    if (codec.compute_split(data, s.index) != s.bytes) return false;
  }
  return true;
}

// True when all splits agree with the codeword determined by the first k.
bool all_consistent(const Codec& codec, std::span<const Split> splits) {
  const auto data = solve_data(codec, splits.first(codec.k()));
  return consistent(codec, splits, data);
}

}  // namespace

void validate(const CodecParams& p) {
  if (p.k < 1) throw Error(ErrorCode::kInvalidParams, "k must be >= 1");
  if (p.r < 0) throw Error(ErrorCode::kInvalidParams, "r must be >= 0");
  if (p.k + p.r > kMaxCodeLength) {
    throw Error(ErrorCode::kInvalidParams,
                "k + r = " + std::to_string(p.k + p.r) + " exceeds 255");
  }
  if (p.delta < 0 || p.delta > p.r) {
    throw Error(ErrorCode::kInvalidParams, "delta must lie in [0, r]");
  }
}

Bytes Codec::compute_split(std::span<const Bytes> data, int index) const {
  if (index < k()) return data[index];
  Bytes out(split_size_, 0);
  for (int c = 0; c < k(); ++c) {
    gf256::mul_add(generator_.at(index, c), data[c], out);
  }
  return out;
}

Codec make_codec(const CodecParams& params, std::size_t page_size) {
  validate(params);
  if (page_size == 0) {
    throw Error(ErrorCode::kInvalidParams, "page size must be positive");
  }
  Codec codec;
  codec.params_ = params;
  codec.page_size_ = page_size;
  codec.split_size_ = (page_size + params.k - 1) / params.k;

  const int k = params.k;
  const int r = params.r;
  gf256::Matrix cauchy(r, k);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < k; ++j) {
      const auto x = static_cast<std::uint8_t>(k + i);
      const auto y = static_cast<std::uint8_t>(j);
      cauchy.at(i, j) = gf256::inv(x ^ y);
    }
  }
  if (r > 0) {
    for (int j = 0; j < k; ++j) {
      const std::uint8_t scale = gf256::inv(cauchy.at(0, j));
      for (int i = 0; i < r; ++i) {
        cauchy.at(i, j) = gf256::mul(cauchy.at(i, j), scale);
      }
    }
    for (int i = 1; i < r; ++i) {
      const std::uint8_t scale = gf256::inv(cauchy.at(i, 0));
      for (int j = 0; j < k; ++j) {
        cauchy.at(i, j) = gf256::mul(cauchy.at(i, j), scale);
      }
    }
  }

  codec.generator_ = gf256::Matrix(k + r, k);
  for (int i = 0; i < k; ++i) codec.generator_.at(i, i) = 1;
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < k; ++j) codec.generator_.at(k + i, j) = cauchy.at(i, j);
  }
  return codec;
}

std::vector<Split> split_page(std::span<const std::uint8_t> page, int k) {
  if (k < 1) throw Error(ErrorCode::kInvalidParams, "k must be >= 1");
  const std::size_t size = (page.size() + k - 1) / k;
  std::vector<Split> splits(k);
  for (int i = 0; i < k; ++i) {
    splits[i].index = i;
    splits[i].bytes.assign(size, 0);
    const std::size_t begin = std::min(page.size(), i * size);
    const std::size_t end = std::min(page.size(), begin + size);
    std::copy(page.begin() + begin, page.begin() + end,
              splits[i].bytes.begin());
  }
  return splits;
}

Bytes join_splits(std::span<const Split> data_splits, std::size_t page_size) {
  std::vector<const Split*> ordered(data_splits.size());
  for (std::size_t i = 0; i < data_splits.size(); ++i) {
    ordered[i] = &data_splits[i];
  }
  std::sort(ordered.begin(), ordered.end(),
            [](const Split* a, const Split* b) { return a->index < b->index; });
  Bytes page;
  page.reserve(page_size);
  for (const Split* s : ordered) {
    page.insert(page.end(), s->bytes.begin(), s->bytes.end());
  }
  page.resize(page_size);
  return page;
}

std::vector<Split> encode(const Codec& codec,
                          std::span<const Split> data_splits) {
  if (static_cast<int>(data_splits.size()) != codec.k()) {
    throw Error(ErrorCode::kInvalidParams,
                "encode needs exactly k data splits");
  }
  std::vector<Bytes> data(codec.k());
  for (const auto& s : data_splits) {
    if (s.bytes.size() != data_splits.front().bytes.size()) {
      throw Error(ErrorCode::kLengthMismatch, "data splits differ in length");
    }
    if (s.index < 0 || s.index >= codec.k() || !data[s.index].empty()) {
      throw Error(ErrorCode::kInvalidParams, "bad data split index");
    }
    data[s.index] = s.bytes;
  }
  std::vector<Split> parity;
  parity.reserve(codec.r());
  for (int i = codec.k(); i < codec.total(); ++i) {
    Bytes out(data.front().size(), 0);
    for (int c = 0; c < codec.k(); ++c) {
      gf256::mul_add(codec.generator().at(i, c), data[c], out);
    }
    parity.push_back(Split{i, std::move(out)});
  }
  return parity;
}

std::vector<Split> encode_page(const Codec& codec,
                               std::span<const std::uint8_t> page) {
  if (page.size() != codec.page_size()) {
    throw Error(ErrorCode::kLengthMismatch, "page size mismatch");
  }
  auto splits = split_page(page, codec.k());
  auto parity = encode(codec, splits);
  for (auto& p : parity) splits.push_back(std::move(p));
  return splits;
}

std::vector<Bytes> decode_data(const Codec& codec,
                               std::span<const Split> available) {
  if (static_cast<int>(available.size()) < codec.k()) {
    throw Error(ErrorCode::kInsufficientSplits,
                "have " + std::to_string(available.size()) + " splits, need " +
                    std::to_string(codec.k()));
  }
  check_splits(codec, available);
  return solve_data(codec, available.first(codec.k()));
}

Bytes decode(const Codec& codec, std::span<const Split> available) {
  auto data = decode_data(codec, available);
  Bytes page;
  page.reserve(codec.split_size() * codec.k());
  for (const auto& d : data) page.insert(page.end(), d.begin(), d.end());
  page.resize(codec.page_size());
  return page;
}

bool detect_corruption(const Codec& codec, std::span<const Split> splits,
                       int delta) {
  if (delta < 0) throw Error(ErrorCode::kInvalidParams, "negative delta");
  const std::size_t need = static_cast<std::size_t>(codec.k() + delta);
  if (splits.size() < need) {
    throw Error(ErrorCode::kInsufficientSplits,
                "detection needs " + std::to_string(need) + " splits, have " +
                    std::to_string(splits.size()));
  }
  check_splits(codec, splits);
  return !all_consistent(codec, splits);
}

Correction correct_corruption(const Codec& codec,
                              std::span<const Split> splits, int delta) {
  if (delta < 0) throw Error(ErrorCode::kInvalidParams, "negative delta");
  const std::size_t need = static_cast<std::size_t>(codec.k() + 2 * delta + 1);
  if (splits.size() < need) {
    throw Error(ErrorCode::kInsufficientSplits,
                "correction needs " + std::to_string(need) + " splits, have " +
                    std::to_string(splits.size()));
  }
  return correct_within_distance(codec, splits, delta);
}

Correction correct_within_distance(const Codec& codec,
                                   std::span<const Split> splits, int delta) {
  if (delta < 0) throw Error(ErrorCode::kInvalidParams, "negative delta");
  const std::size_t need = static_cast<std::size_t>(codec.k() + 2 * delta);
  if (splits.size() < need) {
    throw Error(ErrorCode::kInsufficientSplits,
                "unique correction needs " + std::to_string(need) +
                    " splits, have " + std::to_string(splits.size()));
  }
  check_splits(codec, splits);
  const int n = static_cast<int>(splits.size());

  std::vector<Split> remaining;
  remaining.reserve(n);
  for (int size = 0; size <= delta; ++size) {
    // Enumerate excluded position sets of this size in lexicographic order.
    std::vector<int> excluded(size);
    std::iota(excluded.begin(), excluded.end(), 0);
    while (true) {
      remaining.clear();
      std::size_t next = 0;
      for (int i = 0; i < n; ++i) {
        if (next < excluded.size() && excluded[next] == i) {
          ++next;
          continue;
        }
        remaining.push_back(splits[i]);
      }
      auto data = solve_data(codec, std::span<const Split>(remaining).first(codec.k()));
      if (consistent(codec, remaining, data)) {
        Correction result;
        for (const auto& d : data) {
          result.page.insert(result.page.end(), d.begin(), d.end());
        }
        result.page.resize(codec.page_size());
        for (int pos : excluded) result.corrupted.push_back(splits[pos].index);
        std::sort(result.corrupted.begin(), result.corrupted.end());
        return result;
      }
      // Advance to the next combination.
      int i = size - 1;
      while (i >= 0 && excluded[i] == n - size + i) --i;
      if (i < 0) break;
      ++excluded[i];
      for (int j = i + 1; j < size; ++j) excluded[j] = excluded[j - 1] + 1;
    }
  }
  throw Error(ErrorCode::kUncorrectable,
              "no consistent codeword within " + std::to_string(delta) +
                  " corrupted splits");
}

Rational Rational::reduced(std::int64_t num, std::int64_t den) {
  const std::int64_t g = std::gcd(num, den);
  return Rational{num / g, den / g};
}

SplitRequirement min_splits(ResilienceMode mode, const CodecParams& p) {
  switch (mode) {
    case ResilienceMode::kFailure:
      return {p.k, Rational::reduced(p.k + p.r, p.k)};
    case ResilienceMode::kDetect:
      return {p.k + p.delta, Rational::reduced(p.k + p.delta, p.k)};
    case ResilienceMode::kCorrect:
      return {p.k + 2 * p.delta + 1,
              Rational::reduced(p.k + 2 * p.delta + 1, p.k)};
  }
  return {};
}

}  // namespace ecmem
