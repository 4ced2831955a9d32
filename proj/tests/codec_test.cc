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
#include <random>

#include <gtest/gtest.h>

#include "ecmem/error.h"
#include "test_support.h"

namespace ecmem {
namespace {

using testing::random_page;
using testing::reference_parity_matrix;
using testing::slow_mul;

std::vector<Split> pick(const std::vector<Split>& all,
                        const std::vector<int>& indices) {
  std::vector<Split> out;
  for (int i : indices) out.push_back(all[i]);
  return out;
}

TEST(Codec, ValidatesParameters) {
  EXPECT_THROW(validate(CodecParams{0, 2, 0}), Error);
  EXPECT_THROW(validate(CodecParams{8, -1, 0}), Error);
  EXPECT_THROW(validate(CodecParams{8, 1, 2}), Error);
  EXPECT_THROW(validate(CodecParams{200, 56, 1}), Error);
  EXPECT_NO_THROW(validate(CodecParams{8, 0, 0}));
  try {
    make_codec(CodecParams{0, 2, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidParams);
  }
}

TEST(Codec, SplitPagePadsTheLastSplit) {
  Bytes page(4097);
  std::iota(page.begin(), page.end(), 0);
  const auto splits = split_page(page, 8);
  ASSERT_EQ(splits.size(), 8u);
  for (const auto& s : splits) EXPECT_EQ(s.bytes.size(), 513u);
  EXPECT_EQ(splits[7].bytes.back(), 0);
  EXPECT_EQ(join_splits(splits, page.size()), page);
}

TEST(Codec, SplitPageOfOneHundredBytesIntoThree) {
  Bytes page(100, 0xab);
  const auto splits = split_page(page, 3);
  ASSERT_EQ(splits[0].bytes.size(), 34u);
  EXPECT_EQ(splits[2].bytes[31], 0xab);
  EXPECT_EQ(splits[2].bytes[32], 0);
  EXPECT_EQ(splits[2].bytes[33], 0);
}

TEST(Codec, ParityMatchesReferenceGenerator) {
  std::mt19937_64 rng(1);
  for (auto [k, r] : {std::pair{8, 2}, {4, 3}, {2, 1}, {16, 4}, {1, 2}}) {
    const Codec codec = make_codec(CodecParams{k, r, 0});
    const auto ref = reference_parity_matrix(k, r);
    const Bytes page = random_page(rng);
    const auto splits = encode_page(codec, page);
    ASSERT_EQ(static_cast<int>(splits.size()), k + r);
    for (int i = 0; i < r; ++i) {
      const auto& parity = splits[k + i];
      ASSERT_EQ(parity.index, k + i);
      for (std::size_t b = 0; b < codec.split_size(); ++b) {
        std::uint8_t expect = 0;
        for (int j = 0; j < k; ++j) expect ^= slow_mul(ref[i][j], splits[j].bytes[b]);
        ASSERT_EQ(parity.bytes[b], expect) << "k=" << k << " parity " << i;
      }
    }
  }
}

TEST(Codec, SingleParityIsXor) {
  std::mt19937_64 rng(2);
  const Codec codec = make_codec(CodecParams{4, 1, 0});
  const auto splits = encode_page(codec, random_page(rng));
  for (std::size_t b = 0; b < codec.split_size(); ++b) {
    EXPECT_EQ(splits[4].bytes[b], splits[0].bytes[b] ^ splits[1].bytes[b] ^
                                      splits[2].bytes[b] ^ splits[3].bytes[b]);
  }
}

TEST(Codec, EncodingIsLinear) {
  std::mt19937_64 rng(3);
  const Codec codec = make_codec(CodecParams{8, 3, 1});
  const Bytes a = random_page(rng);
  const Bytes b = random_page(rng);
  Bytes sum(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) sum[i] = a[i] ^ b[i];
  const auto ea = encode_page(codec, a);
  const auto eb = encode_page(codec, b);
  const auto es = encode_page(codec, sum);
  for (int i = 0; i < 11; ++i) {
    for (std::size_t j = 0; j < codec.split_size(); ++j) {
      ASSERT_EQ(es[i].bytes[j], ea[i].bytes[j] ^ eb[i].bytes[j]);
    }
  }
}

TEST(Codec, EveryKSubsetDecodes) {
  std::mt19937_64 rng(4);
  const Codec codec = make_codec(CodecParams{4, 3, 1});
  for (int trial = 0; trial < 5; ++trial) {
    const Bytes page = random_page(rng);
    const auto all = encode_page(codec, page);
    for (int mask = 0; mask < (1 << 7); ++mask) {
      if (__builtin_popcount(mask) != 4) continue;
      std::vector<int> idx;
      for (int i = 0; i < 7; ++i) {
        if (mask & (1 << i)) idx.push_back(i);
      }
      std::shuffle(idx.begin(), idx.end(), rng);
      EXPECT_EQ(decode(codec, pick(all, idx)), page) << "mask " << mask;
    }
  }
}

TEST(Codec, DecodeUsesFirstKInArrivalOrder) {
  std::mt19937_64 rng(5);
  const Codec codec = make_codec(CodecParams{2, 2, 1});
  const Bytes page = random_page(rng);
  auto splits = pick(encode_page(codec, page), {3, 0, 1});
  splits[2].bytes[0] ^= 1;  // beyond the first k: ignored
  EXPECT_EQ(decode(codec, splits), page);
}

TEST(Codec, DecodeRejectsBadInput) {
  std::mt19937_64 rng(6);
  const Codec codec = make_codec(CodecParams{4, 2, 1});
  const auto all = encode_page(codec, random_page(rng));
  auto expect_code = [&](std::vector<Split> s, ErrorCode code) {
    try {
      decode(codec, s);
      ADD_FAILURE() << "no error";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code);
    }
  };
  expect_code(pick(all, {0, 1, 2}), ErrorCode::kInsufficientSplits);
  expect_code(pick(all, {0, 0, 1, 2}), ErrorCode::kInvalidParams);
  auto bad = pick(all, {0, 1, 2, 3});
  bad[1].bytes.pop_back();
  expect_code(bad, ErrorCode::kLengthMismatch);
  bad = pick(all, {0, 1, 2, 3});
  bad[0].index = 9;
  expect_code(bad, ErrorCode::kInvalidParams);
}

TEST(Codec, DetectFindsSingleCorruption) {
  std::mt19937_64 rng(7);
  const Codec codec = make_codec(CodecParams{8, 2, 1});
  const Bytes page = random_page(rng);
  const auto all = encode_page(codec, page);
  auto nine = pick(all, {0, 1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_FALSE(detect_corruption(codec, nine, 1));
  nine[8].bytes[100] ^= 0x40;
  EXPECT_TRUE(detect_corruption(codec, nine, 1));
  EXPECT_THROW(detect_corruption(codec, pick(all, {0, 1, 2, 3, 4, 5, 6, 7}), 1),
               Error);
}

TEST(Codec, CorrectLocatesAndRepairs) {
  std::mt19937_64 rng(8);
  const Codec codec = make_codec(CodecParams{4, 4, 1});
  const Bytes page = random_page(rng);
  auto all = encode_page(codec, page);
  all[2].bytes[7] ^= 0xff;
  const auto fixed = correct_corruption(codec, pick(all, {0, 1, 2, 3, 4, 5, 6}), 1);
  EXPECT_EQ(fixed.page, page);
  EXPECT_EQ(fixed.corrupted, std::vector<int>{2});
  EXPECT_THROW(correct_corruption(codec, pick(all, {0, 1, 2, 3, 4, 5}), 1),
               Error);
}

TEST(Codec, UniqueCorrectionNeedsOneSplitLess) {
  std::mt19937_64 rng(10);
  const Codec codec = make_codec(CodecParams{4, 4, 1});
  const Bytes page = random_page(rng);
  for (int bad = 0; bad < 6; ++bad) {
    auto all = encode_page(codec, page);
    all[bad].bytes[11] ^= 0x42;
    const auto fixed =
        correct_within_distance(codec, pick(all, {0, 1, 2, 3, 4, 5}), 1);
    EXPECT_EQ(fixed.page, page);
    EXPECT_EQ(fixed.corrupted, std::vector<int>{bad});
  }
  const auto all = encode_page(codec, page);
  EXPECT_THROW(correct_within_distance(codec, pick(all, {0, 1, 2, 3, 4}), 1),
               Error);
}

TEST(Codec, CorrectReportsTwoCorruptionsAsUncorrectableWithDeltaOne) {
  std::mt19937_64 rng(9);
  const Codec codec = make_codec(CodecParams{4, 4, 1});
  auto all = encode_page(codec, random_page(rng));
  all[0].bytes[0] ^= 1;
  all[5].bytes[3] ^= 9;
  try {
    correct_corruption(codec, pick(all, {0, 1, 2, 3, 4, 5, 6}), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUncorrectable);
  }
}

TEST(Codec, MinSplitsThresholds) {
  const CodecParams p{8, 2, 1};
  EXPECT_EQ(min_splits(ResilienceMode::kFailure, p).count, 8);
  EXPECT_EQ(min_splits(ResilienceMode::kDetect, p).count, 9);
  EXPECT_EQ(min_splits(ResilienceMode::kCorrect, p).count, 11);
  EXPECT_EQ(min_splits(ResilienceMode::kFailure, p).overhead, (Rational{5, 4}));
  EXPECT_EQ(min_splits(ResilienceMode::kDetect, p).overhead, (Rational{9, 8}));
  EXPECT_EQ(min_splits(ResilienceMode::kCorrect, p).overhead, (Rational{11, 8}));
  EXPECT_EQ(Rational::reduced(10, 8), (Rational{5, 4}));
}

}  // namespace
}  // namespace ecmem
