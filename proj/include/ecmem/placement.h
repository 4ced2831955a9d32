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

#ifndef ECMEM_PLACEMENT_H_
#define ECMEM_PLACEMENT_H_

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ecmem/codec.h"
#include "ecmem/rng.h"

namespace ecmem {

using MachineId = int;

struct ClusterShape {
  int machines = 0;               // N
  int slabs_per_machine = 16;     // S
  double failure_fraction = 0.0;  // f, correlated failure fraction

  // floor(N * f), guarded against binary rounding of f.
  int failed_machines() const;
};

// Throws Error(kInvalidShape) for N < 1, S < 1 or f outside [0, 1].
void validate(const ClusterShape& shape);

enum class Scheme { kCodingSets, kEcCache, kPowerOfTwo };

std::string_view scheme_name(Scheme scheme);
Scheme parse_scheme(std::string_view name);

// A disjoint set of k+r+l machines; coding groups are drawn from it.
struct ExtendedGroup {
  std::vector<MachineId> members;
  int l = 0;
};

// The k+r machines holding one address range, data indices first.
struct Assignment {
  int group = -1;
  std::vector<MachineId> machines;
};

struct PlacementPlan {
  Scheme scheme = Scheme::kCodingSets;
  int machines = 0;
  CodecParams params;
  int l = 0;
  std::uint64_t seed = 0;
  // CodingSets: pairwise disjoint extended groups. EC-Cache and
  // power-of-two: one (k+r)-machine coding group per stripe.
  std::vector<ExtendedGroup> groups;
  // Indexed by address-range id.
  std::vector<Assignment> assignments;

  // Group an address range is coded in. CodingSets spreads ranges over
  // groups with a seeded uniform hash; the other schemes use stripe order.
  int group_for_range(std::int64_t range_id) const;
};

// Per-machine load (bytes of mapped slabs by default).
using LoadVector = std::vector<double>;

PlacementPlan build_codingsets(const ClusterShape& shape,
                               const CodecParams& params, int l,
                               std::uint64_t seed);

// The k+r least-loaded members of `group`; ties go to the lower id. The
// result is sorted by (load, id).
std::vector<MachineId> select_members(const ExtendedGroup& group,
                                      const LoadVector& loads,
                                      const CodecParams& params);

// One uniformly random (k+r)-subset per stripe, floor(N*S/(k+r)) stripes.
PlacementPlan build_eccache(const ClusterShape& shape,
                            const CodecParams& params, std::uint64_t seed);

// Of two distinct uniformly random machines, the less loaded (lower id on
// ties).
MachineId power_of_two_pick(const LoadVector& loads, Rng& rng);
MachineId power_of_two_pick(const LoadVector& loads, std::uint64_t seed);

// Places floor(N*S/(k+r)) stripes, picking each of the k+r slabs with
// power_of_two_pick over the running load. `loads` is updated in place by
// `slab_bytes` per placed slab.
PlacementPlan build_power_of_two(const ClusterShape& shape,
                                 const CodecParams& params,
                                 std::uint64_t seed, LoadVector& loads,
                                 double slab_bytes);

// Assigns `range_id` within a CodingSets plan using the current loads and
// records it in plan.assignments. Loads are not modified.
const Assignment& assign_range(PlacementPlan& plan, std::int64_t range_id,
                               const LoadVector& loads);

enum class LossMode {
  kConservative,  // any r+1 failures inside one group's universe lose data
  kStrict,        // only the chosen k+r machines of each assignment count
};

// Machine sets whose r+1-subsets are copysets under `mode`.
std::vector<std::vector<MachineId>> copyset_universes(const PlacementPlan& plan,
                                                      LossMode mode);

// Distinct (r+1)-subsets contained in some universe.
std::uint64_t count_copysets(const PlacementPlan& plan,
                             const CodecParams& params,
                             LossMode mode = LossMode::kConservative);

double binomial(int n, int k);

// 1 - (1 - P_group * G)^C(floor(N f), r+1), with P_group * G clamped to
// [0, 1]. P_group = C(k+r+l, r+1) / C(N, r+1); G = N*S/(k+r) for EC-Cache
// and power-of-two, N/(k+r+l) for CodingSets.
double loss_probability_analytic(Scheme scheme, const ClusterShape& shape,
                                 const CodecParams& params, int l);

struct LossEstimate {
  double estimate = 0.0;
  double half_width = 0.0;  // 95% normal approximation
  std::int64_t trials = 0;
  std::int64_t losses = 0;
};

LossEstimate loss_probability_montecarlo(
    const PlacementPlan& plan, const ClusterShape& shape,
    const CodecParams& params, std::int64_t trials, std::uint64_t seed,
    LossMode mode = LossMode::kConservative);

// Exhaustive enumeration of every floor(N f)-machine failure set. Throws
// Error(kInvalidParams) when there are more than `max_sets` of them.
double loss_probability_exact(const PlacementPlan& plan,
                              const ClusterShape& shape,
                              const CodecParams& params,
                              LossMode mode = LossMode::kConservative,
                              double max_sets = 5e7);

struct LoadImbalance {
  double max_to_min = 1.0;       // max / max(min, epsilon)
  double cv = 0.0;               // population stddev / mean
  double min_utilization = 1.0;  // min / mean
  bool floored = false;          // min was below epsilon
};

LoadImbalance load_imbalance(const LoadVector& loads, double epsilon);

}  // namespace ecmem

#endif  // ECMEM_PLACEMENT_H_
