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

#include "ecmem/placement.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>
#include <unordered_set>

#include "ecmem/error.h"

namespace ecmem {

namespace {

// Uniform (k+r)-subset of [0, n) via a partial Fisher-Yates shuffle.
std::vector<MachineId> random_subset(int n, int size, Rng& rng,
                                     std::vector<MachineId>& scratch) {
  scratch.resize(n);
  std::iota(scratch.begin(), scratch.end(), 0);
  for (int i = 0; i < size; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(scratch[i], scratch[pick(rng)]);
  }
  std::vector<MachineId> out(scratch.begin(), scratch.begin() + size);
  std::sort(out.begin(), out.end());
  return out;
}

int stripe_count(const ClusterShape& shape, const CodecParams& params) {
  const std::int64_t slabs =
      static_cast<std::int64_t>(shape.machines) * shape.slabs_per_machine;
  return static_cast<int>(std::max<std::int64_t>(1, slabs / params.total()));
}

// Compressed machine -> universe index.
struct Membership {
  std::vector<int> offsets;
  std::vector<int> universes;

  Membership(int machines, const std::vector<std::vector<MachineId>>& sets)
      : offsets(machines + 1, 0) {
    for (const auto& s : sets) {
      for (MachineId m : s) ++offsets[m + 1];
    }
    for (int i = 0; i < machines; ++i) offsets[i + 1] += offsets[i];
    universes.resize(offsets.back());
    std::vector<int> fill(offsets.begin(), offsets.end() - 1);
    for (int u = 0; u < static_cast<int>(sets.size()); ++u) {
      for (MachineId m : sets[u]) universes[fill[m]++] = u;
    }
  }
};

// True when the failed set covers r+1 machines of any universe.
class LossChecker {
 public:
  LossChecker(const Membership& membership, int universe_count, int threshold)
      : membership_(membership), counts_(universe_count, 0),
        threshold_(threshold) {}

  bool loses(std::span<const MachineId> failed) {
    bool lost = false;
    for (MachineId m : failed) {
      for (int i = membership_.offsets[m]; i < membership_.offsets[m + 1];
           ++i) {
        const int u = membership_.universes[i];
        if (counts_[u]++ == 0) touched_.push_back(u);
        if (counts_[u] >= threshold_) lost = true;
      }
    }
    for (int u : touched_) counts_[u] = 0;
    touched_.clear();
    return lost;
  }

 private:
  const Membership& membership_;
  std::vector<int> counts_;
  std::vector<int> touched_;
  int threshold_;
};

}  // namespace

int ClusterShape::failed_machines() const {
  return static_cast<int>(std::floor(machines * failure_fraction + 1e-9));
}

void validate(const ClusterShape& shape) {
  if (shape.machines < 1) {
    throw Error(ErrorCode::kInvalidShape, "cluster needs at least 1 machine");
  }
  if (shape.slabs_per_machine < 1) {
    throw Error(ErrorCode::kInvalidShape, "slabs per machine must be >= 1");
  }
  if (!(shape.failure_fraction >= 0.0 && shape.failure_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidShape, "failure fraction outside [0, 1]");
  }
}

std::string_view scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::kCodingSets: return "codingsets";
    case Scheme::kEcCache: return "eccache";
    case Scheme::kPowerOfTwo: return "power_of_two";
  }
  return "unknown";
}

Scheme parse_scheme(std::string_view name) {
  if (name == "codingsets") return Scheme::kCodingSets;
  if (name == "eccache") return Scheme::kEcCache;
  if (name == "power_of_two") return Scheme::kPowerOfTwo;
  throw Error(ErrorCode::kConfigInvalid,
              "unknown placement scheme '" + std::string(name) + "'");
}

int PlacementPlan::group_for_range(std::int64_t range_id) const {
  const auto groups_count = static_cast<std::uint64_t>(groups.size());
  if (groups_count == 0) return -1;
  if (scheme == Scheme::kCodingSets) {
    return static_cast<int>(
        derive_seed(seed, static_cast<std::uint64_t>(range_id)) %
        groups_count);
  }
  return static_cast<int>(static_cast<std::uint64_t>(range_id) % groups_count);
}

PlacementPlan build_codingsets(const ClusterShape& shape,
                               const CodecParams& params, int l,
                               std::uint64_t seed) {
  validate(params);
  if (l < 0) throw Error(ErrorCode::kInvalidParams, "l must be >= 0");
  const int width = params.total() + l;
  if (shape.machines < width) {
    throw Error(ErrorCode::kClusterTooSmall,
                std::to_string(shape.machines) + " machines cannot hold an " +
                    "extended group of " + std::to_string(width));
  }
  PlacementPlan plan;
  plan.scheme = Scheme::kCodingSets;
  plan.machines = shape.machines;
  plan.params = params;
  plan.l = l;
  plan.seed = seed;

  std::vector<MachineId> order(shape.machines);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0);
  std::shuffle(order.begin(), order.end(), rng);

  const int count = shape.machines / width;
  plan.groups.resize(count);
  for (int g = 0; g < count; ++g) {
    auto& group = plan.groups[g];
    group.members.assign(order.begin() + g * width,
                         order.begin() + (g + 1) * width);
    group.l = l;
  }
  // Leftover machines join the last group so every machine has one group.
  auto& last = plan.groups.back();
  last.members.insert(last.members.end(), order.begin() + count * width,
                      order.end());
  last.l = static_cast<int>(last.members.size()) - params.total();
  for (auto& group : plan.groups) {
    std::sort(group.members.begin(), group.members.end());
  }
  return plan;
}

std::vector<MachineId> select_members(const ExtendedGroup& group,
                                      const LoadVector& loads,
                                      const CodecParams& params) {
  std::vector<MachineId> members = group.members;
  std::sort(members.begin(), members.end(), [&](MachineId a, MachineId b) {
    if (loads[a] != loads[b]) return loads[a] < loads[b];
    return a < b;
  });
  if (static_cast<int>(members.size()) > params.total()) {
    members.resize(params.total());
  }
  return members;
}

PlacementPlan build_eccache(const ClusterShape& shape,
                            const CodecParams& params, std::uint64_t seed) {
  validate(params);
  validate(shape);
  if (shape.machines < params.total()) {
    throw Error(ErrorCode::kClusterTooSmall,
                "EC-Cache placement needs at least k+r machines");
  }
  PlacementPlan plan;
  plan.scheme = Scheme::kEcCache;
  plan.machines = shape.machines;
  plan.params = params;
  plan.seed = seed;
  const int stripes = stripe_count(shape, params);
  plan.groups.resize(stripes);
  plan.assignments.resize(stripes);
  Rng rng = make_rng(seed, 1);
  std::vector<MachineId> scratch;
  for (int s = 0; s < stripes; ++s) {
    plan.groups[s].members =
        random_subset(shape.machines, params.total(), rng, scratch);
    plan.assignments[s] = Assignment{s, plan.groups[s].members};
  }
  return plan;
}

MachineId power_of_two_pick(const LoadVector& loads, Rng& rng) {
  const int n = static_cast<int>(loads.size());
  if (n < 2) {
    throw Error(ErrorCode::kInvalidParams, "power-of-two needs >= 2 machines");
  }
  std::uniform_int_distribution<int> first(0, n - 1);
  std::uniform_int_distribution<int> second(0, n - 2);
  const int a = first(rng);
  int b = second(rng);
  if (b >= a) ++b;
  if (loads[a] != loads[b]) return loads[a] < loads[b] ? a : b;
  return std::min(a, b);
}

MachineId power_of_two_pick(const LoadVector& loads, std::uint64_t seed) {
  Rng rng = make_rng(seed, 2);
  return power_of_two_pick(loads, rng);
}

PlacementPlan build_power_of_two(const ClusterShape& shape,
                                 const CodecParams& params,
                                 std::uint64_t seed, LoadVector& loads,
                                 double slab_bytes) {
  validate(params);
  validate(shape);
  if (shape.machines < params.total() || shape.machines < 2) {
    throw Error(ErrorCode::kClusterTooSmall,
                "power-of-two placement needs at least k+r machines");
  }
  loads.resize(shape.machines, 0.0);
  PlacementPlan plan;
  plan.scheme = Scheme::kPowerOfTwo;
  plan.machines = shape.machines;
  plan.params = params;
  plan.seed = seed;
  const int stripes = stripe_count(shape, params);
  plan.groups.resize(stripes);
  plan.assignments.resize(stripes);
  Rng rng = make_rng(seed, 3);
  std::vector<char> taken(shape.machines, 0);
  for (int s = 0; s < stripes; ++s) {
    auto& members = plan.groups[s].members;
    while (static_cast<int>(members.size()) < params.total()) {
      const MachineId m = power_of_two_pick(loads, rng);
      if (taken[m]) continue;  // coding group members must be distinct
      taken[m] = 1;
      members.push_back(m);
      loads[m] += slab_bytes;
    }
    for (MachineId m : members) taken[m] = 0;
    plan.assignments[s] = Assignment{s, members};
  }
  return plan;
}

const Assignment& assign_range(PlacementPlan& plan, std::int64_t range_id,
                               const LoadVector& loads) {
  const int g = plan.group_for_range(range_id);
  if (static_cast<std::int64_t>(plan.assignments.size()) <= range_id) {
    plan.assignments.resize(range_id + 1);
  }
  auto& a = plan.assignments[range_id];
  a.group = g;
  a.machines = plan.scheme == Scheme::kCodingSets
                   ? select_members(plan.groups[g], loads, plan.params)
                   : plan.groups[g].members;
  return a;
}

std::vector<std::vector<MachineId>> copyset_universes(const PlacementPlan& plan,
                                                      LossMode mode) {
  std::vector<std::vector<MachineId>> out;
  if (mode == LossMode::kStrict && plan.scheme == Scheme::kCodingSets) {
    for (const auto& a : plan.assignments) {
      if (!a.machines.empty()) out.push_back(a.machines);
    }
    return out;
  }
  out.reserve(plan.groups.size());
  for (const auto& g : plan.groups) out.push_back(g.members);
  return out;
}

double binomial(int n, int k) {
  if (k < 0 || n < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double result = 1.0;
  for (int i = 1; i <= k; ++i) {
    result = result * (n - k + i) / i;
  }
  return result < 9.0e15 ? std::round(result) : result;
}

std::uint64_t count_copysets(const PlacementPlan& plan,
                             const CodecParams& params, LossMode mode) {
  const int width = params.r + 1;
  const auto universes = copyset_universes(plan, mode);
  if (plan.scheme == Scheme::kCodingSets && mode == LossMode::kConservative) {
    // Extended groups are disjoint, so no copyset is counted twice.
    std::uint64_t total = 0;
    for (const auto& u : universes) {
      total += static_cast<std::uint64_t>(
          binomial(static_cast<int>(u.size()), width));
    }
    return total;
  }

  const int bits = std::max(1, static_cast<int>(std::bit_width(
                                   static_cast<unsigned>(plan.machines))));
  const bool packable = bits * width <= 64;
  std::unordered_set<std::uint64_t> packed;
  std::set<std::vector<MachineId>> loose;
  std::vector<int> pick(width);
  std::vector<MachineId> tuple(width);
  for (auto u : universes) {
    std::sort(u.begin(), u.end());
    const int n = static_cast<int>(u.size());
    if (n < width) continue;
    std::iota(pick.begin(), pick.end(), 0);
    while (true) {
      for (int i = 0; i < width; ++i) tuple[i] = u[pick[i]];
      if (packable) {
        std::uint64_t key = 0;
        for (MachineId m : tuple) key = (key << bits) | static_cast<unsigned>(m);
        packed.insert(key);
      } else {
        loose.insert(tuple);
      }
      int i = width - 1;
      while (i >= 0 && pick[i] == n - width + i) --i;
      if (i < 0) break;
      ++pick[i];
      for (int j = i + 1; j < width; ++j) pick[j] = pick[j - 1] + 1;
    }
  }
  return packable ? packed.size() : loose.size();
}

double loss_probability_analytic(Scheme scheme, const ClusterShape& shape,
                                 const CodecParams& params, int l) {
  validate(shape);
  validate(params);
  const int n = shape.machines;
  const int width = params.r + 1;
  const int extended =
      params.total() + (scheme == Scheme::kCodingSets ? l : 0);
  if (l < 0 || n < extended) {
    throw Error(ErrorCode::kInvalidShape,
                "cluster smaller than a coding group");
  }
  const int failed = shape.failed_machines();
  if (failed < width) return 0.0;

  const double p_group = binomial(extended, width) / binomial(n, width);
  const double groups =
      scheme == Scheme::kCodingSets
          ? static_cast<double>(n) / extended
          : static_cast<double>(n) * shape.slabs_per_machine / params.total();
  const double per_copyset = std::clamp(p_group * groups, 0.0, 1.0);
  const double exponent = binomial(failed, width);
  if (per_copyset >= 1.0) return 1.0;
  return -std::expm1(exponent * std::log1p(-per_copyset));
}

LossEstimate loss_probability_montecarlo(const PlacementPlan& plan,
                                         const ClusterShape& shape,
                                         const CodecParams& params,
                                         std::int64_t trials,
                                         std::uint64_t seed, LossMode mode) {
  validate(shape);
  if (trials < 1) throw Error(ErrorCode::kInvalidParams, "trials must be >= 1");
  const int n = shape.machines;
  const int failed = shape.failed_machines();
  LossEstimate out;
  out.trials = trials;
  if (failed < params.r + 1) return out;

  const auto universes = copyset_universes(plan, mode);
  const Membership membership(n, universes);

  const unsigned workers = std::max(
      1u, std::min<unsigned>(std::thread::hardware_concurrency(), 16));
  std::vector<std::int64_t> losses(workers, 0);
  auto run = [&](unsigned worker) {
    LossChecker checker(membership, static_cast<int>(universes.size()),
                        params.r + 1);
    std::vector<MachineId> pool(n);
    std::vector<MachineId> chosen(failed);
    for (std::int64_t t = worker; t < trials; t += workers) {
      // Each trial owns its stream so the total is independent of how trials
      // are spread over workers.
      Rng rng = make_rng(seed, static_cast<std::uint64_t>(t));
      std::iota(pool.begin(), pool.end(), 0);
      for (int i = 0; i < failed; ++i) {
        std::uniform_int_distribution<int> pick(i, n - 1);
        std::swap(pool[i], pool[pick(rng)]);
        chosen[i] = pool[i];
      }
      if (checker.loses(chosen)) ++losses[worker];
    }
  };
  std::vector<std::thread> threads;
  for (unsigned w = 1; w < workers; ++w) threads.emplace_back(run, w);
  run(0);
  for (auto& t : threads) t.join();

  out.losses = std::accumulate(losses.begin(), losses.end(), std::int64_t{0});
  out.estimate = static_cast<double>(out.losses) / trials;
  out.half_width =
      1.96 * std::sqrt(out.estimate * (1.0 - out.estimate) / trials);
  return out;
}

double loss_probability_exact(const PlacementPlan& plan,
                              const ClusterShape& shape,
                              const CodecParams& params, LossMode mode,
                              double max_sets) {
  validate(shape);
  const int n = shape.machines;
  const int failed = shape.failed_machines();
  if (failed < params.r + 1) return 0.0;
  const double total = binomial(n, failed);
  if (total > max_sets) {
    throw Error(ErrorCode::kInvalidParams,
                "exact enumeration over " + std::to_string(total) +
                    " failure sets is too large");
  }
  const auto universes = copyset_universes(plan, mode);
  const Membership membership(n, universes);
  LossChecker checker(membership, static_cast<int>(universes.size()),
                      params.r + 1);
  std::vector<MachineId> pick(failed);
  std::iota(pick.begin(), pick.end(), 0);
  std::int64_t losses = 0;
  std::int64_t sets = 0;
  while (true) {
    ++sets;
    if (checker.loses(pick)) ++losses;
    int i = failed - 1;
    while (i >= 0 && pick[i] == n - failed + i) --i;
    if (i < 0) break;
    ++pick[i];
    for (int j = i + 1; j < failed; ++j) pick[j] = pick[j - 1] + 1;
  }
  return static_cast<double>(losses) / static_cast<double>(sets);
}

LoadImbalance load_imbalance(const LoadVector& loads, double epsilon) {
  if (loads.empty()) {
    throw Error(ErrorCode::kInvalidParams, "empty load vector");
  }
  const auto [lo, hi] = std::minmax_element(loads.begin(), loads.end());
  const double mean =
      std::accumulate(loads.begin(), loads.end(), 0.0) / loads.size();
  double var = 0.0;
  for (double x : loads) var += (x - mean) * (x - mean);
  var /= loads.size();

  LoadImbalance out;
  out.floored = *lo < epsilon;
  out.max_to_min = *hi / std::max(*lo, epsilon);
  out.cv = mean > 0.0 ? std::sqrt(var) / mean : 0.0;
  out.min_utilization = mean > 0.0 ? *lo / mean : 1.0;
  return out;
}

}  // namespace ecmem
