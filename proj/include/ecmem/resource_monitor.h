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

#ifndef ECMEM_RESOURCE_MONITOR_H_
#define ECMEM_RESOURCE_MONITOR_H_

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <set>
#include <tuple>
#include <vector>

#include "ecmem/cluster.h"
#include "ecmem/resilience_manager.h"
#include "ecmem/rng.h"

namespace ecmem::monitor {

using sim::SlabId;
using sim::Time;

// Slab size lives in sim::ClusterConfig; every monitor uses the cluster's.
struct MonitorConfig {
  double headroom = 0.25;
  Time control_period = sim::from_us(1e6);
  int evict_batch = 1;       // E
  int extra_candidates = 2;  // E'
};

// Throws Error(kInvalidParams).
void validate(const MonitorConfig& config);

struct SlabUsageStats {
  SlabId slab = sim::kNoSlab;
  double access_frequency = 0.0;
};

// Mapped, evictable slabs on the machine, ordered by id.
std::vector<SlabUsageStats> slab_usage(const sim::Cluster& cluster,
                                       MachineId machine);

struct TickActions {
  MachineId machine = -1;
  double free_before = 0.0;
  double free_after = 0.0;
  int allocated = 0;
  int released = 0;
  std::vector<SlabId> evicted;

  bool idle() const { return allocated == 0 && released == 0 && evicted.empty(); }
};

// Samples E + E' evictable slabs and evicts the E least frequently
// accessed (ties by slab id). Throws Error(kInsufficientSlabs) when the
// machine hosts fewer than E evictable slabs.
std::vector<SlabId> batch_evict(sim::Cluster& cluster, MachineId machine,
                                int evict, int extra, Rng& rng);

// One control period on one machine. Below headroom: give back unmapped
// slabs, then evict in batches. Above: pre-allocate unmapped slabs down to
// the headroom. Access frequencies are halved afterwards.
TickActions control_tick(sim::Cluster& cluster, MachineId machine,
                         const MonitorConfig& config, Rng& rng);

// Rebuilds lost slabs for any number of resilience managers. Targets are
// chosen when the request arrives, so concurrent requests are served in
// arrival order against up-to-date memory usage.
class RegenerationEngine {
 public:
  RegenerationEngine(sim::Cluster& cluster, std::uint64_t seed);

  RegenerationEngine(const RegenerationEngine&) = delete;
  RegenerationEngine& operator=(const RegenerationEngine&) = delete;

  // Installs this engine as the manager's regeneration handler.
  void attach(rm::ResilienceManager& manager);

  // Starts rebuilding split `role` of `range_id` and returns the new slab.
  // Throws Error(kUnrecoverableRange) when fewer than k healthy slabs remain
  // and Error(kCapacityExhausted) when no machine can host the slab.
  rm::SlabRef regenerate_slab(rm::ResilienceManager& manager,
                              std::int64_t range_id, int role,
                              std::function<void(bool)> done = {});

  // Lowest-usage up machine outside the range, preferring its coding group.
  MachineId choose_target(const rm::ResilienceManager& manager,
                          std::int64_t range_id) const;

  int in_flight() const { return static_cast<int>(active_.size()); }
  int in_flight_on(MachineId machine) const;
  std::uint64_t completed() const { return completed_; }
  std::uint64_t failed() const { return failed_; }

 private:
  struct Task;
  using Key = std::tuple<std::int64_t, std::int64_t, int>;

  void handle_request(rm::ResilienceManager& manager, std::int64_t range_id,
                      int role);
  void run_page(const std::shared_ptr<Task>& task, std::size_t index,
                int attempt);
  void finish(const std::shared_ptr<Task>& task, bool ok);
  bool stale(const Task& task) const;

  sim::Cluster& cluster_;
  Rng rng_;
  std::map<Key, std::shared_ptr<Task>> active_;
  std::uint64_t completed_ = 0;
  std::uint64_t failed_ = 0;
};

struct MonitorRow {
  Time time = 0;
  MachineId machine = -1;
  double free_fraction = 0.0;
  int slabs_hosted = 0;
  std::uint64_t slabs_evicted = 0;
  int regenerations_in_flight = 0;
};

// One monitor per machine, ticking every control period on the event loop.
class MonitorFleet {
 public:
  MonitorFleet(sim::Cluster& cluster, MonitorConfig config, std::uint64_t seed,
               const RegenerationEngine* engine = nullptr);

  // Schedules ticks at start, start + period, ... up to and including `end`.
  void schedule(Time start, Time end);
  // Runs one tick on every up machine immediately.
  std::vector<TickActions> tick_all();

  const std::vector<MonitorRow>& rows() const { return rows_; }
  void write_csv(std::ostream& out) const;

 private:
  sim::Cluster& cluster_;
  MonitorConfig config_;
  std::vector<Rng> rngs_;
  const RegenerationEngine* engine_;
  std::vector<MonitorRow> rows_;
};

}  // namespace ecmem::monitor

#endif  // ECMEM_RESOURCE_MONITOR_H_
