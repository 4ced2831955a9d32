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

#ifndef ECMEM_CLUSTER_H_
#define ECMEM_CLUSTER_H_

#include <cmath>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <unordered_map>
#include <vector>

#include "ecmem/codec.h"
#include "ecmem/placement.h"
#include "ecmem/rng.h"

namespace ecmem::sim {

// Virtual time in integer nanoseconds.
using Time = std::int64_t;

inline Time from_us(double us) { return static_cast<Time>(std::llround(us * 1000.0)); }
inline double to_us(Time t) { return static_cast<double>(t) / 1000.0; }

enum class StragglerScope {
  kPerSplit,      // every split draw straggles independently
  kPerOperation,  // an operation hits at most one straggling split
};

struct LatencyModel {
  // Split latency median = split_fixed_us + bytes / bytes_per_us. The
  // defaults give a 1.5 us median for a 512-byte split.
  double split_fixed_us = 1.25;
  double bytes_per_us = 2048.0;
  double sigma = 0.2;  // lognormal dispersion
  double straggler_probability = 0.0;
  double straggler_multiplier = 10.0;
  StragglerScope straggler_scope = StragglerScope::kPerOperation;
  // Latency multiplier at full background load (level 1.0).
  double background_multiplier = 2.0;
  double encode_us = 0.7;
  double decode_us = 1.5;
  // CPU cost of posting one split request.
  double post_us = 0.1;
  // Paid per operation when run-to-completion is disabled.
  double context_switch_us = 4.3;
  // Paid per operation when in-place coding is disabled.
  double copy_us = 1.6;
  // Synchronous disk write added by the SSD-backup comparison row.
  double disk_us = 80.0;

  double median_us(std::size_t bytes) const {
    return split_fixed_us + static_cast<double>(bytes) / bytes_per_us;
  }
};

// Throws Error(kInvalidParams) for non-positive durations or a probability
// outside [0, 1].
void validate(const LatencyModel& model);

struct LatencyContext {
  std::size_t bytes = 512;
  // Unset: straggle with the model's probability. Set: forced.
  std::optional<bool> straggler;
  double background_level = 0.0;  // in [0, 1]
};

struct LatencySample {
  Time duration = 0;
  bool straggler = false;
};

LatencySample sample_split_latency(const LatencyModel& model,
                                   const LatencyContext& context, Rng& rng);

using SlabId = std::int64_t;
inline constexpr SlabId kNoSlab = -1;

enum class MachineState { kUp, kFailed, kPartitioned };
enum class SlabState { kUnmapped, kAvailable, kRegenerating, kEvicted, kFailed };

std::string_view slab_state_name(SlabState state);

struct Slab {
  SlabId id = kNoSlab;
  MachineId machine = -1;
  std::int64_t owner = -1;  // owning manager id
  std::int64_t range = -1;  // address range id within the owner
  int role = -1;            // split index within the range
  SlabState state = SlabState::kUnmapped;
  std::unordered_map<int, Bytes> pages;
  double access_frequency = 0.0;
  std::uint64_t evictions = 0;

  std::size_t stored_bytes() const;
};

struct Machine {
  MachineId id = 0;
  std::uint64_t total_bytes = 0;
  std::uint64_t local_bytes = 0;  // used by local applications
  MachineState state = MachineState::kUp;
  std::map<SlabId, Slab> slabs;
  std::uint64_t evicted_total = 0;
};

struct ClusterConfig {
  int machines = 0;
  std::uint64_t machine_bytes = 64ull << 20;
  std::uint64_t slab_bytes = 64ull << 10;
  LatencyModel latency;
};

enum class IoStatus { kOk, kDisconnect, kSlabUnavailable, kRejected };

std::string_view io_status_name(IoStatus status);

struct IoResult {
  IoStatus status = IoStatus::kOk;
  Time completed_at = 0;
  Bytes bytes;  // reads only
  bool straggler = false;
};

using IoCallback = std::function<void(IoResult)>;
using IoId = std::uint64_t;

// One row of the event log.
struct EventRecord {
  Time time = 0;
  std::string op;
  std::string entity;
  std::string outcome;
};

// Observers for fault notifications. Eviction is delivered as an explicit
// message, distinct from a disconnect.
class ClusterListener {
 public:
  virtual ~ClusterListener() = default;
  virtual void on_machine_failed(MachineId) {}
  virtual void on_machine_recovered(MachineId) {}
  virtual void on_slab_evicted(const Slab&) {}
};

struct FaultScript;

class Cluster {
 public:
  Cluster(const ClusterConfig& config, std::uint64_t seed);

  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  const ClusterConfig& config() const { return config_; }
  const LatencyModel& latency() const { return config_.latency; }
  LatencyModel& mutable_latency() { return config_.latency; }
  int size() const { return static_cast<int>(machines_.size()); }
  Time now() const { return now_; }
  Rng& rng() { return rng_; }

  // Event loop. Events at equal times run in submission order.
  using Action = std::function<std::string()>;
  std::uint64_t submit(Time at, std::string op, std::string entity,
                       Action action);
  // Runs the next event; nullopt when the queue is empty (quiescent).
  std::optional<EventRecord> step();
  // Runs until quiescent. Returns the number of events executed.
  std::size_t run();
  std::size_t run_until(Time t);
  bool quiescent() const { return queue_.empty(); }

  void set_logging(bool enabled) { logging_ = enabled; }
  const std::vector<EventRecord>& event_log() const { return log_; }
  void write_event_log(std::ostream& out) const;

  void add_listener(ClusterListener* listener);

  // Machines and slabs.
  const Machine& machine(MachineId id) const;
  bool is_up(MachineId id) const;
  std::uint64_t free_bytes(MachineId id) const;
  double free_fraction(MachineId id) const;
  double used_fraction(MachineId id) const;
  void set_local_bytes(MachineId id, std::uint64_t bytes);
  bool can_host_slab(MachineId id) const;
  // Bytes of mapped (owned) slabs per machine; failed machines report 0.
  LoadVector mapped_loads() const;

  // Maps a slab for (owner, range, role), reusing a pre-allocated unmapped
  // slab on the machine if any. Returns kNoSlab when out of memory or down.
  SlabId map_slab(MachineId id, std::int64_t owner, std::int64_t range,
                  int role, SlabState state = SlabState::kAvailable);
  SlabId allocate_unmapped(MachineId id);
  bool release_unmapped(MachineId id);
  void free_slab(SlabId slab);
  const Slab* find_slab(SlabId slab) const;
  Slab* find_slab(SlabId slab);
  std::optional<SlabId> resolve(std::int64_t owner, std::int64_t range,
                                int role) const;
  void set_slab_state(SlabId slab, SlabState state);
  void decay_access_frequency(MachineId id);

  // Removes the slab, fails in-flight I/O on it and notifies listeners.
  void evict_slab(SlabId slab);
  void fail_machine(MachineId id, MachineState state = MachineState::kFailed);
  void recover_machine(MachineId id);
  // XORs `mask` into the stored split starting at `offset`.
  void corrupt(SlabId slab, int page, std::size_t offset, const Bytes& mask);
  void set_background_level(double level) { background_level_ = level; }
  double background_level() const { return background_level_; }

  // Remote split I/O. The request is posted at `post_at` (>= now) and
  // completes after a sampled network latency. Failures before completion
  // complete the request immediately with kDisconnect.
  IoId read_split(MachineId id, SlabId slab, int page, Time post_at,
                  LatencyContext context, IoCallback done);
  IoId write_split(MachineId id, SlabId slab, int page, Bytes bytes,
                   Time post_at, LatencyContext context, IoCallback done);
  // Stores a split on the local machine without network I/O (used by
  // regeneration running on the slab's own machine).
  bool store_local(SlabId slab, int page, Bytes bytes);

  LatencyContext context_for(std::size_t bytes,
                             std::optional<bool> straggler = std::nullopt) const;

  void inject(const FaultScript& script);

  std::size_t stored_bytes() const;
  std::size_t in_flight() const { return in_flight_.size(); }

 private:
  struct Pending {
    Time at;
    std::uint64_t seq;
    std::string op;
    std::string entity;
    Action action;
  };
  struct Later {
    bool operator()(const Pending& a, const Pending& b) const {
      if (a.at != b.at) return a.at > b.at;
      return a.seq > b.seq;
    }
  };
  struct InFlight {
    MachineId machine;
    SlabId slab;
    IoCallback done;
  };

  Machine& mutable_machine(MachineId id);
  IoId start_io(MachineId id, SlabId slab, bool is_write, int page,
                Bytes bytes, Time post_at, LatencyContext context,
                IoCallback done);
  void cancel_io(const std::function<bool(const InFlight&)>& match,
                 IoStatus status);

  ClusterConfig config_;
  Rng rng_;
  Time now_ = 0;
  std::uint64_t next_seq_ = 0;
  std::priority_queue<Pending, std::vector<Pending>, Later> queue_;
  std::vector<Machine> machines_;
  std::unordered_map<SlabId, MachineId> slab_index_;
  SlabId next_slab_ = 0;
  std::map<IoId, InFlight> in_flight_;
  IoId next_io_ = 1;
  std::vector<ClusterListener*> listeners_;
  std::vector<EventRecord> log_;
  bool logging_ = true;
  double background_level_ = 0.0;
};

}  // namespace ecmem::sim

#endif  // ECMEM_CLUSTER_H_
