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

#ifndef ECMEM_RESILIENCE_MANAGER_H_
#define ECMEM_RESILIENCE_MANAGER_H_

#include <compare>
#include <cstdint>
#include <deque>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "ecmem/cluster.h"
#include "ecmem/codec.h"
#include "ecmem/error.h"
#include "ecmem/placement.h"

namespace ecmem::rm {

using sim::SlabId;
using sim::Time;

struct ManagerConfig {
  std::int64_t id = 0;  // owner id stamped on every mapped slab
  CodecParams params;
  std::size_t page_size = kDefaultPageSize;
  // Acknowledge writes once the data splits land, then encode and send
  // parity. Off: encode first and acknowledge after all k + r.
  bool async_parity = true;
  // Off: complete at the k-th arriving split (pure late binding). On: wait
  // for k + delta splits and check them against each other, escalating to
  // k + 2*delta + 1 and correcting on a mismatch.
  bool verify_reads = false;
  bool run_to_completion = true;
  bool in_place_coding = true;
  double error_correction_limit = 0.05;
  double slab_regeneration_limit = 0.20;
  int health_window = 64;
};

// Throws Error(kInvalidParams).
void validate(const ManagerConfig& config);

struct PageAddress {
  std::int64_t range = 0;
  int page = 0;

  auto operator<=>(const PageAddress&) const = default;
};

struct SlabRef {
  MachineId machine = -1;
  SlabId slab = sim::kNoSlab;
};

enum class SlabHealth { kHealthy, kFailed, kRegenerating };

struct AddressRange {
  std::int64_t id = 0;
  int group = -1;
  int page_capacity = 0;
  std::vector<SlabRef> refs;        // k data refs then r parity refs
  std::vector<SlabHealth> health;   // per split index
  std::vector<bool> written;        // per page
  bool unrecoverable = false;

  int healthy_count() const;
};

struct WriteCompletion {
  PageAddress address;
  Time submitted_at = 0;
  Time started_at = 0;
  Time data_acked_at = -1;     // caller-visible completion
  Time fully_durable_at = -1;  // all k + r splits stored; -1 if never
  Time coding_time = 0;        // encode time on the caller's critical path
  int fan_out = 0;
  std::optional<ErrorCode> error;

  bool ok() const { return !error.has_value(); }
};

struct ReadResult {
  PageAddress address;
  Time submitted_at = 0;
  Time started_at = 0;
  Time completed_at = -1;
  Time coding_time = 0;
  Bytes page;
  int fan_out = 0;
  bool corrected = false;
  std::vector<int> corrupted;  // split indices found corrupted
  std::optional<ErrorCode> error;

  bool ok() const { return !error.has_value(); }
};

struct MachineHealth {
  MachineId machine = -1;
  std::uint64_t errors = 0;  // lifetime corrupted splits
  double error_rate = 0.0;   // over the sliding window
  double error_correction_limit = 0.0;
  double slab_regeneration_limit = 0.0;
};

// One row of the completion log.
struct OpRecord {
  Time submitted_at = 0;
  Time completed_at = 0;
  char op = 'R';
  int fan_out = 0;
  std::string outcome;
};

using WriteCallback = std::function<void(const WriteCompletion&)>;
using ReadCallback = std::function<void(const ReadResult&)>;
// Invoked with (range id, split index) whenever a slab must be rebuilt.
using RegenerationHandler = std::function<void(std::int64_t, int)>;

// The client-side data path. Maps address ranges onto k + r remote slabs,
// writes pages as k data + r parity splits and reads them back with late
// binding. Operations on one page address are serialized; everything else
// proceeds concurrently on the simulated cluster.
class ResilienceManager : public sim::ClusterListener {
 public:
  ResilienceManager(sim::Cluster& cluster, PlacementPlan plan,
                    ManagerConfig config, std::uint64_t seed);
  ~ResilienceManager() override = default;

  ResilienceManager(const ResilienceManager&) = delete;
  ResilienceManager& operator=(const ResilienceManager&) = delete;

  const ManagerConfig& config() const { return config_; }
  const Codec& codec() const { return codec_; }
  const PlacementPlan& plan() const { return plan_; }
  sim::Cluster& cluster() { return cluster_; }

  // Allocates the range's k + r slabs on the least-loaded usable members of
  // its coding group. Idempotent. Throws Error(kCapacityExhausted).
  const AddressRange& map_range(std::int64_t range_id);
  const AddressRange& range(std::int64_t range_id) const;
  bool is_mapped(std::int64_t range_id) const;
  std::vector<std::int64_t> mapped_ranges() const;

  // Asynchronous operations; callbacks run at the simulated completion time.
  // `on_durable` fires once every split is stored (or durability is lost).
  void remote_write(PageAddress address, Bytes page, WriteCallback on_ack,
                    WriteCallback on_durable = {});
  void remote_read(PageAddress address, ReadCallback done);
  // Read that fans out to k + 2*delta + 1 splits up front and corrects.
  void read_with_correction(PageAddress address, ReadCallback done);

  // Submit and drive the simulation until the operation finishes.
  WriteCompletion write_sync(PageAddress address, Bytes page);
  ReadResult read_sync(PageAddress address);

  void handle_disconnect(MachineId machine);

  MachineHealth health(MachineId machine) const;
  bool is_suspect(MachineId machine) const;
  // Fan-out a read of this range would use right now.
  int read_fan_out(std::int64_t range_id) const;

  const std::vector<OpRecord>& completion_log() const { return log_; }
  void write_completion_log(std::ostream& out) const;
  std::uint64_t unrecoverable_reads() const { return unrecoverable_reads_; }

  // Regeneration hooks.
  void set_regeneration_handler(RegenerationHandler handler) {
    regeneration_handler_ = std::move(handler);
  }
  // Points split `role` at `target` and disables writes to it.
  void begin_regeneration(std::int64_t range_id, int role, SlabRef target);
  // Applies writes deferred during regeneration, then routes reads to the
  // slab again.
  void finish_regeneration(std::int64_t range_id, int role);
  // Target lost mid-way: mark failed and ask for another regeneration.
  void abort_regeneration(std::int64_t range_id, int role);
  // Runs `task` under the page's serialization. The task must invoke the
  // release callback exactly once when done.
  void run_exclusive(PageAddress address,
                     std::function<void(std::function<void()>)> task);
  Rng& rng() { return rng_; }

  // sim::ClusterListener
  void on_machine_failed(MachineId machine) override;
  void on_machine_recovered(MachineId machine) override;
  void on_slab_evicted(const sim::Slab& slab) override;

 private:
  struct WriteOp;
  struct ReadOp;
  struct DeferredWrite {
    Bytes bytes;
    std::vector<std::shared_ptr<WriteOp>> waiters;
  };
  struct RangeState {
    AddressRange range;
    // Per split index, per page: latest write that could not be applied.
    std::map<int, std::map<int, DeferredWrite>> deferred;
    std::set<int> flushing;
  };
  struct HealthWindow {
    std::deque<bool> recent;
    std::uint64_t errors = 0;
    std::uint64_t window_errors = 0;
  };

  RangeState& state(std::int64_t range_id);
  const RangeState& state(std::int64_t range_id) const;
  AddressRange& checked_range(PageAddress address);
  std::vector<MachineId> choose_machines(std::int64_t range_id);

  void enqueue(PageAddress address, std::function<void()> start);
  void release(PageAddress address);

  void start_write(const std::shared_ptr<WriteOp>& op);
  void post_write_splits(const std::shared_ptr<WriteOp>& op,
                         const std::vector<int>& roles, Time post_at);
  void on_write_ack(const std::shared_ptr<WriteOp>& op, int role,
                    const sim::IoResult& result);
  void maybe_finish_write(const std::shared_ptr<WriteOp>& op);
  void defer_split(const std::shared_ptr<WriteOp>& op, int role);
  void fail_write(const std::shared_ptr<WriteOp>& op, ErrorCode code);
  void mark_durable(const std::shared_ptr<WriteOp>& op, int role, Time at);
  void flush_deferred(std::int64_t range_id, int role);

  void start_read(const std::shared_ptr<ReadOp>& op);
  bool issue_more_reads(const std::shared_ptr<ReadOp>& op, int count);
  void on_read_arrival(const std::shared_ptr<ReadOp>& op, int role,
                       const sim::IoResult& result);
  void evaluate_read(const std::shared_ptr<ReadOp>& op);
  void finish_read(const std::shared_ptr<ReadOp>& op, Time coding);
  void fail_read(const std::shared_ptr<ReadOp>& op, ErrorCode code);

  void mark_failed(std::int64_t range_id, int role);
  void check_recoverable(std::int64_t range_id);
  void request_regeneration(std::int64_t range_id, int role);
  void record_health(MachineId machine, bool error);
  Time penalties() const;

  sim::Cluster& cluster_;
  PlacementPlan plan_;
  ManagerConfig config_;
  Codec codec_;
  Rng rng_;
  std::map<std::int64_t, RangeState> ranges_;
  std::map<PageAddress, std::deque<std::function<void()>>> page_queues_;
  std::map<MachineId, HealthWindow> health_;
  RegenerationHandler regeneration_handler_;
  std::vector<OpRecord> log_;
  std::uint64_t unrecoverable_reads_ = 0;
};

}  // namespace ecmem::rm

#endif  // ECMEM_RESILIENCE_MANAGER_H_
