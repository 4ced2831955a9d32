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

#include "ecmem/resilience_manager.h"

#include <algorithm>
#include <limits>
#include <ostream>

namespace ecmem::rm {

using sim::IoResult;
using sim::IoStatus;

struct ResilienceManager::WriteOp {
  PageAddress address;
  Bytes page;
  std::vector<Split> splits;
  WriteCallback on_ack;
  WriteCallback on_durable;
  WriteCompletion result;
  std::map<int, SlabId> outstanding;  // role -> slab the split was sent to
  std::set<int> acked;
  std::set<int> deferred;
  Time last_ack = 0;
  int straggle_role = -1;
  bool data_phase_done = false;
  bool parity_phase_done = false;
  bool caller_acked = false;
  bool durable_reported = false;
  bool released = false;
  bool failed = false;
};

struct ResilienceManager::ReadOp {
  PageAddress address;
  ReadCallback done;
  ReadResult result;
  bool correcting = false;
  std::set<int> tried;
  std::vector<Split> arrivals;
  std::map<int, MachineId> sources;
  int outstanding = 0;
  int needed = 0;
  bool finished = false;
};

void validate(const ManagerConfig& config) {
  validate(config.params);
  if (config.page_size == 0) {
    throw Error(ErrorCode::kInvalidParams, "page size must be positive");
  }
  if (!(config.error_correction_limit >= 0.0 &&
        config.error_correction_limit <= 1.0 &&
        config.slab_regeneration_limit >= config.error_correction_limit &&
        config.slab_regeneration_limit <= 1.0)) {
    throw Error(ErrorCode::kInvalidParams,
                "need 0 <= ErrorCorrectionLimit <= SlabRegenerationLimit <= 1");
  }
  if (config.health_window < 1) {
    throw Error(ErrorCode::kInvalidParams, "health window must be >= 1");
  }
}

int AddressRange::healthy_count() const {
  return static_cast<int>(
      std::count(health.begin(), health.end(), SlabHealth::kHealthy));
}

ResilienceManager::ResilienceManager(sim::Cluster& cluster, PlacementPlan plan,
                                     ManagerConfig config, std::uint64_t seed)
    : cluster_(cluster),
      plan_(std::move(plan)),
      config_(config),
      codec_(make_codec(config.params, config.page_size)),
      rng_(make_rng(seed, 200 + static_cast<std::uint64_t>(config.id))) {
  validate(config_);
  if (plan_.params.k != config_.params.k ||
      plan_.params.r != config_.params.r) {
    throw Error(ErrorCode::kInvalidParams,
                "placement plan was built for a different (k, r)");
  }
  if (plan_.machines != cluster_.size()) {
    throw Error(ErrorCode::kInvalidParams,
                "placement plan and cluster disagree on machine count");
  }
  if (cluster_.config().slab_bytes < codec_.split_size()) {
    throw Error(ErrorCode::kInvalidParams, "slab smaller than one split");
  }
  cluster_.add_listener(this);
}

ResilienceManager::RangeState& ResilienceManager::state(std::int64_t id) {
  auto it = ranges_.find(id);
  if (it == ranges_.end()) {
    throw Error(ErrorCode::kUnknownEntity,
                "range " + std::to_string(id) + " is not mapped");
  }
  return it->second;
}

const ResilienceManager::RangeState& ResilienceManager::state(
    std::int64_t id) const {
  return const_cast<ResilienceManager*>(this)->state(id);
}

const AddressRange& ResilienceManager::range(std::int64_t id) const {
  return state(id).range;
}

bool ResilienceManager::is_mapped(std::int64_t id) const {
  return ranges_.contains(id);
}

std::vector<std::int64_t> ResilienceManager::mapped_ranges() const {
  std::vector<std::int64_t> ids;
  for (const auto& [id, rs] : ranges_) ids.push_back(id);
  return ids;
}

AddressRange& ResilienceManager::checked_range(PageAddress address) {
  AddressRange& r = state(address.range).range;
  if (address.page < 0 || address.page >= r.page_capacity) {
    throw Error(ErrorCode::kUnknownEntity,
                "page " + std::to_string(address.page) + " outside range " +
                    std::to_string(address.range));
  }
  return r;
}

std::vector<MachineId> ResilienceManager::choose_machines(std::int64_t id) {
  const int width = codec_.total();
  const LoadVector loads = cluster_.mapped_loads();
  auto exhausted = [&](const std::string& why) {
    return Error(ErrorCode::kCapacityExhausted,
                 "range " + std::to_string(id) + ": " + why);
  };
  switch (plan_.scheme) {
    case Scheme::kCodingSets: {
      ExtendedGroup usable;
      for (MachineId m : plan_.groups[plan_.group_for_range(id)].members) {
        if (cluster_.can_host_slab(m)) usable.members.push_back(m);
      }
      if (static_cast<int>(usable.members.size()) < width) {
        throw exhausted("fewer than k+r usable machines in its group");
      }
      return select_members(usable, loads, config_.params);
    }
    case Scheme::kEcCache: {
      const auto& members = plan_.groups[plan_.group_for_range(id)].members;
      for (MachineId m : members) {
        if (!cluster_.can_host_slab(m)) {
          throw exhausted("stripe member cannot host a slab");
        }
      }
      return members;
    }
    case Scheme::kPowerOfTwo: {
      LoadVector masked = loads;
      int usable = 0;
      for (MachineId m = 0; m < cluster_.size(); ++m) {
        if (cluster_.can_host_slab(m)) {
          ++usable;
        } else {
          masked[m] = std::numeric_limits<double>::infinity();
        }
      }
      if (usable < width) throw exhausted("fewer than k+r usable machines");
      std::vector<MachineId> chosen;
      while (static_cast<int>(chosen.size()) < width) {
        const MachineId m = power_of_two_pick(masked, rng_);
        if (masked[m] == std::numeric_limits<double>::infinity()) continue;
        chosen.push_back(m);
        masked[m] = std::numeric_limits<double>::infinity();
      }
      return chosen;
    }
  }
  throw exhausted("unknown scheme");
}

const AddressRange& ResilienceManager::map_range(std::int64_t id) {
  if (auto it = ranges_.find(id); it != ranges_.end()) return it->second.range;
  const auto machines = choose_machines(id);
  RangeState rs;
  AddressRange& r = rs.range;
  r.id = id;
  r.group = plan_.group_for_range(id);
  r.page_capacity =
      static_cast<int>(cluster_.config().slab_bytes / codec_.split_size());
  r.written.assign(r.page_capacity, false);
  for (int role = 0; role < codec_.total(); ++role) {
    const SlabId slab =
        cluster_.map_slab(machines[role], config_.id, id, role);
    if (slab == sim::kNoSlab) {
      for (const auto& ref : r.refs) cluster_.free_slab(ref.slab);
      throw Error(ErrorCode::kCapacityExhausted,
                  "machine " + std::to_string(machines[role]) +
                      " refused a slab");
    }
    r.refs.push_back(SlabRef{machines[role], slab});
    r.health.push_back(SlabHealth::kHealthy);
  }
  if (static_cast<std::int64_t>(plan_.assignments.size()) <= id) {
    plan_.assignments.resize(id + 1);
  }
  plan_.assignments[id] = Assignment{r.group, machines};
  return ranges_.emplace(id, std::move(rs)).first->second.range;
}

Time ResilienceManager::penalties() const {
  double us = 0.0;
  if (!config_.run_to_completion) us += cluster_.latency().context_switch_us;
  if (!config_.in_place_coding) us += cluster_.latency().copy_us;
  return sim::from_us(us);
}

// ---------------------------------------------------------------------------
// Per-page serialization.

void ResilienceManager::enqueue(PageAddress address,
                                std::function<void()> start) {
  auto& q = page_queues_[address];
  q.push_back(std::move(start));
  if (q.size() == 1) {
    auto first = q.front();
    first();
  }
}

void ResilienceManager::release(PageAddress address) {
  auto it = page_queues_.find(address);
  if (it == page_queues_.end() || it->second.empty()) return;
  it->second.pop_front();
  if (it->second.empty()) {
    page_queues_.erase(it);
    return;
  }
  cluster_.submit(cluster_.now(), "dequeue",
                  "r" + std::to_string(address.range) + "/p" +
                      std::to_string(address.page),
                  [this, address]() {
                    auto next = page_queues_.at(address).front();
                    next();
                    return std::string("started");
                  });
}

void ResilienceManager::run_exclusive(
    PageAddress address, std::function<void(std::function<void()>)> task) {
  enqueue(address, [this, address, task = std::move(task)]() {
    task([this, address]() { release(address); });
  });
}

// ---------------------------------------------------------------------------
// Writes.

void ResilienceManager::remote_write(PageAddress address, Bytes page,
                                     WriteCallback on_ack,
                                     WriteCallback on_durable) {
  checked_range(address);
  if (page.size() != codec_.page_size()) {
    throw Error(ErrorCode::kLengthMismatch, "page has wrong size");
  }
  auto op = std::make_shared<WriteOp>();
  op->address = address;
  op->page = std::move(page);
  op->on_ack = std::move(on_ack);
  op->on_durable = std::move(on_durable);
  op->result.address = address;
  op->result.submitted_at = cluster_.now();
  enqueue(address, [this, op]() { start_write(op); });
}

void ResilienceManager::start_write(const std::shared_ptr<WriteOp>& op) {
  const Time now = cluster_.now();
  op->result.started_at = now;
  RangeState& rs = state(op->address.range);
  AddressRange& r = rs.range;
  if (r.unrecoverable || r.healthy_count() < codec_.k()) {
    fail_write(op, ErrorCode::kWriteFailed);
    return;
  }
  op->splits = encode_page(codec_, op->page);
  r.written[op->address.page] = true;

  const auto& model = cluster_.latency();
  if (model.straggler_scope == sim::StragglerScope::kPerOperation &&
      model.straggler_probability > 0.0) {
    std::bernoulli_distribution coin(model.straggler_probability);
    if (coin(rng_)) {
      std::uniform_int_distribution<int> pick(0, codec_.total() - 1);
      op->straggle_role = pick(rng_);
    }
  }

  std::vector<int> data_roles;
  std::vector<int> all_roles;
  for (int role = 0; role < codec_.total(); ++role) {
    if (r.health[role] != SlabHealth::kHealthy) {
      defer_split(op, role);
      continue;
    }
    all_roles.push_back(role);
    if (role < codec_.k()) data_roles.push_back(role);
  }

  if (config_.async_parity) {
    // Data splits are the page itself; they go out before any encoding.
    op->result.fan_out = static_cast<int>(data_roles.size());
    post_write_splits(op, data_roles, now);
    maybe_finish_write(op);
  } else {
    const Time encoded = now + sim::from_us(model.encode_us);
    op->result.coding_time = encoded - now;
    op->data_phase_done = true;
    op->parity_phase_done = true;
    op->result.fan_out = static_cast<int>(all_roles.size());
    post_write_splits(op, all_roles, encoded);
    maybe_finish_write(op);
  }
}

void ResilienceManager::post_write_splits(const std::shared_ptr<WriteOp>& op,
                                          const std::vector<int>& roles,
                                          Time post_at) {
  const AddressRange& r = state(op->address.range).range;
  const Time post = sim::from_us(cluster_.latency().post_us);
  const bool per_op = cluster_.latency().straggler_scope ==
                      sim::StragglerScope::kPerOperation;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    const int role = roles[i];
    const SlabRef ref = r.refs[role];
    op->outstanding[role] = ref.slab;
    std::optional<bool> straggle;
    if (per_op) straggle = role == op->straggle_role;
    cluster_.write_split(
        ref.machine, ref.slab, op->address.page, op->splits[role].bytes,
        post_at + static_cast<Time>(i + 1) * post,
        cluster_.context_for(codec_.split_size(), straggle),
        [this, op, role](IoResult result) { on_write_ack(op, role, result); });
  }
}

void ResilienceManager::on_write_ack(const std::shared_ptr<WriteOp>& op,
                                     int role, const IoResult& result) {
  auto it = op->outstanding.find(role);
  if (it == op->outstanding.end()) return;
  const SlabId sent_to = it->second;
  op->outstanding.erase(it);
  if (op->failed) return;

  RangeState& rs = state(op->address.range);
  const bool same_slab = rs.range.refs[role].slab == sent_to;
  if (result.status == IoStatus::kOk && same_slab) {
    mark_durable(op, role, cluster_.now());
  } else {
    if (same_slab && (result.status == IoStatus::kDisconnect ||
                      result.status == IoStatus::kSlabUnavailable)) {
      mark_failed(op->address.range, role);
    }
    defer_split(op, role);
  }

  if (config_.async_parity && !op->data_phase_done) {
    bool data_pending = false;
    for (const auto& [pending, slab] : op->outstanding) {
      if (pending < codec_.k()) data_pending = true;
    }
    if (!data_pending) {
      op->data_phase_done = true;
      if (static_cast<int>(op->acked.size()) >= codec_.k()) {
        // Respond before encoding so the caller never waits for parity.
        op->caller_acked = true;
        op->result.data_acked_at = cluster_.now() + penalties();
        op->result.error.reset();
        cluster_.submit(op->result.data_acked_at, "write-ack",
                        "r" + std::to_string(op->address.range) + "/p" +
                            std::to_string(op->address.page),
                        [this, op]() {
                          log_.push_back(OpRecord{op->result.submitted_at,
                                                  op->result.data_acked_at,
                                                  'W', op->result.fan_out,
                                                  "ok"});
                          if (op->on_ack) op->on_ack(op->result);
                          return std::string("ok");
                        });
      }
      // Encode after the response, then ship the parity.
      const AddressRange& r = rs.range;
      std::vector<int> parity;
      for (int p = codec_.k(); p < codec_.total(); ++p) {
        if (r.health[p] == SlabHealth::kHealthy && !op->deferred.contains(p)) {
          parity.push_back(p);
        }
      }
      op->parity_phase_done = true;
      op->result.fan_out += static_cast<int>(parity.size());
      if (codec_.r() > 0) {
        post_write_splits(
            op, parity,
            cluster_.now() + sim::from_us(cluster_.latency().encode_us));
      }
    }
  }
  maybe_finish_write(op);
}

void ResilienceManager::maybe_finish_write(const std::shared_ptr<WriteOp>& op) {
  if (op->failed) return;
  const bool phases_done = op->data_phase_done && op->parity_phase_done;
  if (config_.async_parity && !op->data_phase_done &&
      op->outstanding.empty()) {
    // No data split could be posted; let the parity phase run.
    op->data_phase_done = true;
    const AddressRange& r = state(op->address.range).range;
    std::vector<int> parity;
    for (int p = codec_.k(); p < codec_.total(); ++p) {
      if (r.health[p] == SlabHealth::kHealthy && !op->deferred.contains(p)) {
        parity.push_back(p);
      }
    }
    op->parity_phase_done = true;
    op->result.fan_out += static_cast<int>(parity.size());
    post_write_splits(
        op, parity,
        cluster_.now() + sim::from_us(cluster_.latency().encode_us));
    if (!op->outstanding.empty()) return;
  }

  const bool all_posted_done = phases_done && op->outstanding.empty();
  if (!op->caller_acked && static_cast<int>(op->acked.size()) >= codec_.k() &&
      (all_posted_done || (config_.async_parity && op->data_phase_done))) {
    op->caller_acked = true;
    op->result.data_acked_at = cluster_.now() + penalties();
    cluster_.submit(op->result.data_acked_at, "write-ack",
                    "r" + std::to_string(op->address.range) + "/p" +
                        std::to_string(op->address.page),
                    [this, op]() {
                      log_.push_back(OpRecord{op->result.submitted_at,
                                              op->result.data_acked_at, 'W',
                                              op->result.fan_out, "ok"});
                      if (op->on_ack) op->on_ack(op->result);
                      return std::string("ok");
                    });
  }
  if (!all_posted_done || op->released) return;

  if (!op->caller_acked) {
    fail_write(op, ErrorCode::kWriteFailed);
    return;
  }
  op->released = true;
  release(op->address);
  mark_durable(op, -1, cluster_.now());
}

void ResilienceManager::mark_durable(const std::shared_ptr<WriteOp>& op,
                                     int role, Time at) {
  if (role >= 0) {
    op->acked.insert(role);
    op->deferred.erase(role);
    op->last_ack = std::max(op->last_ack, at);
  }
  if (op->durable_reported || op->failed || !op->released) return;
  if (static_cast<int>(op->acked.size()) < codec_.total()) return;
  op->durable_reported = true;
  op->result.fully_durable_at =
      std::max(op->last_ack, op->result.data_acked_at);
  cluster_.submit(op->result.fully_durable_at, "write-durable",
                  "r" + std::to_string(op->address.range) + "/p" +
                      std::to_string(op->address.page),
                  [op]() {
                    if (op->on_durable) op->on_durable(op->result);
                    return std::string("ok");
                  });
}

void ResilienceManager::defer_split(const std::shared_ptr<WriteOp>& op,
                                    int role) {
  RangeState& rs = state(op->address.range);
  op->deferred.insert(role);
  auto& entry = rs.deferred[role][op->address.page];
  entry.bytes = op->splits[role].bytes;
  entry.waiters.push_back(op);
}

void ResilienceManager::fail_write(const std::shared_ptr<WriteOp>& op,
                                   ErrorCode code) {
  if (op->failed) return;
  op->failed = true;
  op->result.error = code;
  const bool notify_ack = !op->caller_acked;
  if (notify_ack) op->result.data_acked_at = cluster_.now();
  if (!op->released) {
    op->released = true;
    release(op->address);
  }
  cluster_.submit(cluster_.now(), "write-failed",
                  "r" + std::to_string(op->address.range) + "/p" +
                      std::to_string(op->address.page),
                  [this, op, notify_ack]() {
                    if (notify_ack) {
                      log_.push_back(OpRecord{op->result.submitted_at,
                                              op->result.data_acked_at, 'W',
                                              op->result.fan_out,
                                              std::string(error_code_name(
                                                  *op->result.error))});
                      if (op->on_ack) op->on_ack(op->result);
                    }
                    if (!op->durable_reported) {
                      op->durable_reported = true;
                      if (op->on_durable) op->on_durable(op->result);
                    }
                    return std::string(error_code_name(*op->result.error));
                  });
}

void ResilienceManager::flush_deferred(std::int64_t range_id, int role) {
  RangeState& rs = state(range_id);
  AddressRange& r = rs.range;
  auto pending = std::move(rs.deferred[role]);
  rs.deferred.erase(role);
  if (pending.empty()) {
    rs.flushing.erase(role);
    r.health[role] = SlabHealth::kHealthy;
    return;
  }
  rs.flushing.insert(role);
  auto remaining = std::make_shared<int>(static_cast<int>(pending.size()));
  const SlabRef ref = r.refs[role];
  const Time post = sim::from_us(cluster_.latency().post_us);
  int i = 0;
  for (auto& [page, entry] : pending) {
    auto shared = std::make_shared<DeferredWrite>(std::move(entry));
    cluster_.write_split(
        ref.machine, ref.slab, page, shared->bytes,
        cluster_.now() + (++i) * post,
        cluster_.context_for(codec_.split_size(), false),
        [this, range_id, role, page, shared, remaining,
         slab = ref.slab](IoResult result) {
          RangeState& st = state(range_id);
          if (result.status == IoStatus::kOk) {
            for (auto& w : shared->waiters) {
              mark_durable(w, role, cluster_.now());
            }
          } else {
            auto& again = st.deferred[role][page];
            if (again.waiters.empty()) again.bytes = shared->bytes;
            again.waiters.insert(again.waiters.begin(),
                                 shared->waiters.begin(),
                                 shared->waiters.end());
          }
          if (--*remaining > 0) return;
          if (st.range.refs[role].slab != slab ||
              st.range.health[role] != SlabHealth::kRegenerating) {
            // The slab was lost while flushing; a new regeneration owns it.
            st.flushing.erase(role);
            return;
          }
          flush_deferred(range_id, role);
        });
  }
}

// ---------------------------------------------------------------------------
// Reads.

void ResilienceManager::remote_read(PageAddress address, ReadCallback done) {
  checked_range(address);
  auto op = std::make_shared<ReadOp>();
  op->address = address;
  op->done = std::move(done);
  op->result.address = address;
  op->result.submitted_at = cluster_.now();
  enqueue(address, [this, op]() { start_read(op); });
}

void ResilienceManager::read_with_correction(PageAddress address,
                                             ReadCallback done) {
  checked_range(address);
  auto op = std::make_shared<ReadOp>();
  op->address = address;
  op->done = std::move(done);
  op->correcting = true;
  op->result.address = address;
  op->result.submitted_at = cluster_.now();
  enqueue(address, [this, op]() { start_read(op); });
}

int ResilienceManager::read_fan_out(std::int64_t range_id) const {
  const AddressRange& r = range(range_id);
  const int k = codec_.k();
  const int delta = config_.params.delta;
  bool suspect = false;
  for (int role = 0; role < codec_.total(); ++role) {
    if (r.health[role] == SlabHealth::kHealthy &&
        is_suspect(r.refs[role].machine)) {
      suspect = true;
    }
  }
  const int wanted = suspect ? k + 2 * delta + 1 : k + delta;
  return std::min(wanted, r.healthy_count());
}

void ResilienceManager::start_read(const std::shared_ptr<ReadOp>& op) {
  const Time now = cluster_.now();
  op->result.started_at = now;
  AddressRange& r = state(op->address.range).range;
  if (r.unrecoverable || r.healthy_count() < codec_.k()) {
    fail_read(op, ErrorCode::kUnrecoverableRead);
    return;
  }
  if (!r.written[op->address.page]) {
    // Never-written memory reads as zeros without touching the network.
    op->result.page.assign(codec_.page_size(), 0);
    finish_read(op, 0);
    return;
  }

  const int k = codec_.k();
  const int delta = config_.params.delta;
  int fan_out = read_fan_out(op->address.range);
  if (fan_out > k + delta) op->correcting = true;
  if (op->correcting) fan_out = std::min(k + 2 * delta + 1, r.healthy_count());
  if (op->correcting) {
    op->needed = fan_out;
  } else if (config_.verify_reads) {
    op->needed = std::min(fan_out, k + delta);
  } else {
    op->needed = k;
  }
  issue_more_reads(op, fan_out);
}

bool ResilienceManager::issue_more_reads(const std::shared_ptr<ReadOp>& op,
                                         int count) {
  const AddressRange& r = state(op->address.range).range;
  std::vector<int> candidates;
  for (int role = 0; role < codec_.total(); ++role) {
    if (r.health[role] == SlabHealth::kHealthy && !op->tried.contains(role)) {
      candidates.push_back(role);
    }
  }
  if (candidates.empty() || count <= 0) return false;
  std::shuffle(candidates.begin(), candidates.end(), rng_);
  candidates.resize(std::min<std::size_t>(candidates.size(), count));

  const auto& model = cluster_.latency();
  int straggler = -1;
  const bool per_op =
      model.straggler_scope == sim::StragglerScope::kPerOperation;
  if (per_op && op->tried.empty() && model.straggler_probability > 0.0) {
    std::bernoulli_distribution coin(model.straggler_probability);
    if (coin(rng_)) {
      std::uniform_int_distribution<int> pick(
          0, static_cast<int>(candidates.size()) - 1);
      straggler = candidates[pick(rng_)];
    }
  }
  const Time post = sim::from_us(model.post_us);
  const Time now = cluster_.now();
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const int role = candidates[i];
    const SlabRef ref = r.refs[role];
    op->tried.insert(role);
    op->sources[role] = ref.machine;
    ++op->outstanding;
    ++op->result.fan_out;
    std::optional<bool> straggle;
    if (per_op) straggle = role == straggler;
    cluster_.read_split(
        ref.machine, ref.slab, op->address.page,
        now + static_cast<Time>(i + 1) * post,
        cluster_.context_for(codec_.split_size(), straggle),
        [this, op, role, slab = ref.slab](IoResult result) {
          if (result.status == IoStatus::kDisconnect ||
              result.status == IoStatus::kSlabUnavailable) {
            const AddressRange& cur = state(op->address.range).range;
            if (cur.refs[role].slab == slab &&
                cur.health[role] == SlabHealth::kHealthy) {
              mark_failed(op->address.range, role);
            }
          }
          on_read_arrival(op, role, result);
        });
  }
  return true;
}

void ResilienceManager::on_read_arrival(const std::shared_ptr<ReadOp>& op,
                                        int role, const IoResult& result) {
  --op->outstanding;
  // Late splits are dropped: the page buffer is no longer registered.
  if (op->finished) return;
  if (result.status == IoStatus::kOk) {
    op->arrivals.push_back(Split{role, result.bytes});
  } else {
    const int possible =
        static_cast<int>(op->arrivals.size()) + op->outstanding;
    if (possible < op->needed) issue_more_reads(op, op->needed - possible);
  }
  if (static_cast<int>(op->arrivals.size()) >= op->needed ||
      op->outstanding == 0) {
    evaluate_read(op);
  }
}

void ResilienceManager::evaluate_read(const std::shared_ptr<ReadOp>& op) {
  const int k = codec_.k();
  const int delta = config_.params.delta;
  const auto& model = cluster_.latency();
  const int have = static_cast<int>(op->arrivals.size());
  if (have < k) {
    if (op->outstanding == 0) fail_read(op, ErrorCode::kUnrecoverableRead);
    return;
  }
  auto non_systematic = [&]() {
    for (int i = 0; i < k; ++i) {
      if (op->arrivals[i].index >= k) return true;
    }
    return false;
  };
  const Time decode_cost =
      non_systematic() ? sim::from_us(model.decode_us) : 0;

  if (!op->correcting && !config_.verify_reads) {
    op->result.page = decode(codec_, op->arrivals);
    finish_read(op, decode_cost);
    return;
  }

  if (!op->correcting) {
    if (have < op->needed && op->outstanding > 0) return;
    const int check = std::min(delta, have - k);
    if (!detect_corruption(codec_, op->arrivals, check)) {
      for (const auto& s : op->arrivals) record_health(op->sources[s.index], false);
      op->result.page = decode(codec_, op->arrivals);
      finish_read(op, decode_cost + sim::from_us(model.encode_us));
      return;
    }
    // Mismatch: fetch delta + 1 more splits and switch to correction.
    op->correcting = true;
    const int target = std::min(
        k + 2 * delta + 1,
        have + op->outstanding +
            static_cast<int>(state(op->address.range).range.healthy_count() -
                             op->tried.size()));
    op->needed = std::max(target, have);
    const int missing = op->needed - have - op->outstanding;
    if (missing > 0) issue_more_reads(op, missing);
    if (op->outstanding > 0) return;
  }

  if (have < op->needed && op->outstanding > 0) return;
  try {
    // With one split short of the spare, fall back to unique decoding.
    Correction fixed =
        have > k + 2 * delta
            ? correct_corruption(codec_, op->arrivals, delta)
            : correct_within_distance(codec_, op->arrivals, delta);
    for (const auto& s : op->arrivals) {
      const bool bad = std::find(fixed.corrupted.begin(),
                                 fixed.corrupted.end(),
                                 s.index) != fixed.corrupted.end();
      record_health(op->sources[s.index], bad);
    }
    op->result.page = std::move(fixed.page);
    op->result.corrected = !fixed.corrupted.empty();
    op->result.corrupted = fixed.corrupted;
    const AddressRange& r = state(op->address.range).range;
    for (int role : fixed.corrupted) {
      const MachineId m = op->sources[role];
      if (health(m).error_rate > config_.slab_regeneration_limit &&
          r.refs[role].machine == m &&
          r.health[role] == SlabHealth::kHealthy) {
        request_regeneration(op->address.range, role);
      }
    }
    finish_read(op, 2 * sim::from_us(model.decode_us));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kInsufficientSplits) {
      // Too few healthy splits to locate errors; accept only a fully
      // consistent set.
      if (!detect_corruption(codec_, op->arrivals,
                             std::min(delta, have - k))) {
        op->result.page = decode(codec_, op->arrivals);
        finish_read(op, decode_cost + sim::from_us(model.encode_us));
        return;
      }
    }
    fail_read(op, ErrorCode::kUnrecoverableRead);
  }
}

void ResilienceManager::finish_read(const std::shared_ptr<ReadOp>& op,
                                    Time coding) {
  op->finished = true;
  op->result.coding_time = coding;
  op->result.completed_at = cluster_.now() + coding + penalties();
  cluster_.submit(op->result.completed_at, "read-done",
                  "r" + std::to_string(op->address.range) + "/p" +
                      std::to_string(op->address.page),
                  [this, op]() {
                    log_.push_back(OpRecord{
                        op->result.submitted_at, op->result.completed_at, 'R',
                        op->result.fan_out,
                        op->result.corrected ? "corrected" : "ok"});
                    release(op->address);
                    if (op->done) op->done(op->result);
                    return std::string(op->result.corrected ? "corrected"
                                                            : "ok");
                  });
}

void ResilienceManager::fail_read(const std::shared_ptr<ReadOp>& op,
                                  ErrorCode code) {
  op->finished = true;
  op->result.error = code;
  op->result.completed_at = cluster_.now();
  if (code == ErrorCode::kUnrecoverableRead) ++unrecoverable_reads_;
  cluster_.submit(op->result.completed_at, "read-failed",
                  "r" + std::to_string(op->address.range) + "/p" +
                      std::to_string(op->address.page),
                  [this, op, code]() {
                    log_.push_back(OpRecord{op->result.submitted_at,
                                            op->result.completed_at, 'R',
                                            op->result.fan_out,
                                            std::string(error_code_name(code))});
                    release(op->address);
                    if (op->done) op->done(op->result);
                    return std::string(error_code_name(code));
                  });
}

// ---------------------------------------------------------------------------
// Synchronous wrappers.

WriteCompletion ResilienceManager::write_sync(PageAddress address,
                                              Bytes page) {
  WriteCompletion out;
  bool acked = false;
  bool durable = false;
  remote_write(
      address, std::move(page),
      [&](const WriteCompletion& c) {
        out = c;
        acked = true;
      },
      [&](const WriteCompletion& c) {
        out.fully_durable_at = c.fully_durable_at;
        durable = true;
      });
  while (!(acked && durable) && cluster_.step()) {
  }
  return out;
}

ReadResult ResilienceManager::read_sync(PageAddress address) {
  ReadResult out;
  bool done = false;
  remote_read(address, [&](const ReadResult& r) {
    out = r;
    done = true;
  });
  while (!done && cluster_.step()) {
  }
  return out;
}

// ---------------------------------------------------------------------------
// Failures, evictions, health.

void ResilienceManager::mark_failed(std::int64_t range_id, int role) {
  RangeState& rs = state(range_id);
  AddressRange& r = rs.range;
  if (r.health[role] == SlabHealth::kFailed) return;
  r.health[role] = SlabHealth::kFailed;
  rs.flushing.erase(role);
  check_recoverable(range_id);
  if (!r.unrecoverable) request_regeneration(range_id, role);
}

void ResilienceManager::check_recoverable(std::int64_t range_id) {
  RangeState& rs = state(range_id);
  AddressRange& r = rs.range;
  if (r.unrecoverable || r.healthy_count() >= codec_.k()) return;
  r.unrecoverable = true;
  for (auto& [role, pages] : rs.deferred) {
    for (auto& [page, entry] : pages) {
      for (auto& w : entry.waiters) {
        if (!w->durable_reported && !w->failed) {
          w->durable_reported = true;
          w->result.fully_durable_at = -1;
          cluster_.submit(cluster_.now(), "write-durability-lost",
                          "r" + std::to_string(range_id),
                          [w]() {
                            if (w->on_durable) w->on_durable(w->result);
                            return std::string("lost");
                          });
        }
      }
    }
  }
  rs.deferred.clear();
}

void ResilienceManager::request_regeneration(std::int64_t range_id, int role) {
  if (!regeneration_handler_) return;
  cluster_.submit(cluster_.now(), "regen-request",
                  "r" + std::to_string(range_id) + "/s" + std::to_string(role),
                  [this, range_id, role]() {
                    regeneration_handler_(range_id, role);
                    return std::string("sent");
                  });
}

void ResilienceManager::handle_disconnect(MachineId machine) {
  for (auto& [id, rs] : ranges_) {
    for (int role = 0; role < codec_.total(); ++role) {
      if (rs.range.refs[role].machine == machine &&
          rs.range.health[role] != SlabHealth::kFailed) {
        mark_failed(id, role);
      }
    }
  }
}

void ResilienceManager::on_machine_failed(MachineId machine) {
  handle_disconnect(machine);
}

void ResilienceManager::on_machine_recovered(MachineId machine) {
  // Slabs kept through a partition are stale once their role moved on.
  std::vector<SlabId> stale;
  for (const auto& [sid, slab] : cluster_.machine(machine).slabs) {
    if (slab.owner != config_.id) continue;
    auto it = ranges_.find(slab.range);
    if (it == ranges_.end() ||
        it->second.range.refs[slab.role].slab != sid ||
        it->second.range.health[slab.role] == SlabHealth::kFailed) {
      stale.push_back(sid);
    }
  }
  for (SlabId sid : stale) cluster_.free_slab(sid);
}

void ResilienceManager::on_slab_evicted(const sim::Slab& slab) {
  if (slab.owner != config_.id) return;
  auto it = ranges_.find(slab.range);
  if (it == ranges_.end()) return;
  if (it->second.range.refs[slab.role].slab != slab.id) return;
  mark_failed(slab.range, slab.role);
}

void ResilienceManager::record_health(MachineId machine, bool error) {
  HealthWindow& h = health_[machine];
  h.recent.push_back(error);
  if (error) {
    ++h.errors;
    ++h.window_errors;
  }
  while (static_cast<int>(h.recent.size()) > config_.health_window) {
    if (h.recent.front()) --h.window_errors;
    h.recent.pop_front();
  }
}

MachineHealth ResilienceManager::health(MachineId machine) const {
  MachineHealth out;
  out.machine = machine;
  out.error_correction_limit = config_.error_correction_limit;
  out.slab_regeneration_limit = config_.slab_regeneration_limit;
  auto it = health_.find(machine);
  if (it == health_.end() || it->second.recent.empty()) return out;
  out.errors = it->second.errors;
  out.error_rate = static_cast<double>(it->second.window_errors) /
                   static_cast<double>(it->second.recent.size());
  return out;
}

bool ResilienceManager::is_suspect(MachineId machine) const {
  return health(machine).error_rate > config_.error_correction_limit;
}

// ---------------------------------------------------------------------------
// Regeneration hooks.

void ResilienceManager::begin_regeneration(std::int64_t range_id, int role,
                                           SlabRef target) {
  RangeState& rs = state(range_id);
  AddressRange& r = rs.range;
  const SlabRef old = r.refs[role];
  if (old.slab != target.slab && cluster_.find_slab(old.slab) != nullptr) {
    cluster_.free_slab(old.slab);
  }
  r.refs[role] = target;
  r.health[role] = SlabHealth::kRegenerating;
  cluster_.set_slab_state(target.slab, sim::SlabState::kRegenerating);
  if (static_cast<std::int64_t>(plan_.assignments.size()) > range_id) {
    plan_.assignments[range_id].machines[role] = target.machine;
  }
}

void ResilienceManager::finish_regeneration(std::int64_t range_id, int role) {
  RangeState& rs = state(range_id);
  cluster_.set_slab_state(rs.range.refs[role].slab,
                          sim::SlabState::kAvailable);
  flush_deferred(range_id, role);
}

void ResilienceManager::abort_regeneration(std::int64_t range_id, int role) {
  RangeState& rs = state(range_id);
  if (rs.range.health[role] == SlabHealth::kRegenerating) {
    rs.range.health[role] = SlabHealth::kHealthy;  // so mark_failed acts
    mark_failed(range_id, role);
  }
}

void ResilienceManager::write_completion_log(std::ostream& out) const {
  out << "submit_ns,complete_ns,op,fan_out,outcome\n";
  for (const auto& rec : log_) {
    out << rec.submitted_at << ',' << rec.completed_at << ',' << rec.op << ','
        << rec.fan_out << ',' << rec.outcome << '\n';
  }
}

}  // namespace ecmem::rm
