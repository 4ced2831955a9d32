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

#include "ecmem/cluster.h"

#include <algorithm>
#include <ostream>

#include "ecmem/error.h"
#include "ecmem/fault_script.h"

namespace ecmem::sim {

namespace {

std::string slab_entity(MachineId m, SlabId s, int page) {
  return "m" + std::to_string(m) + "/s" + std::to_string(s) + "/p" +
         std::to_string(page);
}

}  // namespace

void validate(const LatencyModel& m) {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0)) {
      throw Error(ErrorCode::kInvalidParams,
                  std::string(name) + " must be positive");
    }
  };
  auto non_negative = [](double v, const char* name) {
    if (!(v >= 0.0)) {
      throw Error(ErrorCode::kInvalidParams,
                  std::string(name) + " must be non-negative");
    }
  };
  positive(m.split_fixed_us, "split_fixed_us");
  positive(m.bytes_per_us, "bytes_per_us");
  non_negative(m.sigma, "sigma");
  positive(m.straggler_multiplier, "straggler_multiplier");
  positive(m.background_multiplier, "background_multiplier");
  positive(m.encode_us, "encode_us");
  positive(m.decode_us, "decode_us");
  non_negative(m.post_us, "post_us");
  non_negative(m.context_switch_us, "context_switch_us");
  non_negative(m.copy_us, "copy_us");
  non_negative(m.disk_us, "disk_us");
  if (!(m.straggler_probability >= 0.0 && m.straggler_probability <= 1.0)) {
    throw Error(ErrorCode::kInvalidParams,
                "straggler_probability outside [0, 1]");
  }
}

LatencySample sample_split_latency(const LatencyModel& model,
                                   const LatencyContext& context, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double base =
      model.median_us(context.bytes) * std::exp(model.sigma * normal(rng));
  bool straggler = false;
  if (context.straggler.has_value()) {
    straggler = *context.straggler;
  } else if (model.straggler_probability > 0.0) {
    std::bernoulli_distribution coin(model.straggler_probability);
    straggler = coin(rng);
  }
  double us = base;
  if (straggler) us *= model.straggler_multiplier;
  us *= 1.0 + context.background_level * (model.background_multiplier - 1.0);
  return LatencySample{std::max<Time>(1, from_us(us)), straggler};
}

std::string_view slab_state_name(SlabState state) {
  switch (state) {
    case SlabState::kUnmapped: return "unmapped";
    case SlabState::kAvailable: return "available";
    case SlabState::kRegenerating: return "regenerating";
    case SlabState::kEvicted: return "evicted";
    case SlabState::kFailed: return "failed";
  }
  return "unknown";
}

std::string_view io_status_name(IoStatus status) {
  switch (status) {
    case IoStatus::kOk: return "ok";
    case IoStatus::kDisconnect: return "disconnect";
    case IoStatus::kSlabUnavailable: return "slab-unavailable";
    case IoStatus::kRejected: return "rejected";
  }
  return "unknown";
}

std::size_t Slab::stored_bytes() const {
  std::size_t total = 0;
  for (const auto& [page, bytes] : pages) total += bytes.size();
  return total;
}

Cluster::Cluster(const ClusterConfig& config, std::uint64_t seed)
    : config_(config), rng_(make_rng(seed, 100)) {
  if (config.machines < 1) {
    throw Error(ErrorCode::kInvalidShape, "cluster needs at least 1 machine");
  }
  if (config.slab_bytes == 0 || config.machine_bytes < config.slab_bytes) {
    throw Error(ErrorCode::kInvalidShape, "machine smaller than one slab");
  }
  validate(config.latency);
  machines_.resize(config.machines);
  for (int i = 0; i < config.machines; ++i) {
    machines_[i].id = i;
    machines_[i].total_bytes = config.machine_bytes;
  }
}

std::uint64_t Cluster::submit(Time at, std::string op, std::string entity,
                              Action action) {
  const std::uint64_t seq = next_seq_++;
  queue_.push(Pending{std::max(at, now_), seq, std::move(op),
                      std::move(entity), std::move(action)});
  return seq;
}

std::optional<EventRecord> Cluster::step() {
  if (queue_.empty()) return std::nullopt;
  Pending next = queue_.top();
  queue_.pop();
  now_ = next.at;
  EventRecord record{now_, std::move(next.op), std::move(next.entity), ""};
  record.outcome = next.action();
  if (logging_) log_.push_back(record);
  return record;
}

std::size_t Cluster::run() {
  std::size_t count = 0;
  while (step()) ++count;
  return count;
}

std::size_t Cluster::run_until(Time t) {
  std::size_t count = 0;
  while (!queue_.empty() && queue_.top().at <= t) {
    step();
    ++count;
  }
  now_ = std::max(now_, t);
  return count;
}

void Cluster::write_event_log(std::ostream& out) const {
  out << "time_ns,op,entity,outcome\n";
  for (const auto& e : log_) {
    out << e.time << ',' << e.op << ',' << e.entity << ',' << e.outcome
        << '\n';
  }
}

void Cluster::add_listener(ClusterListener* listener) {
  listeners_.push_back(listener);
}

Machine& Cluster::mutable_machine(MachineId id) {
  if (id < 0 || id >= size()) {
    throw Error(ErrorCode::kUnknownEntity,
                "no machine " + std::to_string(id));
  }
  return machines_[id];
}

const Machine& Cluster::machine(MachineId id) const {
  if (id < 0 || id >= size()) {
    throw Error(ErrorCode::kUnknownEntity,
                "no machine " + std::to_string(id));
  }
  return machines_[id];
}

bool Cluster::is_up(MachineId id) const {
  return machine(id).state == MachineState::kUp;
}

std::uint64_t Cluster::free_bytes(MachineId id) const {
  const Machine& m = machine(id);
  const std::uint64_t used =
      m.local_bytes + m.slabs.size() * config_.slab_bytes;
  return used >= m.total_bytes ? 0 : m.total_bytes - used;
}

double Cluster::free_fraction(MachineId id) const {
  return static_cast<double>(free_bytes(id)) / machine(id).total_bytes;
}

double Cluster::used_fraction(MachineId id) const {
  return 1.0 - free_fraction(id);
}

void Cluster::set_local_bytes(MachineId id, std::uint64_t bytes) {
  mutable_machine(id).local_bytes = bytes;
}

bool Cluster::can_host_slab(MachineId id) const {
  const Machine& m = machine(id);
  if (m.state != MachineState::kUp) return false;
  for (const auto& [sid, slab] : m.slabs) {
    if (slab.state == SlabState::kUnmapped) return true;
  }
  return free_bytes(id) >= config_.slab_bytes;
}

LoadVector Cluster::mapped_loads() const {
  LoadVector loads(size(), 0.0);
  for (const auto& m : machines_) {
    if (m.state != MachineState::kUp) continue;
    for (const auto& [sid, slab] : m.slabs) {
      if (slab.owner >= 0) loads[m.id] += static_cast<double>(config_.slab_bytes);
    }
  }
  return loads;
}

SlabId Cluster::map_slab(MachineId id, std::int64_t owner, std::int64_t range,
                         int role, SlabState state) {
  Machine& m = mutable_machine(id);
  if (m.state != MachineState::kUp) return kNoSlab;
  for (auto& [sid, slab] : m.slabs) {
    if (slab.state == SlabState::kUnmapped) {
      slab.owner = owner;
      slab.range = range;
      slab.role = role;
      slab.state = state;
      return sid;
    }
  }
  if (free_bytes(id) < config_.slab_bytes) return kNoSlab;
  const SlabId sid = next_slab_++;
  Slab slab;
  slab.id = sid;
  slab.machine = id;
  slab.owner = owner;
  slab.range = range;
  slab.role = role;
  slab.state = state;
  m.slabs.emplace(sid, std::move(slab));
  slab_index_[sid] = id;
  return sid;
}

SlabId Cluster::allocate_unmapped(MachineId id) {
  Machine& m = mutable_machine(id);
  if (m.state != MachineState::kUp || free_bytes(id) < config_.slab_bytes) {
    return kNoSlab;
  }
  const SlabId sid = next_slab_++;
  Slab slab;
  slab.id = sid;
  slab.machine = id;
  m.slabs.emplace(sid, std::move(slab));
  slab_index_[sid] = id;
  return sid;
}

bool Cluster::release_unmapped(MachineId id) {
  Machine& m = mutable_machine(id);
  for (auto it = m.slabs.begin(); it != m.slabs.end(); ++it) {
    if (it->second.state == SlabState::kUnmapped) {
      slab_index_.erase(it->first);
      m.slabs.erase(it);
      return true;
    }
  }
  return false;
}

void Cluster::free_slab(SlabId slab) {
  auto it = slab_index_.find(slab);
  if (it == slab_index_.end()) return;
  cancel_io([slab](const InFlight& io) { return io.slab == slab; },
            IoStatus::kSlabUnavailable);
  machines_[it->second].slabs.erase(slab);
  slab_index_.erase(it);
}

const Slab* Cluster::find_slab(SlabId slab) const {
  auto it = slab_index_.find(slab);
  if (it == slab_index_.end()) return nullptr;
  const auto& slabs = machines_[it->second].slabs;
  auto s = slabs.find(slab);
  return s == slabs.end() ? nullptr : &s->second;
}

Slab* Cluster::find_slab(SlabId slab) {
  return const_cast<Slab*>(std::as_const(*this).find_slab(slab));
}

std::optional<SlabId> Cluster::resolve(std::int64_t owner, std::int64_t range,
                                       int role) const {
  for (const auto& m : machines_) {
    for (const auto& [sid, slab] : m.slabs) {
      if (slab.owner == owner && slab.range == range && slab.role == role &&
          (slab.state == SlabState::kAvailable ||
           slab.state == SlabState::kRegenerating)) {
        return sid;
      }
    }
  }
  return std::nullopt;
}

void Cluster::set_slab_state(SlabId slab, SlabState state) {
  if (Slab* s = find_slab(slab)) s->state = state;
}

void Cluster::decay_access_frequency(MachineId id) {
  for (auto& [sid, slab] : mutable_machine(id).slabs) {
    slab.access_frequency /= 2.0;
  }
}

void Cluster::cancel_io(const std::function<bool(const InFlight&)>& match,
                        IoStatus status) {
  std::vector<IoCallback> cancelled;
  for (auto it = in_flight_.begin(); it != in_flight_.end();) {
    if (match(it->second)) {
      cancelled.push_back(std::move(it->second.done));
      it = in_flight_.erase(it);
    } else {
      ++it;
    }
  }
  // In issue order.
  for (auto& done : cancelled) {
    IoResult result;
    result.status = status;
    result.completed_at = now_;
    done(std::move(result));
  }
}

void Cluster::evict_slab(SlabId slab) {
  const Slab* s = find_slab(slab);
  if (s == nullptr) {
    throw Error(ErrorCode::kUnknownEntity,
                "no slab " + std::to_string(slab));
  }
  Slab copy = *s;
  copy.pages.clear();
  copy.state = SlabState::kEvicted;
  Machine& m = machines_[s->machine];
  ++m.evicted_total;
  m.slabs.erase(slab);
  slab_index_.erase(slab);
  for (auto* l : listeners_) l->on_slab_evicted(copy);
  cancel_io([slab](const InFlight& io) { return io.slab == slab; },
            IoStatus::kSlabUnavailable);
}

void Cluster::fail_machine(MachineId id, MachineState state) {
  Machine& m = mutable_machine(id);
  if (m.state != MachineState::kUp) return;
  m.state = state;
  if (state == MachineState::kFailed) {
    // Remote memory contents are lost with the machine.
    for (const auto& [sid, slab] : m.slabs) slab_index_.erase(sid);
    m.slabs.clear();
  }
  for (auto* l : listeners_) l->on_machine_failed(id);
  cancel_io([id](const InFlight& io) { return io.machine == id; },
            IoStatus::kDisconnect);
}

void Cluster::recover_machine(MachineId id) {
  Machine& m = mutable_machine(id);
  if (m.state == MachineState::kUp) return;
  m.state = MachineState::kUp;
  for (auto* l : listeners_) l->on_machine_recovered(id);
}

void Cluster::corrupt(SlabId slab, int page, std::size_t offset,
                      const Bytes& mask) {
  Slab* s = find_slab(slab);
  if (s == nullptr) {
    throw Error(ErrorCode::kUnknownEntity,
                "no slab " + std::to_string(slab));
  }
  auto it = s->pages.find(page);
  if (it == s->pages.end()) {
    throw Error(ErrorCode::kUnknownEntity,
                "slab " + std::to_string(slab) + " holds no page " +
                    std::to_string(page));
  }
  Bytes& bytes = it->second;
  for (std::size_t i = 0; i < mask.size() && offset + i < bytes.size(); ++i) {
    bytes[offset + i] ^= mask[i];
  }
}

LatencyContext Cluster::context_for(std::size_t bytes,
                                    std::optional<bool> straggler) const {
  LatencyContext ctx;
  ctx.bytes = bytes;
  ctx.straggler = straggler;
  ctx.background_level = background_level_;
  return ctx;
}

IoId Cluster::read_split(MachineId id, SlabId slab, int page, Time post_at,
                         LatencyContext context, IoCallback done) {
  return start_io(id, slab, false, page, {}, post_at, context,
                  std::move(done));
}

IoId Cluster::write_split(MachineId id, SlabId slab, int page, Bytes bytes,
                          Time post_at, LatencyContext context,
                          IoCallback done) {
  return start_io(id, slab, true, page, std::move(bytes), post_at, context,
                  std::move(done));
}

IoId Cluster::start_io(MachineId id, SlabId slab, bool is_write, int page,
                       Bytes bytes, Time post_at, LatencyContext context,
                       IoCallback done) {
  const IoId io = next_io_++;
  const std::string op = is_write ? "write" : "read";
  const std::string entity = slab_entity(id, slab, page);
  post_at = std::max(post_at, now_);
  if (!is_up(id)) {
    // Failed machines accept no I/O.
    submit(post_at, op, entity, [this, done = std::move(done)]() {
      IoResult r;
      r.status = IoStatus::kDisconnect;
      r.completed_at = now_;
      done(std::move(r));
      return std::string(io_status_name(IoStatus::kDisconnect));
    });
    return io;
  }
  const LatencySample sample = sample_split_latency(latency(), context, rng_);
  in_flight_.emplace(io, InFlight{id, slab, std::move(done)});
  submit(post_at + sample.duration, op, entity,
         [this, io, id, slab, is_write, page, straggler = sample.straggler,
          bytes = std::move(bytes)]() mutable {
           auto it = in_flight_.find(io);
           if (it == in_flight_.end()) return std::string("cancelled");
           IoCallback cb = std::move(it->second.done);
           in_flight_.erase(it);
           IoResult r;
           r.completed_at = now_;
           r.straggler = straggler;
           Slab* s = find_slab(slab);
           if (!is_up(id)) {
             r.status = IoStatus::kDisconnect;
           } else if (s == nullptr) {
             r.status = IoStatus::kSlabUnavailable;
           } else if (is_write) {
             if (s->state == SlabState::kRegenerating) {
               r.status = IoStatus::kRejected;
             } else if (s->state != SlabState::kAvailable) {
               r.status = IoStatus::kSlabUnavailable;
             } else {
               s->pages[page] = std::move(bytes);
               s->access_frequency += 1.0;
             }
           } else {
             auto p = s->pages.find(page);
             if (s->state != SlabState::kAvailable || p == s->pages.end()) {
               r.status = IoStatus::kSlabUnavailable;
             } else {
               r.bytes = p->second;
               s->access_frequency += 1.0;
             }
           }
           const IoStatus status = r.status;
           cb(std::move(r));
           return std::string(io_status_name(status));
         });
  return io;
}

bool Cluster::store_local(SlabId slab, int page, Bytes bytes) {
  Slab* s = find_slab(slab);
  if (s == nullptr || !is_up(s->machine)) return false;
  s->pages[page] = std::move(bytes);
  return true;
}

std::size_t Cluster::stored_bytes() const {
  std::size_t total = 0;
  for (const auto& m : machines_) {
    for (const auto& [sid, slab] : m.slabs) total += slab.stored_bytes();
  }
  return total;
}

void Cluster::inject(const FaultScript& script) {
  // Validate every reference before enqueuing anything.
  for (const auto& e : script.events) {
    switch (e.kind) {
      case FaultKind::kFail:
      case FaultKind::kRecover:
      case FaultKind::kPartition:
        machine(e.machine);
        break;
      case FaultKind::kEvict:
      case FaultKind::kCorrupt: {
        const bool found =
            e.slab.slab != kNoSlab
                ? find_slab(e.slab.slab) != nullptr
                : resolve(e.slab.owner, e.slab.range, e.slab.role).has_value();
        if (!found) {
          throw Error(ErrorCode::kUnknownEntity,
                      "fault script names a slab that does not exist");
        }
        break;
      }
      case FaultKind::kBackgroundLoad:
      case FaultKind::kBurst:
        break;
    }
  }

  for (const auto& e : script.events) {
    const std::string kind(fault_kind_name(e.kind));
    auto target = [this, e]() -> std::optional<SlabId> {
      if (e.slab.slab != kNoSlab) {
        if (find_slab(e.slab.slab) == nullptr) return std::nullopt;
        return e.slab.slab;
      }
      return resolve(e.slab.owner, e.slab.range, e.slab.role);
    };
    switch (e.kind) {
      case FaultKind::kFail:
      case FaultKind::kPartition:
        submit(e.at, kind, "m" + std::to_string(e.machine), [this, e]() {
          fail_machine(e.machine, e.kind == FaultKind::kFail
                                      ? MachineState::kFailed
                                      : MachineState::kPartitioned);
          return std::string("ok");
        });
        break;
      case FaultKind::kRecover:
        submit(e.at, kind, "m" + std::to_string(e.machine), [this, e]() {
          recover_machine(e.machine);
          return std::string("ok");
        });
        break;
      case FaultKind::kEvict:
        submit(e.at, kind, "slab", [this, target]() {
          auto sid = target();
          if (!sid) return std::string("skipped-unknown");
          evict_slab(*sid);
          return "s" + std::to_string(*sid);
        });
        break;
      case FaultKind::kCorrupt:
        submit(e.at, kind, "slab", [this, target, e]() {
          auto sid = target();
          if (!sid) return std::string("skipped-unknown");
          const Slab* s = find_slab(*sid);
          if (!s->pages.contains(e.page)) return std::string("skipped-no-page");
          corrupt(*sid, e.page, e.offset, e.mask);
          return "s" + std::to_string(*sid) + "/p" + std::to_string(e.page);
        });
        break;
      case FaultKind::kBackgroundLoad:
        submit(e.at, kind, "cluster", [this, e]() {
          set_background_level(e.level);
          return std::string("on");
        });
        submit(e.until, kind, "cluster", [this]() {
          set_background_level(0.0);
          return std::string("off");
        });
        break;
      case FaultKind::kBurst:
        // Bursts shape the workload's arrival process; nothing to do here.
        submit(e.at, kind, "cluster", []() { return std::string("noted"); });
        break;
    }
  }
}

}  // namespace ecmem::sim
