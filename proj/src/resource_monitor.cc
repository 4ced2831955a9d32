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

#include "ecmem/resource_monitor.h"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace ecmem::monitor {

using sim::IoResult;
using sim::IoStatus;

void validate(const MonitorConfig& config) {
  if (!(config.headroom > 0.0 && config.headroom < 1.0)) {
    throw Error(ErrorCode::kInvalidParams, "headroom must be in (0, 1)");
  }
  if (config.evict_batch < 1 || config.extra_candidates < 0) {
    throw Error(ErrorCode::kInvalidParams, "need E >= 1 and E' >= 0");
  }
  if (config.control_period <= 0) {
    throw Error(ErrorCode::kInvalidParams, "control period must be positive");
  }
}

std::vector<SlabUsageStats> slab_usage(const sim::Cluster& cluster,
                                       MachineId machine) {
  std::vector<SlabUsageStats> out;
  for (const auto& [sid, slab] : cluster.machine(machine).slabs) {
    if (slab.owner >= 0 && slab.state == sim::SlabState::kAvailable) {
      out.push_back(SlabUsageStats{sid, slab.access_frequency});
    }
  }
  return out;
}

std::vector<SlabId> batch_evict(sim::Cluster& cluster, MachineId machine,
                                int evict, int extra, Rng& rng) {
  if (evict < 1 || extra < 0) {
    throw Error(ErrorCode::kInvalidParams, "need E >= 1 and E' >= 0");
  }
  auto usage = slab_usage(cluster, machine);
  if (static_cast<int>(usage.size()) < evict) {
    throw Error(ErrorCode::kInsufficientSlabs,
                "machine " + std::to_string(machine) + " hosts " +
                    std::to_string(usage.size()) + " evictable slabs, need " +
                    std::to_string(evict));
  }
  std::shuffle(usage.begin(), usage.end(), rng);
  usage.resize(std::min<std::size_t>(usage.size(), evict + extra));
  std::sort(usage.begin(), usage.end(),
            [](const SlabUsageStats& a, const SlabUsageStats& b) {
              if (a.access_frequency != b.access_frequency) {
                return a.access_frequency < b.access_frequency;
              }
              return a.slab < b.slab;
            });
  std::vector<SlabId> evicted;
  for (int i = 0; i < evict; ++i) {
    evicted.push_back(usage[i].slab);
    cluster.evict_slab(usage[i].slab);
  }
  return evicted;
}

TickActions control_tick(sim::Cluster& cluster, MachineId machine,
                         const MonitorConfig& config, Rng& rng) {
  TickActions out;
  out.machine = machine;
  out.free_before = cluster.free_fraction(machine);
  out.free_after = out.free_before;
  if (!cluster.is_up(machine)) return out;

  const double total = static_cast<double>(cluster.machine(machine).total_bytes);
  const double slab = static_cast<double>(cluster.config().slab_bytes);
  double free = out.free_before;
  if (free < config.headroom) {
    while (free < config.headroom && cluster.release_unmapped(machine)) {
      ++out.released;
      free = cluster.free_fraction(machine);
    }
    while (free < config.headroom) {
      const int available =
          static_cast<int>(slab_usage(cluster, machine).size());
      if (available == 0) break;
      const auto ids =
          batch_evict(cluster, machine, std::min(config.evict_batch, available),
                      config.extra_candidates, rng);
      out.evicted.insert(out.evicted.end(), ids.begin(), ids.end());
      free = cluster.free_fraction(machine);
    }
  } else if (free > config.headroom) {
    const double excess =
        static_cast<double>(cluster.free_bytes(machine)) - config.headroom * total;
    const auto n = static_cast<long long>(std::floor(excess / slab + 1e-9));
    for (long long i = 0; i < n; ++i) {
      if (cluster.allocate_unmapped(machine) == sim::kNoSlab) break;
      ++out.allocated;
    }
  }
  cluster.decay_access_frequency(machine);
  out.free_after = cluster.free_fraction(machine);
  return out;
}

// ---------------------------------------------------------------------------

struct RegenerationEngine::Task {
  rm::ResilienceManager* manager = nullptr;
  std::int64_t range = 0;
  int role = 0;
  rm::SlabRef target;
  std::vector<int> pages;
  std::function<void(bool)> done;
};

RegenerationEngine::RegenerationEngine(sim::Cluster& cluster,
                                       std::uint64_t seed)
    : cluster_(cluster), rng_(make_rng(seed, 300)) {}

void RegenerationEngine::attach(rm::ResilienceManager& manager) {
  manager.set_regeneration_handler(
      [this, &manager](std::int64_t range_id, int role) {
        handle_request(manager, range_id, role);
      });
}

void RegenerationEngine::handle_request(rm::ResilienceManager& manager,
                                        std::int64_t range_id, int role) {
  try {
    regenerate_slab(manager, range_id, role);
  } catch (const Error&) {
    // Unrecoverable or no capacity: the range stays degraded.
    ++failed_;
  }
}

MachineId RegenerationEngine::choose_target(
    const rm::ResilienceManager& manager, std::int64_t range_id) const {
  const rm::AddressRange& r = manager.range(range_id);
  std::set<MachineId> excluded;
  for (const auto& ref : r.refs) excluded.insert(ref.machine);

  auto best_of = [&](const std::vector<MachineId>& pool) {
    MachineId best = -1;
    double best_used = 2.0;
    for (MachineId m : pool) {
      if (excluded.contains(m) || !cluster_.can_host_slab(m)) continue;
      const double used = cluster_.used_fraction(m);
      if (used < best_used || (used == best_used && m < best)) {
        best = m;
        best_used = used;
      }
    }
    return best;
  };

  const PlacementPlan& plan = manager.plan();
  if (plan.scheme == Scheme::kCodingSets && r.group >= 0 &&
      r.group < static_cast<int>(plan.groups.size())) {
    const MachineId m = best_of(plan.groups[r.group].members);
    if (m >= 0) return m;
  }
  std::vector<MachineId> all(cluster_.size());
  for (MachineId m = 0; m < cluster_.size(); ++m) all[m] = m;
  return best_of(all);
}

rm::SlabRef RegenerationEngine::regenerate_slab(rm::ResilienceManager& manager,
                                                std::int64_t range_id,
                                                int role,
                                                std::function<void(bool)> done) {
  const rm::AddressRange& r = manager.range(range_id);
  const int k = manager.codec().k();
  if (role < 0 || role >= manager.codec().total()) {
    throw Error(ErrorCode::kInvalidParams, "split index out of range");
  }
  int sources = 0;
  for (int i = 0; i < manager.codec().total(); ++i) {
    if (i != role && r.health[i] == rm::SlabHealth::kHealthy) ++sources;
  }
  if (r.unrecoverable || sources < k) {
    throw Error(ErrorCode::kUnrecoverableRange,
                "range " + std::to_string(range_id) + " has " +
                    std::to_string(sources) + " healthy slabs, need " +
                    std::to_string(k));
  }
  const Key key{manager.config().id, range_id, role};
  if (auto it = active_.find(key); it != active_.end() && !stale(*it->second)) {
    return it->second->target;
  }

  const MachineId target = choose_target(manager, range_id);
  if (target < 0) {
    throw Error(ErrorCode::kCapacityExhausted,
                "no machine can host a replacement slab");
  }
  const SlabId slab = cluster_.map_slab(target, manager.config().id, range_id,
                                        role, sim::SlabState::kRegenerating);
  if (slab == sim::kNoSlab) {
    throw Error(ErrorCode::kCapacityExhausted, "target refused the slab");
  }
  auto task = std::make_shared<Task>();
  task->manager = &manager;
  task->range = range_id;
  task->role = role;
  task->target = rm::SlabRef{target, slab};
  task->done = std::move(done);
  manager.begin_regeneration(range_id, role, task->target);
  const rm::AddressRange& updated = manager.range(range_id);
  for (int p = 0; p < updated.page_capacity; ++p) {
    if (updated.written[p]) task->pages.push_back(p);
  }
  active_[key] = task;
  cluster_.submit(cluster_.now(), "regen-start",
                  "r" + std::to_string(range_id) + "/s" + std::to_string(role),
                  [this, task]() {
                    run_page(task, 0, 0);
                    return std::string("m" +
                                       std::to_string(task->target.machine));
                  });
  return task->target;
}

namespace {

// Data splits from the gathered sources, or empty when they disagree and
// cannot be repaired.
std::vector<Bytes> verified_data(const Codec& codec,
                                 const rm::ManagerConfig& config,
                                 const std::vector<Split>& splits) {
  const int k = codec.k();
  const int delta = codec.params().delta;
  const auto n = static_cast<int>(splits.size());
  if (!config.verify_reads || delta == 0 || n < k + delta) {
    return decode_data(codec, splits);
  }
  if (!detect_corruption(codec, splits, delta)) {
    return decode_data(codec, splits);
  }
  if (n < k + 2 * delta) return {};
  try {
    const Correction fixed = correct_within_distance(codec, splits, delta);
    std::vector<Bytes> data;
    for (auto& split : split_page(fixed.page, k)) {
      data.push_back(std::move(split.bytes));
    }
    return data;
  } catch (const Error&) {
    return {};
  }
}

}  // namespace

bool RegenerationEngine::stale(const Task& task) const {
  if (!task.manager->is_mapped(task.range)) return true;
  const rm::AddressRange& r = task.manager->range(task.range);
  return r.unrecoverable || r.refs[task.role].slab != task.target.slab ||
         r.health[task.role] != rm::SlabHealth::kRegenerating;
}

void RegenerationEngine::run_page(const std::shared_ptr<Task>& task,
                                  std::size_t index, int attempt) {
  if (stale(*task)) {
    finish(task, false);
    return;
  }
  if (index == task->pages.size()) {
    task->manager->finish_regeneration(task->range, task->role);
    finish(task, true);
    return;
  }
  const int page = task->pages[index];
  task->manager->run_exclusive(
      rm::PageAddress{task->range, page},
      [this, task, index, attempt, page](std::function<void()> release) {
        if (stale(*task)) {
          release();
          finish(task, false);
          return;
        }
        rm::ResilienceManager& manager = *task->manager;
        const Codec& codec = manager.codec();
        const rm::AddressRange& r = manager.range(task->range);
        std::vector<int> roles;
        for (int i = 0; i < codec.total(); ++i) {
          if (i != task->role && r.health[i] == rm::SlabHealth::kHealthy) {
            roles.push_back(i);
          }
        }
        if (static_cast<int>(roles.size()) < codec.k()) {
          release();
          finish(task, false);
          return;
        }
        std::shuffle(roles.begin(), roles.end(), rng_);
        // With verified reads the sources are checked too, so a corrupted
        // split is never copied into the new slab.
        int want = codec.k();
        if (manager.config().verify_reads) {
          const int delta = codec.params().delta;
          want = std::min<int>(static_cast<int>(roles.size()),
                               codec.k() + 2 * delta + 1);
        }
        roles.resize(want);

        struct Gather {
          std::vector<Split> splits;
          int pending = 0;
          bool lost = false;
        };
        auto gather = std::make_shared<Gather>();
        gather->pending = static_cast<int>(roles.size());
        const Time post = sim::from_us(cluster_.latency().post_us);
        const Time now = cluster_.now();
        for (std::size_t i = 0; i < roles.size(); ++i) {
          const rm::SlabRef ref = r.refs[roles[i]];
          cluster_.read_split(
              ref.machine, ref.slab, page,
              now + static_cast<Time>(i + 1) * post,
              cluster_.context_for(codec.split_size()),
              [this, task, index, attempt, page, release, gather,
               role = roles[i]](IoResult result) {
                if (result.status == IoStatus::kOk) {
                  gather->splits.push_back(Split{role, std::move(result.bytes)});
                } else {
                  gather->lost = true;
                }
                if (--gather->pending > 0) return;
                const Codec& codec = task->manager->codec();
                std::vector<Bytes> data;
                if (!gather->lost) {
                  data = verified_data(codec, task->manager->config(),
                                       gather->splits);
                  gather->lost = data.empty();
                }
                if (gather->lost) {
                  release();
                  if (attempt >= 8) {
                    finish(task, false);
                    return;
                  }
                  cluster_.submit(cluster_.now(), "regen-retry",
                                  "r" + std::to_string(task->range) + "/p" +
                                      std::to_string(page),
                                  [this, task, index, attempt]() {
                                    run_page(task, index, attempt + 1);
                                    return std::string("retry");
                                  });
                  return;
                }
                Bytes rebuilt = task->role < codec.k()
                                    ? data[task->role]
                                    : codec.compute_split(data, task->role);
                double cost = cluster_.latency().decode_us;
                if (task->role >= codec.k()) cost += cluster_.latency().encode_us;
                cluster_.submit(
                    cluster_.now() + sim::from_us(cost), "regen-store",
                    "r" + std::to_string(task->range) + "/p" +
                        std::to_string(page),
                    [this, task, index, page, release,
                     rebuilt = std::move(rebuilt)]() mutable {
                      if (stale(*task)) {
                        release();
                        finish(task, false);
                        return std::string("stale");
                      }
                      cluster_.store_local(task->target.slab, page,
                                           std::move(rebuilt));
                      release();
                      run_page(task, index + 1, 0);
                      return std::string("ok");
                    });
              });
        }
      });
}

void RegenerationEngine::finish(const std::shared_ptr<Task>& task, bool ok) {
  const Key key{task->manager->config().id, task->range, task->role};
  auto it = active_.find(key);
  if (it != active_.end() && it->second == task) active_.erase(it);
  if (ok) {
    ++completed_;
  } else {
    ++failed_;
  }
  if (task->done) task->done(ok);
}

int RegenerationEngine::in_flight_on(MachineId machine) const {
  int n = 0;
  for (const auto& [key, task] : active_) {
    if (task->target.machine == machine) ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------

MonitorFleet::MonitorFleet(sim::Cluster& cluster, MonitorConfig config,
                           std::uint64_t seed, const RegenerationEngine* engine)
    : cluster_(cluster), config_(config), engine_(engine) {
  validate(config_);
  for (MachineId m = 0; m < cluster_.size(); ++m) {
    rngs_.push_back(make_rng(seed, 400 + static_cast<std::uint64_t>(m)));
  }
}

void MonitorFleet::schedule(Time start, Time end) {
  for (Time t = start; t <= end; t += config_.control_period) {
    cluster_.submit(t, "control-tick", "monitors", [this]() {
      tick_all();
      return std::string("ok");
    });
  }
}

std::vector<TickActions> MonitorFleet::tick_all() {
  std::vector<TickActions> actions;
  for (MachineId m = 0; m < cluster_.size(); ++m) {
    actions.push_back(control_tick(cluster_, m, config_, rngs_[m]));
    const sim::Machine& machine = cluster_.machine(m);
    int hosted = 0;
    for (const auto& [sid, slab] : machine.slabs) {
      if (slab.owner >= 0) ++hosted;
    }
    rows_.push_back(MonitorRow{cluster_.now(), m, cluster_.free_fraction(m),
                               hosted, machine.evicted_total,
                               engine_ ? engine_->in_flight_on(m) : 0});
  }
  return actions;
}

void MonitorFleet::write_csv(std::ostream& out) const {
  out << "time_ns,machine,free_fraction,slabs_hosted,slabs_evicted,"
         "regenerations_in_flight\n";
  for (const auto& row : rows_) {
    out << row.time << ',' << row.machine << ',' << row.free_fraction << ','
        << row.slabs_hosted << ',' << row.slabs_evicted << ','
        << row.regenerations_in_flight << '\n';
  }
}

}  // namespace ecmem::monitor
