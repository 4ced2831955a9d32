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

#include "ecmem/experiment.h"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ecmem/error.h"
#include "ecmem/rng.h"

namespace ecmem::experiment {
namespace fs = std::filesystem;

namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::kConfigInvalid, what);
}

// Typed, strict view of one JSON object: unknown keys are errors.
class Section {
 public:
  Section(const json& doc, std::string where)
      : doc_(doc), where_(std::move(where)) {
    if (!doc_.is_object()) invalid(where_ + " must be an object");
  }

  bool has(const std::string& key) const { return doc_.contains(key); }

  const json* raw(const std::string& key) {
    seen_.insert(key);
    auto it = doc_.find(key);
    return it == doc_.end() ? nullptr : &*it;
  }

  Section child(const std::string& key) {
    static const json kEmpty = json::object();
    const json* v = raw(key);
    return Section(v ? *v : kEmpty, where_ + "." + key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    const json* v = raw(key);
    if (v == nullptr) return fallback;
    if (!matches<T>(*v)) invalid(where_ + "." + key + " has the wrong type");
    return v->get<T>();
  }

  void done() const {
    for (const auto& [key, value] : doc_.items()) {
      if (!seen_.contains(key)) invalid("unknown key " + where_ + "." + key);
    }
  }

 private:
  template <typename T>
  static bool matches(const json& v) {
    if constexpr (std::is_same_v<T, bool>) {
      return v.is_boolean();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      return v.is_number_unsigned();
    } else if constexpr (std::is_integral_v<T>) {
      return v.is_number_integer();
    } else if constexpr (std::is_floating_point_v<T>) {
      return v.is_number();
    } else if constexpr (std::is_same_v<T, std::string>) {
      return v.is_string();
    } else {
      if (!v.is_array()) return false;
      for (const auto& item : v) {
        if (!matches<typename T::value_type>(item)) return false;
      }
      return true;
    }
  }

  const json& doc_;
  std::string where_;
  std::set<std::string> seen_;
};

std::string resolve_path(const std::string& path, const std::string& base) {
  const fs::path p(path);
  if (p.is_absolute() || base.empty()) return p.string();
  return (fs::path(base) / p).lexically_normal().string();
}

sim::StragglerScope parse_scope(const std::string& name) {
  if (name == "per-operation") return sim::StragglerScope::kPerOperation;
  if (name == "per-split") return sim::StragglerScope::kPerSplit;
  invalid("straggler_scope must be per-operation or per-split");
}

LossMode parse_mode(const std::string& name) {
  if (name == "conservative") return LossMode::kConservative;
  if (name == "strict") return LossMode::kStrict;
  invalid("loss mode must be conservative or strict");
}

std::vector<Scheme> parse_schemes(const std::vector<std::string>& names) {
  std::vector<Scheme> out;
  for (const auto& n : names) out.push_back(parse_scheme(n));
  if (out.empty()) invalid("scheme list must not be empty");
  return out;
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string num(std::uint64_t v) { return std::to_string(v); }
std::string num(std::int64_t v) { return std::to_string(v); }
std::string num(int v) { return std::to_string(v); }

std::string cell(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  return v.dump();
}

std::vector<std::string> axis_cells(const ExperimentConfig& config,
                                    std::size_t point) {
  std::vector<std::string> out;
  for (const auto& axis : config.sweeps) {
    out.push_back(cell(config.point_documents[point].at(
        json::json_pointer(axis.path))));
  }
  return out;
}

std::vector<std::string> base_header(const ExperimentConfig& config) {
  std::vector<std::string> h{"point"};
  for (const auto& axis : config.sweeps) h.push_back("sweep:" + axis.path);
  return h;
}

// Runs fn(i) for every point on a bounded pool; results keep point order.
template <typename Fn>
auto parallel_points(std::size_t count, Fn fn) {
  using Result = decltype(fn(std::size_t{0}));
  std::vector<Result> results(count);
  const std::size_t workers = std::max<std::size_t>(
      1, std::min<std::size_t>(count, std::thread::hardware_concurrency()));
  std::vector<std::future<void>> running;
  std::size_t next = 0;
  std::mutex lock;
  for (std::size_t w = 0; w < workers; ++w) {
    running.push_back(std::async(std::launch::async, [&]() {
      while (true) {
        std::size_t i;
        {
          std::lock_guard<std::mutex> guard(lock);
          if (next >= count) return;
          i = next++;
        }
        results[i] = fn(i);
      }
    }));
  }
  for (auto& f : running) f.get();
  return results;
}

PlacementPlan build_plan(Scheme scheme, const ClusterShape& shape,
                         const CodecParams& params, int l, std::uint64_t seed) {
  switch (scheme) {
    case Scheme::kCodingSets:
      return build_codingsets(shape, params, l, seed);
    case Scheme::kEcCache:
      return build_eccache(shape, params, seed);
    case Scheme::kPowerOfTwo: {
      LoadVector loads(shape.machines, 0.0);
      return build_power_of_two(shape, params, seed, loads, 1.0);
    }
  }
  invalid("unknown scheme");
}

}  // namespace

std::string_view scenario_name(Scenario scenario) {
  switch (scenario) {
    case Scenario::kLossCurves: return "loss-curves";
    case Scenario::kLoadBalance: return "load-balance";
    case Scenario::kDatapath: return "datapath";
  }
  return "unknown";
}

Scenario parse_scenario(std::string_view name) {
  if (name == "loss-curves") return Scenario::kLossCurves;
  if (name == "load-balance") return Scenario::kLoadBalance;
  if (name == "datapath") return Scenario::kDatapath;
  invalid("unknown scenario '" + std::string(name) + "'");
}

std::string config_hash(const json& document) {
  const std::string text = document.dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

PointConfig resolve_point(const json& document, const std::string& base_dir) {
  PointConfig p;
  Section top(document, "config");
  const json* version = top.raw("schema_version");
  if (version == nullptr) invalid("schema_version is required");
  if (!version->is_number_integer() || version->get<int>() != kSchemaVersion) {
    invalid("unsupported schema_version " + version->dump() + " (expected " +
            std::to_string(kSchemaVersion) + ")");
  }
  p.scenario = parse_scenario(top.get<std::string>("scenario", ""));
  p.seed = top.get<std::uint64_t>("seed", 1);
  top.get<std::string>("output_dir", "results");
  top.raw("sweeps");

  try {
    auto cluster = top.child("cluster");
    p.shape.machines = cluster.get<int>("machines", p.shape.machines);
    p.shape.slabs_per_machine =
        cluster.get<int>("slabs_per_machine", p.shape.slabs_per_machine);
    p.shape.failure_fraction =
        cluster.get<double>("failure_fraction", p.shape.failure_fraction);
    auto& d = p.datapath;
    d.machine_bytes = cluster.get<std::uint64_t>("machine_bytes", d.machine_bytes);
    d.slab_bytes = cluster.get<std::uint64_t>("slab_bytes", d.slab_bytes);
    cluster.done();
    validate(p.shape);

    auto codec = top.child("codec");
    p.params.k = codec.get<int>("k", p.params.k);
    p.params.r = codec.get<int>("r", p.params.r);
    p.params.delta = codec.get<int>("delta", p.params.delta);
    p.page_size = codec.get<std::size_t>("page_size", p.page_size);
    codec.done();
    validate(p.params);
    if (p.page_size == 0) invalid("codec.page_size must be positive");

    auto placement = top.child("placement");
    d.scheme = parse_scheme(placement.get<std::string>("scheme", "codingsets"));
    p.l = placement.get<int>("l", p.l);
    placement.done();
    if (p.l < 0) invalid("placement.l must be >= 0");

    auto lat = top.child("latency");
    auto& m = p.latency;
    m.split_fixed_us = lat.get<double>("split_fixed_us", m.split_fixed_us);
    m.bytes_per_us = lat.get<double>("bytes_per_us", m.bytes_per_us);
    m.sigma = lat.get<double>("sigma", m.sigma);
    m.straggler_probability =
        lat.get<double>("straggler_probability", m.straggler_probability);
    m.straggler_multiplier =
        lat.get<double>("straggler_multiplier", m.straggler_multiplier);
    if (lat.has("straggler_scope")) {
      m.straggler_scope =
          parse_scope(lat.get<std::string>("straggler_scope", ""));
    }
    m.background_multiplier =
        lat.get<double>("background_multiplier", m.background_multiplier);
    m.encode_us = lat.get<double>("encode_us", m.encode_us);
    m.decode_us = lat.get<double>("decode_us", m.decode_us);
    m.post_us = lat.get<double>("post_us", m.post_us);
    m.context_switch_us = lat.get<double>("context_switch_us", m.context_switch_us);
    m.copy_us = lat.get<double>("copy_us", m.copy_us);
    m.disk_us = lat.get<double>("disk_us", m.disk_us);
    lat.done();
    sim::validate(m);

    auto loss = top.child("loss");
    if (loss.has("schemes")) {
      p.loss.schemes =
          parse_schemes(loss.get<std::vector<std::string>>("schemes", {}));
    }
    p.loss.trials = loss.get<std::int64_t>("trials", p.loss.trials);
    p.loss.exact_check = loss.get<bool>("exact_check", p.loss.exact_check);
    p.loss.max_exact_sets =
        loss.get<double>("max_exact_sets", p.loss.max_exact_sets);
    if (loss.has("mode")) p.loss.mode = parse_mode(loss.get<std::string>("mode", ""));
    loss.done();
    if (p.loss.trials < 1) invalid("loss.trials must be >= 1");

    auto balance = top.child("balance");
    p.balance.l_values =
        balance.get<std::vector<int>>("l_values", p.balance.l_values);
    if (balance.has("policies")) {
      p.balance.policies =
          parse_schemes(balance.get<std::vector<std::string>>("policies", {}));
    }
    p.balance.seeds = balance.get<int>("seeds", p.balance.seeds);
    balance.done();
    if (p.balance.seeds < 1) invalid("balance.seeds must be >= 1");
    for (int l : p.balance.l_values) {
      if (l < 0) invalid("balance.l_values must be >= 0");
    }

    auto mgr = top.child("manager");
    auto& mc = d.manager;
    mc.params = p.params;
    mc.page_size = p.page_size;
    mc.async_parity = mgr.get<bool>("async_parity", mc.async_parity);
    mc.verify_reads = mgr.get<bool>("verify_reads", mc.verify_reads);
    mc.run_to_completion = mgr.get<bool>("run_to_completion", mc.run_to_completion);
    mc.in_place_coding = mgr.get<bool>("in_place_coding", mc.in_place_coding);
    mc.error_correction_limit =
        mgr.get<double>("error_correction_limit", mc.error_correction_limit);
    mc.slab_regeneration_limit =
        mgr.get<double>("slab_regeneration_limit", mc.slab_regeneration_limit);
    mc.health_window = mgr.get<int>("health_window", mc.health_window);
    d.regenerate = mgr.get<bool>("regenerate", d.regenerate);
    mgr.done();
    rm::validate(mc);

    auto mon = top.child("monitor");
    if (mon.get<bool>("enabled", false)) {
      monitor::MonitorConfig cfg;
      cfg.headroom = mon.get<double>("headroom", cfg.headroom);
      cfg.control_period = sim::from_us(mon.get<double>(
          "control_period_us", sim::to_us(cfg.control_period)));
      cfg.evict_batch = mon.get<int>("evict_batch", cfg.evict_batch);
      cfg.extra_candidates = mon.get<int>("extra_candidates", cfg.extra_candidates);
      monitor::validate(cfg);
      d.monitor = cfg;
    } else {
      for (const char* key : {"headroom", "control_period_us", "evict_batch",
                              "extra_candidates"}) {
        mon.raw(key);
      }
    }
    mon.done();

    auto wl = top.child("workload");
    if (wl.has("trace")) {
      d.trace_path = resolve_path(wl.get<std::string>("trace", ""), base_dir);
      if (!fs::exists(d.trace_path)) {
        invalid("workload trace '" + d.trace_path + "' does not exist");
      }
    }
    auto& w = d.workload;
    w.operations = wl.get<std::int64_t>("operations", w.operations);
    w.ranges = wl.get<std::int64_t>("ranges", w.ranges);
    w.pages_per_range = wl.get<int>("pages_per_range", w.pages_per_range);
    w.read_fraction = wl.get<double>("read_fraction", w.read_fraction);
    w.rate_per_us = wl.get<double>("rate_per_us", w.rate_per_us);
    w.prefill = wl.get<bool>("prefill", w.prefill);
    wl.done();
    workload::validate(w);

    if (const json* faults = top.raw("faults")) {
      if (faults->is_string()) {
        const std::string path = resolve_path(faults->get<std::string>(), base_dir);
        if (!fs::exists(path)) {
          invalid("fault script '" + path + "' does not exist");
        }
        d.faults = sim::load_fault_script(path);
      } else {
        d.faults = sim::parse_fault_script(*faults);
      }
    }

    auto base = top.child("baselines");
    d.replication = base.get<std::vector<int>>("replication", d.replication);
    d.ssd_backup = base.get<bool>("ssd_backup", d.ssd_backup);
    base.done();
    for (int n : d.replication) {
      if (n < 1) invalid("baselines.replication entries must be >= 1");
    }
    top.done();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigInvalid || e.code() == ErrorCode::kIoError) {
      throw;
    }
    invalid(e.what());
  }
  return p;
}

ExperimentConfig parse_config(json document, const std::string& base_dir) {
  ExperimentConfig config;
  if (!document.is_object()) invalid("config must be a JSON object");
  config.document = document;
  config.base_dir = base_dir;
  config.hash = config_hash(document);

  json base = document;
  if (const auto it = document.find("sweeps"); it != document.end()) {
    if (!it->is_array()) invalid("sweeps must be a list");
    for (const auto& entry : *it) {
      if (!entry.is_object() || !entry.contains("path") ||
          !entry.contains("values") || !entry["path"].is_string() ||
          !entry["values"].is_array() || entry.size() != 2) {
        invalid("each sweep needs exactly a string 'path' and a 'values' list");
      }
      SweepAxis axis{entry["path"].get<std::string>(), {}};
      for (const auto& v : entry["values"]) {
        if (v.is_structured()) invalid("sweep values must be scalars");
        axis.values.push_back(v);
      }
      if (axis.values.empty()) invalid("sweep '" + axis.path + "' is empty");
      try {
        (void)json::json_pointer(axis.path);
      } catch (const json::exception&) {
        invalid("sweep path '" + axis.path + "' is not a JSON pointer");
      }
      if (axis.path == "/sweeps" || axis.path.rfind("/sweeps/", 0) == 0) {
        invalid("sweeps cannot sweep themselves");
      }
      config.sweeps.push_back(std::move(axis));
    }
    base.erase("sweeps");
  }

  // Cartesian product; the first axis varies slowest.
  std::vector<std::size_t> index(config.sweeps.size(), 0);
  while (true) {
    json point = base;
    for (std::size_t a = 0; a < config.sweeps.size(); ++a) {
      try {
        point[json::json_pointer(config.sweeps[a].path)] =
            config.sweeps[a].values[index[a]];
      } catch (const json::exception& e) {
        invalid("sweep path '" + config.sweeps[a].path + "': " + e.what());
      }
    }
    config.point_documents.push_back(std::move(point));
    std::size_t a = config.sweeps.size();
    while (a > 0) {
      --a;
      if (++index[a] < config.sweeps[a].values.size()) break;
      index[a] = 0;
      if (a == 0) {
        a = config.sweeps.size() + 1;
        break;
      }
    }
    if (config.sweeps.empty() || a == config.sweeps.size() + 1) break;
  }

  for (const auto& doc : config.point_documents) {
    config.points.push_back(resolve_point(doc, base_dir));
  }
  config.scenario = config.points.front().scenario;
  for (const auto& p : config.points) {
    if (p.scenario != config.scenario) invalid("sweeps cannot change the scenario");
  }
  config.output_dir = resolve_path(
      document.value("output_dir", std::string("results")), base_dir);
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    invalid("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(std::move(doc), fs::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// Loss curves.

ExperimentReport run_loss_curves(const ExperimentConfig& config) {
  ExperimentReport report;
  report.scenario = Scenario::kLossCurves;
  report.config_hash = config.hash;
  report.header = base_header(config);
  for (const char* h :
       {"scheme", "machines", "slabs_per_machine", "failure_fraction", "k", "r",
        "l", "analytic", "mc_estimate", "mc_half_width", "mc_trials", "exact",
        "mc_matches_exact", "seed", "config_hash"}) {
    report.header.push_back(h);
  }

  struct Point {
    Scheme scheme;
    ClusterShape shape;
    CodecParams params;
    int l;
    double analytic;
    std::size_t row;
  };
  std::vector<Point> computed;
  for (std::size_t i = 0; i < config.points.size(); ++i) {
    const PointConfig& p = config.points[i];
    for (Scheme scheme : p.loss.schemes) {
      const int l = scheme == Scheme::kCodingSets ? p.l : 0;
      const double analytic =
          loss_probability_analytic(scheme, p.shape, p.params, l);
      const PlacementPlan plan =
          build_plan(scheme, p.shape, p.params, l, derive_seed(p.seed, 1));
      const LossEstimate mc = loss_probability_montecarlo(
          plan, p.shape, p.params, p.loss.trials, derive_seed(p.seed, 2),
          p.loss.mode);
      std::string exact_cell;
      std::string match_cell;
      const int failed = p.shape.failed_machines();
      if (p.loss.exact_check &&
          binomial(p.shape.machines, failed) <= p.loss.max_exact_sets) {
        const double exact = loss_probability_exact(
            plan, p.shape, p.params, p.loss.mode, p.loss.max_exact_sets);
        const double se_hw = 1.96 * std::sqrt(exact * (1.0 - exact) /
                                              static_cast<double>(mc.trials));
        const double tol = 3.0 * std::max(mc.half_width, se_hw);
        exact_cell = num(exact);
        match_cell = std::abs(mc.estimate - exact) <= tol ? "true" : "false";
      }
      std::vector<std::string> row{num(i)};
      for (auto& c : axis_cells(config, i)) row.push_back(c);
      for (auto c : {std::string(scheme_name(scheme)), num(p.shape.machines),
                     num(p.shape.slabs_per_machine),
                     num(p.shape.failure_fraction), num(p.params.k),
                     num(p.params.r), num(l), num(analytic), num(mc.estimate),
                     num(mc.half_width), num(mc.trials), exact_cell,
                     match_cell, num(p.seed), config.hash}) {
        row.push_back(c);
      }
      computed.push_back(Point{scheme, p.shape, p.params, l, analytic,
                               report.rows.size()});
      report.rows.push_back(std::move(row));
    }
  }

  // Loss must not fall as f, S or l grow with everything else fixed.
  auto same_except = [](const Point& a, const Point& b, int skip) {
    return a.scheme == b.scheme && a.shape.machines == b.shape.machines &&
           a.params.k == b.params.k && a.params.r == b.params.r &&
           (skip == 0 || a.shape.failure_fraction == b.shape.failure_fraction) &&
           (skip == 1 || a.shape.slabs_per_machine == b.shape.slabs_per_machine) &&
           (skip == 2 || a.l == b.l);
  };
  auto axis_value = [](const Point& p, int axis) {
    if (axis == 0) return p.shape.failure_fraction;
    if (axis == 1) return static_cast<double>(p.shape.slabs_per_machine);
    return static_cast<double>(p.l);
  };
  const char* axis_names[] = {"failure_fraction", "slabs_per_machine", "l"};
  for (int axis = 0; axis < 3; ++axis) {
    for (const auto& a : computed) {
      for (const auto& b : computed) {
        if (!same_except(a, b, axis)) continue;
        if (axis_value(a, axis) < axis_value(b, axis) &&
            a.analytic > b.analytic * (1.0 + 1e-12) + 1e-300) {
          invalid(std::string("loss decreased as ") + axis_names[axis] +
                  " grew: row " + std::to_string(a.row) + " (" +
                  num(a.analytic) + ") vs row " + std::to_string(b.row) +
                  " (" + num(b.analytic) + ")");
        }
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Load balance.

LoadImbalance place_and_measure(Scheme policy, int l, const ClusterShape& shape,
                                const CodecParams& params, std::uint64_t seed) {
  validate(shape);
  validate(params);
  const double slab = 1.0;
  LoadVector loads(shape.machines, 0.0);
  const std::int64_t ranges = static_cast<std::int64_t>(shape.machines) *
                              shape.slabs_per_machine / params.total();
  switch (policy) {
    case Scheme::kCodingSets: {
      const PlacementPlan plan = build_codingsets(shape, params, l, seed);
      for (std::int64_t r = 0; r < ranges; ++r) {
        const auto& group = plan.groups[plan.group_for_range(r)];
        for (MachineId m : select_members(group, loads, params)) loads[m] += slab;
      }
      break;
    }
    case Scheme::kEcCache: {
      const PlacementPlan plan = build_eccache(shape, params, seed);
      for (std::int64_t r = 0; r < ranges; ++r) {
        for (MachineId m : plan.groups[plan.group_for_range(r)].members) {
          loads[m] += slab;
        }
      }
      break;
    }
    case Scheme::kPowerOfTwo:
      build_power_of_two(shape, params, seed, loads, slab);
      break;
  }
  return load_imbalance(loads, slab);
}

ExperimentReport run_load_balance(const ExperimentConfig& config) {
  ExperimentReport report;
  report.scenario = Scenario::kLoadBalance;
  report.config_hash = config.hash;
  report.header = base_header(config);
  for (const char* h :
       {"policy", "l", "machines", "slabs_per_machine", "k", "r", "ranges",
        "seeds", "max_to_min", "cv", "min_utilization", "floored_runs", "seed",
        "config_hash"}) {
    report.header.push_back(h);
  }
  auto per_point = parallel_points(config.points.size(), [&](std::size_t i) {
    const PointConfig& p = config.points[i];
    std::vector<std::vector<std::string>> rows;
    std::vector<std::pair<Scheme, int>> policies;
    for (Scheme s : p.balance.policies) {
      if (s == Scheme::kCodingSets) {
        for (int l : p.balance.l_values) policies.emplace_back(s, l);
      } else {
        policies.emplace_back(s, 0);
      }
    }
    for (const auto& [scheme, l] : policies) {
      double ratio = 0.0, cv = 0.0, util = 0.0;
      int floored = 0;
      for (int s = 0; s < p.balance.seeds; ++s) {
        const LoadImbalance m = place_and_measure(
            scheme, l, p.shape, p.params, derive_seed(p.seed, 100 + s));
        ratio += m.max_to_min;
        cv += m.cv;
        util += m.min_utilization;
        floored += m.floored ? 1 : 0;
      }
      const double n = p.balance.seeds;
      std::vector<std::string> row{num(i)};
      for (auto& c : axis_cells(config, i)) row.push_back(c);
      const std::int64_t ranges = static_cast<std::int64_t>(p.shape.machines) *
                                  p.shape.slabs_per_machine / p.params.total();
      for (auto c : {std::string(scheme_name(scheme)), num(l),
                     num(p.shape.machines), num(p.shape.slabs_per_machine),
                     num(p.params.k), num(p.params.r), num(ranges),
                     num(p.balance.seeds), num(ratio / n), num(cv / n),
                     num(util / n), num(floored), num(p.seed), config.hash}) {
        row.push_back(c);
      }
      rows.push_back(std::move(row));
    }
    return rows;
  });
  for (auto& rows : per_point) {
    for (auto& row : rows) report.rows.push_back(std::move(row));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Data path.

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

LatencyStats summarize(const std::vector<double>& latencies_us) {
  LatencyStats s;
  s.count = latencies_us.size();
  if (latencies_us.empty()) return s;
  s.p50_us = percentile(latencies_us, 0.50);
  s.p99_us = percentile(latencies_us, 0.99);
  double sum = 0.0;
  for (double v : latencies_us) sum += v;
  s.mean_us = sum / static_cast<double>(latencies_us.size());
  return s;
}

DatapathResult run_datapath_point(const PointConfig& point,
                                  const std::vector<workload::TraceOp>& trace,
                                  const DatapathLogs& logs) {
  const DatapathSettings& d = point.datapath;
  sim::ClusterConfig cc;
  cc.machines = point.shape.machines;
  cc.machine_bytes = d.machine_bytes;
  cc.slab_bytes = d.slab_bytes;
  cc.latency = point.latency;
  sim::Cluster cluster(cc, derive_seed(point.seed, 10));
  cluster.set_logging(logs.events != nullptr);

  PlacementPlan plan;
  if (d.scheme == Scheme::kPowerOfTwo) {
    // Power-of-two picks machines when each range is mapped.
    plan.scheme = Scheme::kPowerOfTwo;
    plan.machines = point.shape.machines;
    plan.params = point.params;
    plan.seed = derive_seed(point.seed, 11);
  } else {
    plan = build_plan(d.scheme, point.shape, point.params, point.l,
                      derive_seed(point.seed, 11));
  }
  rm::ManagerConfig mc = d.manager;
  mc.params = point.params;
  mc.page_size = point.page_size;
  rm::ResilienceManager manager(cluster, std::move(plan), mc,
                                derive_seed(point.seed, 12));
  monitor::RegenerationEngine engine(cluster, derive_seed(point.seed, 13));
  if (d.regenerate) engine.attach(manager);

  std::set<std::int64_t> ranges;
  for (const auto& op : trace) ranges.insert(op.range);
  for (std::int64_t r : ranges) manager.map_range(r);
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (trace[i].page >= manager.range(trace[i].range).page_capacity) {
      throw Error(ErrorCode::kTraceParseError,
                  "trace op " + std::to_string(i) + " addresses page " +
                      std::to_string(trace[i].page) + " beyond the range");
    }
  }

  std::optional<monitor::MonitorFleet> fleet;
  if (d.monitor) {
    fleet.emplace(cluster, *d.monitor, derive_seed(point.seed, 14), &engine);
    const Time end = trace.empty() ? 0 : trace.back().at;
    fleet->schedule(0, end + d.monitor->control_period);
  }
  cluster.inject(d.faults);

  struct Expected {
    Bytes bytes;
    bool ambiguous = false;
  };
  std::map<rm::PageAddress, std::shared_ptr<Expected>> model;
  DatapathResult out;
  PhaseBreakdown read_sum, write_sum;
  const double cpu_us =
      (mc.run_to_completion ? 0.0 : point.latency.context_switch_us) +
      (mc.in_place_coding ? 0.0 : point.latency.copy_us);
  Time last_done = 0;

  for (std::size_t i = 0; i < trace.size(); ++i) {
    const workload::TraceOp op = trace[i];
    cluster.submit(op.at, "trace", std::to_string(i), [&, op, i]() {
      const rm::PageAddress addr{op.range, op.page};
      if (op.op == 'W') {
        auto expected = std::make_shared<Expected>();
        expected->bytes = workload::payload(
            op.payload_seed.value_or(derive_seed(point.seed, 1000 + i)),
            point.page_size);
        model[addr] = expected;
        manager.remote_write(addr, expected->bytes,
                             [&, expected](const rm::WriteCompletion& c) {
                               last_done = std::max(last_done, c.data_acked_at);
                               if (!c.ok()) {
                                 expected->ambiguous = true;
                                 ++out.failed_writes;
                                 return;
                               }
                               const double total =
                                   sim::to_us(c.data_acked_at - c.submitted_at);
                               const double queue =
                                   sim::to_us(c.started_at - c.submitted_at);
                               const double coding = sim::to_us(c.coding_time);
                               out.write_latencies_us.push_back(total);
                               write_sum.queue_us += queue;
                               write_sum.coding_us += coding;
                               write_sum.cpu_us += cpu_us;
                               write_sum.network_us +=
                                   total - queue - coding - cpu_us;
                             });
      } else {
        std::shared_ptr<Expected> expected;
        if (auto it = model.find(addr); it != model.end()) expected = it->second;
        manager.remote_read(addr, [&, expected](const rm::ReadResult& r) {
          last_done = std::max(last_done, r.completed_at);
          if (!r.ok()) {
            if (r.error == ErrorCode::kUnrecoverableRead) ++out.unrecoverable_reads;
            return;
          }
          if (r.corrected) ++out.corrected_reads;
          const bool zero_page = std::all_of(
              r.page.begin(), r.page.end(), [](std::uint8_t b) { return b == 0; });
          if (expected ? (!expected->ambiguous && r.page != expected->bytes)
                       : !zero_page) {
            ++out.wrong_reads;
          }
          const double total = sim::to_us(r.completed_at - r.submitted_at);
          const double queue = sim::to_us(r.started_at - r.submitted_at);
          const double coding = sim::to_us(r.coding_time);
          out.read_latencies_us.push_back(total);
          read_sum.queue_us += queue;
          read_sum.coding_us += coding;
          read_sum.cpu_us += cpu_us;
          read_sum.network_us += total - queue - coding - cpu_us;
        });
      }
      return std::string(1, op.op);
    });
  }
  cluster.run();

  out.read = summarize(out.read_latencies_us);
  out.write = summarize(out.write_latencies_us);
  auto mean = [](PhaseBreakdown s, std::size_t n) {
    if (n == 0) return PhaseBreakdown{};
    const double d = static_cast<double>(n);
    return PhaseBreakdown{s.queue_us / d, s.network_us / d, s.coding_us / d,
                          s.cpu_us / d};
  };
  out.read_phases = mean(read_sum, out.read.count);
  out.write_phases = mean(write_sum, out.write.count);
  const Time start = trace.empty() ? 0 : trace.front().at;
  out.duration = std::max<Time>(0, last_done - start);
  if (out.duration > 0) {
    out.throughput_kops = static_cast<double>(trace.size()) /
                          sim::to_us(out.duration) * 1000.0;
  }
  out.regenerations = engine.completed();
  for (std::int64_t r : manager.mapped_ranges()) {
    if (manager.range(r).unrecoverable) out.unrecoverable_ranges.push_back(r);
  }
  if (logs.events) cluster.write_event_log(*logs.events);
  if (logs.completions) manager.write_completion_log(*logs.completions);
  if (logs.monitor && fleet) fleet->write_csv(*logs.monitor);
  return out;
}

namespace {

template <typename Combine>
BaselineResult copies_baseline(const sim::LatencyModel& model,
                               std::size_t page_size, int copies,
                               std::size_t operations, Rng& rng,
                               Combine combine) {
  BaselineResult out;
  std::vector<double> reads, writes;
  const bool per_op =
      model.straggler_scope == sim::StragglerScope::kPerOperation;
  std::bernoulli_distribution coin(model.straggler_probability);
  std::uniform_int_distribution<int> pick(0, copies - 1);
  for (std::size_t i = 0; i < operations; ++i) {
    for (int phase = 0; phase < 2; ++phase) {
      const int straggler = per_op && coin(rng) ? pick(rng) : -1;
      std::vector<double> done;
      for (int c = 0; c < copies; ++c) {
        sim::LatencyContext ctx;
        ctx.bytes = page_size;
        if (per_op) ctx.straggler = c == straggler;
        done.push_back((c + 1) * model.post_us +
                       sim::to_us(sample_split_latency(model, ctx, rng).duration));
      }
      (phase == 0 ? reads : writes).push_back(combine(done, phase == 0));
    }
  }
  out.read = summarize(reads);
  out.write = summarize(writes);
  return out;
}

}  // namespace

BaselineResult replication_baseline(const sim::LatencyModel& model,
                                    std::size_t page_size, int copies,
                                    std::size_t operations,
                                    std::uint64_t seed) {
  Rng rng = make_rng(seed, 600 + static_cast<std::uint64_t>(copies));
  auto out = copies_baseline(
      model, page_size, copies, operations, rng,
      [](const std::vector<double>& done, bool read) {
        return read ? *std::min_element(done.begin(), done.end())
                    : *std::max_element(done.begin(), done.end());
      });
  out.name = "replication-" + std::to_string(copies);
  return out;
}

BaselineResult ssd_backup_baseline(const sim::LatencyModel& model,
                                   std::size_t page_size,
                                   std::size_t operations,
                                   std::uint64_t seed) {
  Rng rng = make_rng(seed, 700);
  auto out = copies_baseline(
      model, page_size, 1, operations, rng,
      [&](const std::vector<double>& done, bool read) {
        return read ? done[0] : done[0] + model.disk_us;
      });
  out.name = "ssd-backup";
  return out;
}

ExperimentReport run_datapath(const ExperimentConfig& config,
                              const std::string& log_dir) {
  ExperimentReport report;
  report.scenario = Scenario::kDatapath;
  report.config_hash = config.hash;
  report.header = base_header(config);
  for (const char* h :
       {"system", "k", "r", "delta", "reads", "writes", "read_p50_us",
        "read_p99_us", "write_p50_us", "write_p99_us", "read_queue_us",
        "read_network_us", "read_coding_us", "read_cpu_us", "write_queue_us",
        "write_network_us", "write_coding_us", "write_cpu_us",
        "throughput_kops", "unrecoverable_reads", "wrong_reads",
        "failed_writes", "corrected_reads", "regenerations", "seed",
        "config_hash"}) {
    report.header.push_back(h);
  }

  struct PointOutput {
    std::vector<std::vector<std::string>> rows;
    std::string events, completions, monitor;
  };
  auto outputs = parallel_points(config.points.size(), [&](std::size_t i) {
    const PointConfig& p = config.points[i];
    const auto trace =
        p.datapath.trace_path.empty()
            ? workload::generate_trace(p.datapath.workload,
                                       derive_seed(p.seed, 3),
                                       &p.datapath.faults)
            : workload::load_trace(p.datapath.trace_path);
    std::ostringstream events, completions, mon;
    DatapathLogs logs;
    if (!log_dir.empty()) {
      logs.events = &events;
      logs.completions = &completions;
      logs.monitor = &mon;
    }
    const DatapathResult r = run_datapath_point(p, trace, logs);

    PointOutput out;
    out.events = events.str();
    out.completions = completions.str();
    out.monitor = mon.str();
    auto prefix = [&]() {
      std::vector<std::string> row{num(i)};
      for (auto& c : axis_cells(config, i)) row.push_back(c);
      return row;
    };
    std::vector<std::string> row = prefix();
    for (auto c :
         {std::string("ecmem"), num(p.params.k), num(p.params.r),
          num(p.params.delta), num(r.read.count), num(r.write.count),
          num(r.read.p50_us), num(r.read.p99_us), num(r.write.p50_us),
          num(r.write.p99_us), num(r.read_phases.queue_us),
          num(r.read_phases.network_us), num(r.read_phases.coding_us),
          num(r.read_phases.cpu_us), num(r.write_phases.queue_us),
          num(r.write_phases.network_us), num(r.write_phases.coding_us),
          num(r.write_phases.cpu_us), num(r.throughput_kops),
          num(r.unrecoverable_reads), num(r.wrong_reads), num(r.failed_writes),
          num(r.corrected_reads), num(r.regenerations), num(p.seed),
          config.hash}) {
      row.push_back(c);
    }
    out.rows.push_back(std::move(row));

    const std::size_t ops = std::max<std::size_t>(1, trace.size());
    std::vector<BaselineResult> baselines;
    for (int n : p.datapath.replication) {
      baselines.push_back(replication_baseline(p.latency, p.page_size, n, ops,
                                               derive_seed(p.seed, 4)));
    }
    if (p.datapath.ssd_backup) {
      baselines.push_back(
          ssd_backup_baseline(p.latency, p.page_size, ops, derive_seed(p.seed, 4)));
    }
    for (const auto& b : baselines) {
      std::vector<std::string> brow = prefix();
      for (auto c : {b.name, std::string(""), std::string(""), std::string(""),
                     num(b.read.count), num(b.write.count), num(b.read.p50_us),
                     num(b.read.p99_us), num(b.write.p50_us), num(b.write.p99_us)}) {
        brow.push_back(c);
      }
      while (brow.size() + 2 < report.header.size()) brow.emplace_back();
      brow.push_back(num(p.seed));
      brow.push_back(config.hash);
      out.rows.push_back(std::move(brow));
    }
    return out;
  });

  for (std::size_t i = 0; i < outputs.size(); ++i) {
    for (auto& row : outputs[i].rows) report.rows.push_back(std::move(row));
    if (log_dir.empty()) continue;
    fs::create_directories(log_dir);
    const std::string stem = (fs::path(log_dir) /
                              ("datapath_" + config.hash + "_p" +
                               std::to_string(i))).string();
    std::ofstream(stem + "_events.csv") << outputs[i].events;
    std::ofstream(stem + "_completions.csv") << outputs[i].completions;
    if (!outputs[i].monitor.empty()) {
      std::ofstream(stem + "_monitor.csv") << outputs[i].monitor;
    }
  }
  return report;
}

ExperimentReport run(const ExperimentConfig& config,
                     const std::string& log_dir) {
  switch (config.scenario) {
    case Scenario::kLossCurves: return run_loss_curves(config);
    case Scenario::kLoadBalance: return run_load_balance(config);
    case Scenario::kDatapath: return run_datapath(config, log_dir);
  }
  invalid("unknown scenario");
}

// ---------------------------------------------------------------------------

void write_csv(std::ostream& out, const ExperimentReport& report) {
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i > 0) out << ',';
      const std::string& c = cells[i];
      if (c.find_first_of(",\"\n") != std::string::npos) {
        out << '"';
        for (char ch : c) {
          if (ch == '"') out << '"';
          out << ch;
        }
        out << '"';
      } else {
        out << c;
      }
    }
    out << '\n';
  };
  line(report.header);
  for (const auto& row : report.rows) line(row);
}

std::string emit_report(const ExperimentReport& report,
                        const std::string& dir) {
  if (report.rows.empty()) invalid("refusing to write an empty report");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIoError,
                "cannot create '" + dir + "': " + ec.message());
  }
  const std::string path =
      (fs::path(dir) / (std::string(scenario_name(report.scenario)) + "_" +
                        report.config_hash + ".csv"))
          .string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path + "'");
  write_csv(out, report);
  if (!out) throw Error(ErrorCode::kIoError, "failed writing '" + path + "'");
  return path;
}

}  // namespace ecmem::experiment
