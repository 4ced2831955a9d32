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

#ifndef ECMEM_EXPERIMENT_H_
#define ECMEM_EXPERIMENT_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "ecmem/cluster.h"
#include "ecmem/codec.h"
#include "ecmem/fault_script.h"
#include "ecmem/placement.h"
#include "ecmem/resilience_manager.h"
#include "ecmem/resource_monitor.h"
#include "ecmem/workload.h"

namespace ecmem::experiment {

using json = nlohmann::json;
using sim::Time;

inline constexpr int kSchemaVersion = 1;

enum class Scenario { kLossCurves, kLoadBalance, kDatapath };

std::string_view scenario_name(Scenario scenario);
// Throws Error(kConfigInvalid).
Scenario parse_scenario(std::string_view name);

// Replaces the value at a JSON pointer with each listed value in turn.
struct SweepAxis {
  std::string path;
  std::vector<json> values;
};

struct LossSettings {
  std::vector<Scheme> schemes{Scheme::kCodingSets, Scheme::kEcCache};
  std::int64_t trials = 100000;
  bool exact_check = true;
  double max_exact_sets = 2e7;
  LossMode mode = LossMode::kConservative;
};

struct BalanceSettings {
  std::vector<int> l_values{0, 2, 4};
  std::vector<Scheme> policies{Scheme::kCodingSets, Scheme::kEcCache,
                               Scheme::kPowerOfTwo};
  int seeds = 20;
};

struct DatapathSettings {
  Scheme scheme = Scheme::kCodingSets;
  std::uint64_t machine_bytes = 64ull << 20;
  std::uint64_t slab_bytes = 64ull << 10;
  rm::ManagerConfig manager;
  bool regenerate = true;
  std::optional<monitor::MonitorConfig> monitor;
  // Either a trace file or the generator settings.
  std::string trace_path;
  workload::WorkloadConfig workload;
  sim::FaultScript faults;
  std::vector<int> replication{2, 3};
  bool ssd_backup = true;
};

// One fully resolved sweep point.
struct PointConfig {
  Scenario scenario = Scenario::kLossCurves;
  std::uint64_t seed = 1;
  ClusterShape shape{1000, 16, 0.01};
  CodecParams params;
  std::size_t page_size = kDefaultPageSize;
  int l = 2;
  sim::LatencyModel latency;
  LossSettings loss;
  BalanceSettings balance;
  DatapathSettings datapath;
};

struct ExperimentConfig {
  json document;         // with command-line overrides applied
  std::string base_dir;  // relative file references resolve against this
  std::string output_dir;
  Scenario scenario = Scenario::kLossCurves;
  std::vector<SweepAxis> sweeps;
  std::vector<json> point_documents;  // Cartesian product, first axis slowest
  std::vector<PointConfig> points;
  std::string hash;
};

// FNV-1a 64 of the canonical (sorted-key, compact) dump, as 16 hex digits.
std::string config_hash(const json& document);

// Validates everything, including every sweep point and referenced file.
// Throws Error(kConfigInvalid) or, for unreadable files, Error(kIoError).
ExperimentConfig parse_config(json document, const std::string& base_dir);
ExperimentConfig load_config(const std::string& path);
PointConfig resolve_point(const json& document, const std::string& base_dir);

struct ExperimentReport {
  Scenario scenario = Scenario::kLossCurves;
  std::string config_hash;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Loss curves abort with Error(kConfigInvalid) naming the rows when the
// analytic loss decreases as f, S or l grows.
ExperimentReport run_loss_curves(const ExperimentConfig& config);
ExperimentReport run_load_balance(const ExperimentConfig& config);
// Places floor(N*S/(k+r)) address ranges under one policy and measures the
// per-machine slab load; epsilon is one slab.
LoadImbalance place_and_measure(Scheme policy, int l, const ClusterShape& shape,
                                const CodecParams& params, std::uint64_t seed);
ExperimentReport run_datapath(const ExperimentConfig& config,
                              const std::string& log_dir = "");
ExperimentReport run(const ExperimentConfig& config,
                     const std::string& log_dir = "");

void write_csv(std::ostream& out, const ExperimentReport& report);
// Writes `<scenario>_<hash>.csv` into `dir` and returns its path.
// Throws Error(kIoError) or, for an empty report, Error(kConfigInvalid).
std::string emit_report(const ExperimentReport& report, const std::string& dir);

// Nearest-rank percentile, q in (0, 1].
double percentile(std::vector<double> values, double q);

struct LatencyStats {
  std::size_t count = 0;
  double p50_us = 0.0;
  double p99_us = 0.0;
  double mean_us = 0.0;
};
LatencyStats summarize(const std::vector<double>& latencies_us);

struct PhaseBreakdown {
  double queue_us = 0.0;
  double network_us = 0.0;
  double coding_us = 0.0;
  double cpu_us = 0.0;
};

struct DatapathResult {
  std::vector<double> read_latencies_us;
  std::vector<double> write_latencies_us;
  LatencyStats read;
  LatencyStats write;
  PhaseBreakdown read_phases;   // means
  PhaseBreakdown write_phases;  // means
  double throughput_kops = 0.0;
  std::uint64_t unrecoverable_reads = 0;
  std::uint64_t wrong_reads = 0;
  std::uint64_t failed_writes = 0;
  std::uint64_t corrected_reads = 0;
  std::uint64_t regenerations = 0;
  std::vector<std::int64_t> unrecoverable_ranges;
  Time duration = 0;
};

struct DatapathLogs {
  std::ostream* events = nullptr;
  std::ostream* completions = nullptr;
  std::ostream* monitor = nullptr;
};

// Replays `trace` through a resilience manager on a fresh simulated cluster
// and checks every successful read against the last write to its page.
DatapathResult run_datapath_point(const PointConfig& point,
                                  const std::vector<workload::TraceOp>& trace,
                                  const DatapathLogs& logs = {});

// Comparison rows computed from the latency model. Replication reads take
// the fastest of n full-page copies and writes the slowest; the SSD-backup
// write adds the disk constant to one remote copy.
struct BaselineResult {
  std::string name;
  LatencyStats read;
  LatencyStats write;
};
BaselineResult replication_baseline(const sim::LatencyModel& model,
                                    std::size_t page_size, int copies,
                                    std::size_t operations, std::uint64_t seed);
BaselineResult ssd_backup_baseline(const sim::LatencyModel& model,
                                   std::size_t page_size,
                                   std::size_t operations, std::uint64_t seed);

}  // namespace ecmem::experiment

#endif  // ECMEM_EXPERIMENT_H_
