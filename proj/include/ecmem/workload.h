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

#ifndef ECMEM_WORKLOAD_H_
#define ECMEM_WORKLOAD_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ecmem/cluster.h"
#include "ecmem/codec.h"
#include "ecmem/fault_script.h"

namespace ecmem::workload {

using sim::Time;

struct TraceOp {
  Time at = 0;
  char op = 'R';  // 'R' or 'W'
  std::int64_t range = 0;
  int page = 0;
  std::optional<std::uint64_t> payload_seed;  // writes only
};

// CSV with header `time_us,op,range,page,payload_seed`. The payload column
// may be empty or absent. Rows must be sorted by time.
// Throws Error(kTraceParseError) naming the offending line.
std::vector<TraceOp> parse_trace(std::istream& in);
std::vector<TraceOp> load_trace(const std::string& path);
void write_trace(std::ostream& out, const std::vector<TraceOp>& ops);

struct WorkloadConfig {
  std::int64_t operations = 10000;
  std::int64_t ranges = 4;
  int pages_per_range = 16;
  double read_fraction = 0.5;
  double rate_per_us = 0.05;  // mean arrivals per virtual microsecond
  // Write every page once, in order, before the mixed phase.
  bool prefill = true;
};

// Throws Error(kInvalidParams).
void validate(const WorkloadConfig& config);

// Poisson arrivals over uniformly random page addresses. Burst windows in
// `bursts` scale the arrival rate.
std::vector<TraceOp> generate_trace(const WorkloadConfig& config,
                                    std::uint64_t seed,
                                    const sim::FaultScript* bursts = nullptr);

// Deterministic page contents for a payload seed.
Bytes payload(std::uint64_t seed, std::size_t page_size);

}  // namespace ecmem::workload

#endif  // ECMEM_WORKLOAD_H_
