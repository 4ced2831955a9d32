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

#ifndef ECMEM_FAULT_SCRIPT_H_
#define ECMEM_FAULT_SCRIPT_H_

#include <string>
#include <vector>

#include "ecmem/cluster.h"
#include "json.hpp"

namespace ecmem::sim {

// A slab named either by id or by (owner, range, split index). The latter
// is resolved when the event fires, so it follows regenerated slabs.
struct SlabTarget {
  SlabId slab = kNoSlab;
  std::int64_t owner = 0;
  std::int64_t range = -1;
  int role = -1;
};

enum class FaultKind {
  kFail,
  kRecover,
  kPartition,
  kEvict,
  kCorrupt,
  kBackgroundLoad,
  kBurst,
};

struct FaultEvent {
  FaultKind kind = FaultKind::kFail;
  Time at = 0;
  Time until = 0;  // background_load and burst windows
  MachineId machine = -1;
  SlabTarget slab;
  int page = 0;
  std::size_t offset = 0;
  Bytes mask;
  double level = 0.0;  // background level, or burst rate multiplier
};

struct FaultScript {
  std::vector<FaultEvent> events;

  // Request-rate multiplier of the burst windows covering t (1 outside).
  double burst_multiplier(Time t) const;
};

// JSON schema:
//   {"events": [
//     {"type": "fail", "t_us": 5, "machine": 1},
//     {"type": "recover", "t_us": 9, "machine": 1},
//     {"type": "partition", "t_us": 5, "machine": 1},
//     {"type": "evict", "t_us": 7, "slab": 12},
//     {"type": "evict", "t_us": 7, "owner": 0, "range": 3, "split": 9},
//     {"type": "corrupt", "t_us": 8, "range": 0, "split": 2, "page": 4,
//      "offset": 0, "mask": [1, 128]},
//     {"type": "background_load", "t_us": 0, "until_us": 50, "level": 1.0},
//     {"type": "burst", "t_us": 10, "until_us": 20, "multiplier": 4.0}]}
// Events are stably sorted by time. Throws Error(kConfigInvalid).
FaultScript parse_fault_script(const nlohmann::json& doc);
FaultScript load_fault_script(const std::string& path);
nlohmann::json to_json(const FaultScript& script);

std::string_view fault_kind_name(FaultKind kind);

}  // namespace ecmem::sim

#endif  // ECMEM_FAULT_SCRIPT_H_
