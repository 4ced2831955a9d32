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

#include "ecmem/fault_script.h"

#include <algorithm>
#include <fstream>

#include "ecmem/error.h"

namespace ecmem::sim {

using nlohmann::json;

namespace {

FaultKind parse_kind(const std::string& name) {
  if (name == "fail") return FaultKind::kFail;
  if (name == "recover") return FaultKind::kRecover;
  if (name == "partition") return FaultKind::kPartition;
  if (name == "evict") return FaultKind::kEvict;
  if (name == "corrupt") return FaultKind::kCorrupt;
  if (name == "background_load") return FaultKind::kBackgroundLoad;
  if (name == "burst") return FaultKind::kBurst;
  throw Error(ErrorCode::kConfigInvalid, "unknown fault type '" + name + "'");
}

SlabTarget parse_target(const json& j) {
  SlabTarget t;
  if (j.contains("slab")) {
    t.slab = j.at("slab").get<SlabId>();
  } else {
    t.owner = j.value("owner", std::int64_t{0});
    t.range = j.at("range").get<std::int64_t>();
    t.role = j.at("split").get<int>();
  }
  return t;
}

}  // namespace

std::string_view fault_kind_name(FaultKind kind) {
  switch (kind) {
    case FaultKind::kFail: return "fail";
    case FaultKind::kRecover: return "recover";
    case FaultKind::kPartition: return "partition";
    case FaultKind::kEvict: return "evict";
    case FaultKind::kCorrupt: return "corrupt";
    case FaultKind::kBackgroundLoad: return "background_load";
    case FaultKind::kBurst: return "burst";
  }
  return "unknown";
}

double FaultScript::burst_multiplier(Time t) const {
  double m = 1.0;
  for (const auto& e : events) {
    if (e.kind == FaultKind::kBurst && t >= e.at && t < e.until) m *= e.level;
  }
  return m;
}

FaultScript parse_fault_script(const json& doc) {
  FaultScript script;
  try {
    for (const auto& j : doc.at("events")) {
      FaultEvent e;
      e.kind = parse_kind(j.at("type").get<std::string>());
      e.at = from_us(j.at("t_us").get<double>());
      switch (e.kind) {
        case FaultKind::kFail:
        case FaultKind::kRecover:
        case FaultKind::kPartition:
          e.machine = j.at("machine").get<MachineId>();
          break;
        case FaultKind::kEvict:
          e.slab = parse_target(j);
          break;
        case FaultKind::kCorrupt:
          e.slab = parse_target(j);
          e.page = j.at("page").get<int>();
          e.offset = j.value("offset", std::size_t{0});
          e.mask = j.at("mask").get<Bytes>();
          if (std::all_of(e.mask.begin(), e.mask.end(),
                          [](std::uint8_t b) { return b == 0; })) {
            throw Error(ErrorCode::kConfigInvalid,
                        "corrupt mask must flip at least one bit");
          }
          break;
        case FaultKind::kBackgroundLoad:
          e.until = from_us(j.at("until_us").get<double>());
          e.level = j.value("level", 1.0);
          if (e.level < 0.0 || e.level > 1.0) {
            throw Error(ErrorCode::kConfigInvalid,
                        "background level outside [0, 1]");
          }
          break;
        case FaultKind::kBurst:
          e.until = from_us(j.at("until_us").get<double>());
          e.level = j.at("multiplier").get<double>();
          if (!(e.level > 0.0)) {
            throw Error(ErrorCode::kConfigInvalid,
                        "burst multiplier must be positive");
          }
          break;
      }
      if (e.at < 0 || e.until < 0) {
        throw Error(ErrorCode::kConfigInvalid, "negative fault time");
      }
      script.events.push_back(std::move(e));
    }
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kConfigInvalid,
                std::string("fault script: ") + ex.what());
  }
  std::stable_sort(
      script.events.begin(), script.events.end(),
      [](const FaultEvent& a, const FaultEvent& b) { return a.at < b.at; });
  return script;
}

FaultScript load_fault_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& ex) {
    throw Error(ErrorCode::kConfigInvalid, path + ": " + ex.what());
  }
  return parse_fault_script(doc);
}

json to_json(const FaultScript& script) {
  json events = json::array();
  for (const auto& e : script.events) {
    json j;
    j["type"] = fault_kind_name(e.kind);
    j["t_us"] = to_us(e.at);
    switch (e.kind) {
      case FaultKind::kFail:
      case FaultKind::kRecover:
      case FaultKind::kPartition:
        j["machine"] = e.machine;
        break;
      case FaultKind::kEvict:
      case FaultKind::kCorrupt:
        if (e.slab.slab != kNoSlab) {
          j["slab"] = e.slab.slab;
        } else {
          j["owner"] = e.slab.owner;
          j["range"] = e.slab.range;
          j["split"] = e.slab.role;
        }
        if (e.kind == FaultKind::kCorrupt) {
          j["page"] = e.page;
          j["offset"] = e.offset;
          j["mask"] = e.mask;
        }
        break;
      case FaultKind::kBackgroundLoad:
        j["until_us"] = to_us(e.until);
        j["level"] = e.level;
        break;
      case FaultKind::kBurst:
        j["until_us"] = to_us(e.until);
        j["multiplier"] = e.level;
        break;
    }
    events.push_back(std::move(j));
  }
  return json{{"events", events}};
}

}  // namespace ecmem::sim
