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

#include "ecmem/workload.h"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "ecmem/error.h"
#include "ecmem/rng.h"

namespace ecmem::workload {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_line(std::size_t line, const std::string& why) {
  throw Error(ErrorCode::kTraceParseError,
              "trace line " + std::to_string(line) + ": " + why);
}

template <typename T>
T parse_number(const std::string& text, std::size_t line, const char* field) {
  std::istringstream in(text);
  T value{};
  in >> value;
  if (in.fail() || !in.eof()) {
    bad_line(line, std::string("bad ") + field + " '" + text + "'");
  }
  return value;
}

}  // namespace

std::vector<TraceOp> parse_trace(std::istream& in) {
  std::vector<TraceOp> ops;
  std::string line;
  std::size_t number = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++number;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      if (line.rfind("time_us", 0) == 0) continue;
    }
    auto cells = split_csv(line);
    for (auto& c : cells) c = trim(c);
    if (cells.size() < 4 || cells.size() > 5) {
      bad_line(number, "expected 4 or 5 columns");
    }
    TraceOp op;
    const double t = parse_number<double>(cells[0], number, "time");
    if (!(t >= 0.0) || !std::isfinite(t)) bad_line(number, "negative time");
    op.at = sim::from_us(t);
    if (cells[1] == "R" || cells[1] == "r") {
      op.op = 'R';
    } else if (cells[1] == "W" || cells[1] == "w") {
      op.op = 'W';
    } else {
      bad_line(number, "op must be R or W");
    }
    op.range = parse_number<std::int64_t>(cells[2], number, "range");
    op.page = parse_number<int>(cells[3], number, "page");
    if (op.range < 0 || op.page < 0) bad_line(number, "negative address");
    if (cells.size() == 5 && !cells[4].empty()) {
      op.payload_seed =
          parse_number<std::uint64_t>(cells[4], number, "payload seed");
    }
    if (!ops.empty() && op.at < ops.back().at) {
      bad_line(number, "rows are not sorted by time");
    }
    ops.push_back(op);
  }
  return ops;
}

std::vector<TraceOp> load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIoError, "cannot open trace '" + path + "'");
  }
  return parse_trace(in);
}

void write_trace(std::ostream& out, const std::vector<TraceOp>& ops) {
  out << "time_us,op,range,page,payload_seed\n";
  for (const auto& op : ops) {
    out << std::fixed << std::setprecision(3) << sim::to_us(op.at) << ','
        << op.op << ',' << op.range << ',' << op.page << ',';
    if (op.payload_seed) out << *op.payload_seed;
    out << '\n';
  }
}

void validate(const WorkloadConfig& config) {
  if (config.operations < 0 || config.ranges < 1 ||
      config.pages_per_range < 1) {
    throw Error(ErrorCode::kInvalidParams,
                "workload needs >= 1 range and page, >= 0 operations");
  }
  if (!(config.read_fraction >= 0.0 && config.read_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidParams, "read fraction outside [0, 1]");
  }
  if (!(config.rate_per_us > 0.0) || !std::isfinite(config.rate_per_us)) {
    throw Error(ErrorCode::kInvalidParams, "arrival rate must be positive");
  }
}

std::vector<TraceOp> generate_trace(const WorkloadConfig& config,
                                    std::uint64_t seed,
                                    const sim::FaultScript* bursts) {
  validate(config);
  Rng rng = make_rng(seed, 500);
  std::exponential_distribution<double> gap(1.0);
  std::uniform_int_distribution<std::int64_t> pick_range(0, config.ranges - 1);
  std::uniform_int_distribution<int> pick_page(0, config.pages_per_range - 1);
  std::bernoulli_distribution is_read(config.read_fraction);

  std::vector<TraceOp> ops;
  double t_us = 0.0;
  std::uint64_t next_payload = 1;
  auto advance = [&]() {
    const double mult = bursts ? bursts->burst_multiplier(sim::from_us(t_us)) : 1.0;
    t_us += gap(rng) / (config.rate_per_us * mult);
  };
  if (config.prefill) {
    for (std::int64_t r = 0; r < config.ranges; ++r) {
      for (int p = 0; p < config.pages_per_range; ++p) {
        advance();
        ops.push_back(TraceOp{sim::from_us(t_us), 'W', r, p,
                              mix_seed(seed ^ next_payload++)});
      }
    }
  }
  for (std::int64_t i = 0; i < config.operations; ++i) {
    advance();
    TraceOp op;
    op.at = sim::from_us(t_us);
    op.op = is_read(rng) ? 'R' : 'W';
    op.range = pick_range(rng);
    op.page = pick_page(rng);
    if (op.op == 'W') op.payload_seed = mix_seed(seed ^ next_payload++);
    ops.push_back(op);
  }
  return ops;
}

Bytes payload(std::uint64_t seed, std::size_t page_size) {
  Rng rng(mix_seed(seed));
  Bytes page(page_size);
  std::size_t i = 0;
  while (i < page_size) {
    std::uint64_t word = rng();
    for (int b = 0; b < 8 && i < page_size; ++b, ++i) {
      page[i] = static_cast<std::uint8_t>(word >> (8 * b));
    }
  }
  return page;
}

}  // namespace ecmem::workload
