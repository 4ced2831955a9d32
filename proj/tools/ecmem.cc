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

// Command-line driver for the analysis scenarios.
//
//   ecmem loss     --config cfg.json [--seed N] [--trials N] [--out DIR]
//   ecmem balance  --config cfg.json [--seed N] [--out DIR]
//   ecmem datapath --config cfg.json [--seed N] [--out DIR] [--logs]
//   ecmem validate-config --config cfg.json

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "ecmem/error.h"
#include "ecmem/experiment.h"

namespace {

namespace ex = ecmem::experiment;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> trials;
  std::string out;
  bool logs = false;
};

ex::ExperimentConfig load(const Options& opt) {
  std::ifstream in(opt.config);
  if (!in) {
    throw ecmem::Error(ecmem::ErrorCode::kIoError,
                       "cannot open config '" + opt.config + "'");
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ecmem::Error(ecmem::ErrorCode::kConfigInvalid,
                       std::string("config is not valid JSON: ") + e.what());
  }
  // Overrides become part of the document so the hash reflects them.
  if (opt.seed) doc["seed"] = *opt.seed;
  if (opt.trials) doc["loss"]["trials"] = *opt.trials;
  const std::string base =
      std::filesystem::path(opt.config).parent_path().string();
  return ex::parse_config(std::move(doc), base);
}

int run_scenario(const Options& opt, ex::Scenario expected) {
  const ex::ExperimentConfig config = load(opt);
  if (config.scenario != expected) {
    throw ecmem::Error(ecmem::ErrorCode::kConfigInvalid,
                       "config describes scenario '" +
                           std::string(ex::scenario_name(config.scenario)) +
                           "', not '" +
                           std::string(ex::scenario_name(expected)) + "'");
  }
  const std::string out = opt.out.empty() ? config.output_dir : opt.out;
  const ex::ExperimentReport report =
      ex::run(config, opt.logs ? out : std::string());
  std::cout << ex::emit_report(report, out) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Erasure-coded remote memory: analysis and simulation"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&opt](CLI::App* sub) {
    sub->add_option("--config", opt.config, "Experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Override the config seed");
    sub->add_option("--out", opt.out, "Output directory");
  };
  CLI::App* loss = app.add_subcommand("loss", "Data-loss probability curves");
  add_common(loss);
  loss->add_option("--trials", opt.trials, "Monte Carlo trials per point")
      ->check(CLI::PositiveNumber);
  CLI::App* balance = app.add_subcommand("balance", "Load-balance comparison");
  add_common(balance);
  CLI::App* datapath =
      app.add_subcommand("datapath", "Replay a workload on the simulator");
  add_common(datapath);
  datapath->add_flag("--logs", opt.logs,
                     "Also write event, completion and monitor logs");
  CLI::App* check =
      app.add_subcommand("validate-config", "Check a config and exit");
  check->add_option("--config", opt.config, "Experiment config (JSON)")
      ->required()
      ->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*loss) return run_scenario(opt, ex::Scenario::kLossCurves);
    if (*balance) return run_scenario(opt, ex::Scenario::kLoadBalance);
    if (*datapath) return run_scenario(opt, ex::Scenario::kDatapath);
    const ex::ExperimentConfig config = load(opt);
    std::cout << "ok " << ex::scenario_name(config.scenario) << ' '
              << config.points.size() << " point(s) hash " << config.hash
              << '\n';
    return 0;
  } catch (const ecmem::Error& e) {
    std::cerr << "error [" << ecmem::error_code_name(e.code())
              << "]: " << e.what() << '\n';
    return 2;
  }
}
