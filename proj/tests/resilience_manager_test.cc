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

#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "ecmem/error.h"
#include "test_support.h"

namespace ecmem::rm {
namespace {

using sim::from_us;
using testing::Deployment;
using testing::random_page;

sim::LatencyModel fixed_latency() {
  sim::LatencyModel m;
  m.sigma = 0.0;
  return m;
}

ManagerConfig config(int k = 8, int r = 2, int delta = 1) {
  ManagerConfig c;
  c.params = CodecParams{k, r, delta};
  return c;
}

TEST(ResilienceManager, ValidatesConfig) {
  ManagerConfig c = config();
  c.error_correction_limit = 0.5;
  c.slab_regeneration_limit = 0.2;
  EXPECT_THROW(validate(c), Error);
  c = config();
  c.health_window = 0;
  EXPECT_THROW(validate(c), Error);
}

TEST(ResilienceManager, MapsRangeOntoDistinctMachinesOfOneGroup) {
  auto d = Deployment::make(24, config());
  const AddressRange& r = d.manager->map_range(3);
  ASSERT_EQ(r.refs.size(), 10u);
  std::set<MachineId> machines;
  for (const auto& ref : r.refs) machines.insert(ref.machine);
  EXPECT_EQ(machines.size(), 10u);
  const auto& group = d.manager->plan().groups[r.group].members;
  for (MachineId m : machines) {
    EXPECT_NE(std::find(group.begin(), group.end(), m), group.end());
  }
  EXPECT_EQ(r.page_capacity, 128);  // 64 KiB slab / 512-byte splits
  EXPECT_EQ(&d.manager->map_range(3), &r);
}

TEST(ResilienceManager, WriteThenReadReturnsPage) {
  auto d = Deployment::make(24, config());
  std::mt19937_64 rng(1);
  d.manager->map_range(0);
  const Bytes page = random_page(rng);
  const auto w = d.manager->write_sync({0, 5}, page);
  ASSERT_TRUE(w.ok());
  EXPECT_EQ(w.fan_out, 10);
  EXPECT_LE(w.data_acked_at, w.fully_durable_at);
  const auto r = d.manager->read_sync({0, 5});
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.page, page);
  EXPECT_EQ(r.fan_out, 9);
}

TEST(ResilienceManager, UnwrittenPageReadsAsZeros) {
  auto d = Deployment::make(24, config());
  d.manager->map_range(0);
  const auto r = d.manager->read_sync({0, 1});
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.page, Bytes(4096, 0));
  EXPECT_EQ(r.fan_out, 0);
}

TEST(ResilienceManager, UnknownAddressesAreRejected) {
  auto d = Deployment::make(24, config());
  EXPECT_THROW(d.manager->read_sync({7, 0}), Error);
  d.manager->map_range(7);
  EXPECT_THROW(d.manager->read_sync({7, 128}), Error);
  EXPECT_THROW(d.manager->write_sync({7, 0}, Bytes(10)), Error);
}

TEST(ResilienceManager, AsyncParityAcknowledgesBeforeEncoding) {
  std::mt19937_64 rng(2);
  const Bytes page = random_page(rng);
  auto timing = [&](bool async) {
    ManagerConfig c = config();
    c.async_parity = async;
    auto d = Deployment::make(24, c, 1, fixed_latency());
    d.manager->map_range(0);
    return d.manager->write_sync({0, 0}, page);
  };
  const auto a = timing(true);
  const auto s = timing(false);
  // Eight data posts then one split latency.
  EXPECT_EQ(a.data_acked_at, from_us(0.8 + 1.5));
  EXPECT_EQ(a.coding_time, 0);
  // Parity is encoded after the acknowledgement and lands later.
  EXPECT_EQ(a.fully_durable_at, from_us(0.8 + 1.5 + 0.7 + 0.2 + 1.5));
  EXPECT_EQ(s.data_acked_at, from_us(0.7 + 1.0 + 1.5));
  EXPECT_EQ(s.coding_time, from_us(0.7));
  EXPECT_EQ(s.fully_durable_at, s.data_acked_at);
  EXPECT_LE(a.data_acked_at, s.data_acked_at - from_us(0.7));
}

TEST(ResilienceManager, LateBindingIgnoresTheStraggler) {
  std::mt19937_64 rng(3);
  const Bytes page = random_page(rng);
  sim::LatencyModel m = fixed_latency();
  m.straggler_probability = 1.0;  // exactly one split per operation
  for (int delta : {0, 1}) {
    ManagerConfig c = config(8, 2, delta);
    auto d = Deployment::make(24, c, 4, m);
    d.manager->map_range(0);
    ASSERT_TRUE(d.manager->write_sync({0, 0}, page).ok());
    const auto r = d.manager->read_sync({0, 0});
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.page, page);
    const double latency = sim::to_us(r.completed_at - r.started_at);
    if (delta == 0) {
      EXPECT_GE(latency, 15.0);
    } else {
      EXPECT_LT(latency, 5.0);
    }
  }
}

TEST(ResilienceManager, PenaltiesApplyWhenOptimizationsAreOff) {
  std::mt19937_64 rng(5);
  const Bytes page = random_page(rng);
  auto latency = [&](bool rtc, bool in_place) {
    ManagerConfig c = config();
    c.run_to_completion = rtc;
    c.in_place_coding = in_place;
    auto d = Deployment::make(24, c, 6, fixed_latency());
    d.manager->map_range(0);
    const auto w = d.manager->write_sync({0, 0}, page);
    const auto r = d.manager->read_sync({0, 0});
    return std::pair{w.data_acked_at - w.started_at,
                     r.completed_at - r.started_at};
  };
  const auto base = latency(true, true);
  const auto no_rtc = latency(false, true);
  const auto no_copy = latency(true, false);
  EXPECT_EQ(no_rtc.first - base.first, from_us(4.3));
  EXPECT_EQ(no_rtc.second - base.second, from_us(4.3));
  EXPECT_EQ(no_copy.first - base.first, from_us(1.6));
}

TEST(ResilienceManager, OperationsOnOnePageAreSerialized) {
  auto d = Deployment::make(24, config());
  std::mt19937_64 rng(7);
  d.manager->map_range(0);
  const Bytes first = random_page(rng);
  const Bytes second = random_page(rng);
  std::vector<Bytes> seen;
  d.manager->remote_write({0, 0}, first, {});
  d.manager->remote_read({0, 0}, [&](const ReadResult& r) { seen.push_back(r.page); });
  d.manager->remote_write({0, 0}, second, {});
  d.manager->remote_read({0, 0}, [&](const ReadResult& r) { seen.push_back(r.page); });
  d.cluster->run();
  ASSERT_EQ(seen.size(), 2u);
  EXPECT_EQ(seen[0], first);
  EXPECT_EQ(seen[1], second);
}

TEST(ResilienceManager, ReadSurvivesFailureMidFlight) {
  auto d = Deployment::make(24, config(), 8, fixed_latency(), 2, false);
  std::mt19937_64 rng(8);
  d.manager->map_range(0);
  const Bytes page = random_page(rng);
  ASSERT_TRUE(d.manager->write_sync({0, 0}, page).ok());
  const auto& refs = d.manager->range(0).refs;
  const MachineId a = refs[0].machine;
  const MachineId b = refs[9].machine;
  ReadResult result;
  d.manager->remote_read({0, 0}, [&](const ReadResult& r) { result = r; });
  d.cluster->submit(d.cluster->now() + from_us(0.5), "fail", "two", [&] {
    d.cluster->fail_machine(a);
    d.cluster->fail_machine(b);
    return std::string();
  });
  d.cluster->run();
  ASSERT_TRUE(result.ok());
  EXPECT_EQ(result.page, page);
  EXPECT_EQ(d.manager->range(0).healthy_count(), 8);
}

TEST(ResilienceManager, TooManyFailuresMakeOnlyThatRangeUnrecoverable) {
  auto d = Deployment::make(24, config(), 9, {}, 2, false);
  std::mt19937_64 rng(9);
  for (int r = 0; r < 6; ++r) {
    d.manager->map_range(r);
    ASSERT_TRUE(d.manager->write_sync({r, 0}, random_page(rng)).ok());
  }
  const auto refs = d.manager->range(2).refs;
  for (int i = 0; i < 3; ++i) d.cluster->fail_machine(refs[i].machine);
  EXPECT_TRUE(d.manager->range(2).unrecoverable);
  const auto bad = d.manager->read_sync({2, 0});
  EXPECT_EQ(bad.error, ErrorCode::kUnrecoverableRead);
  EXPECT_EQ(d.manager->unrecoverable_reads(), 1u);
  for (int r = 0; r < 6; ++r) {
    std::set<MachineId> failed{refs[0].machine, refs[1].machine, refs[2].machine};
    int lost = 0;
    for (const auto& ref : d.manager->range(r).refs) lost += failed.contains(ref.machine);
    EXPECT_EQ(d.manager->range(r).unrecoverable, lost > 2) << "range " << r;
  }
}

TEST(ResilienceManager, DegradedWriteBecomesDurableAfterRegeneration) {
  auto d = Deployment::make(24, config(), 10);
  std::mt19937_64 rng(10);
  d.manager->map_range(0);
  const Bytes old_page = random_page(rng);
  ASSERT_TRUE(d.manager->write_sync({0, 0}, old_page).ok());
  const MachineId victim = d.manager->range(0).refs[3].machine;
  d.cluster->fail_machine(victim);
  const Bytes page = random_page(rng);
  const auto w = d.manager->write_sync({0, 1}, page);
  ASSERT_TRUE(w.ok());
  EXPECT_GE(w.fully_durable_at, w.data_acked_at);
  d.cluster->run();
  const AddressRange& r = d.manager->range(0);
  EXPECT_EQ(r.healthy_count(), 10);
  EXPECT_NE(r.refs[3].machine, victim);
  const Codec& codec = d.manager->codec();
  const auto expect0 = encode_page(codec, old_page);
  const auto expect1 = encode_page(codec, page);
  const sim::Slab* slab = d.cluster->find_slab(r.refs[3].slab);
  ASSERT_NE(slab, nullptr);
  EXPECT_EQ(slab->pages.at(0), expect0[3].bytes);
  EXPECT_EQ(slab->pages.at(1), expect1[3].bytes);
  EXPECT_EQ(d.manager->read_sync({0, 1}).page, page);
}

TEST(ResilienceManager, EvictionTriggersRegeneration) {
  auto d = Deployment::make(24, config(), 11);
  std::mt19937_64 rng(11);
  d.manager->map_range(0);
  const Bytes page = random_page(rng);
  ASSERT_TRUE(d.manager->write_sync({0, 2}, page).ok());
  const SlabId evicted = d.manager->range(0).refs[9].slab;
  d.cluster->evict_slab(evicted);
  EXPECT_EQ(d.manager->range(0).health[9], SlabHealth::kFailed);
  d.cluster->run();
  EXPECT_EQ(d.manager->range(0).health[9], SlabHealth::kHealthy);
  EXPECT_NE(d.manager->range(0).refs[9].slab, evicted);
  EXPECT_EQ(d.engine->completed(), 1u);
}

TEST(ResilienceManager, VerifiedReadCorrectsCorruption) {
  ManagerConfig c = config(8, 3, 1);
  c.verify_reads = true;
  auto d = Deployment::make(24, c, 12);
  std::mt19937_64 rng(12);
  d.manager->map_range(0);
  const Bytes page = random_page(rng);
  ASSERT_TRUE(d.manager->write_sync({0, 0}, page).ok());
  for (int role : {2, 9}) {
    d.cluster->corrupt(d.manager->range(0).refs[role].slab, 0, 17, Bytes{0x5a});
    const auto r = d.manager->read_sync({0, 0});
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.page, page);
    if (r.corrected) {
      EXPECT_EQ(r.corrupted, std::vector<int>{role});
    }
    ASSERT_TRUE(d.manager->write_sync({0, 0}, page).ok());
  }
}

TEST(ResilienceManager, VerifiedReadCorrectsWithOneSlabMissing) {
  ManagerConfig c = config(8, 3, 1);
  c.verify_reads = true;
  auto d = Deployment::make(24, c, 16, {}, 2, false);
  std::mt19937_64 rng(16);
  d.manager->map_range(0);
  const Bytes page = random_page(rng);
  ASSERT_TRUE(d.manager->write_sync({0, 0}, page).ok());
  d.cluster->fail_machine(d.manager->range(0).refs[6].machine);
  d.cluster->corrupt(d.manager->range(0).refs[4].slab, 0, 100, Bytes{0x10});
  for (int i = 0; i < 30; ++i) {
    const auto r = d.manager->read_sync({0, 0});
    ASSERT_TRUE(r.ok()) << "read " << i;
    EXPECT_EQ(r.page, page) << "read " << i;
  }
}

TEST(ResilienceManager, ReadWithCorrectionFansOutWide) {
  ManagerConfig c = config(8, 3, 1);
  auto d = Deployment::make(24, c, 13);
  std::mt19937_64 rng(13);
  d.manager->map_range(0);
  const Bytes page = random_page(rng);
  ASSERT_TRUE(d.manager->write_sync({0, 0}, page).ok());
  d.cluster->corrupt(d.manager->range(0).refs[0].slab, 0, 0, Bytes{1});
  ReadResult out;
  d.manager->read_with_correction({0, 0}, [&](const ReadResult& r) { out = r; });
  d.cluster->run();
  ASSERT_TRUE(out.ok());
  EXPECT_EQ(out.fan_out, 11);
  EXPECT_EQ(out.page, page);
  EXPECT_TRUE(out.corrected);
  EXPECT_EQ(out.corrupted, std::vector<int>{0});
}

TEST(ResilienceManager, RepeatedCorruptionMarksMachineSuspect) {
  ManagerConfig c = config(8, 3, 1);
  c.verify_reads = true;
  auto d = Deployment::make(24, c, 14, fixed_latency(), 2, false);
  std::mt19937_64 rng(14);
  d.manager->map_range(0);
  const Bytes page = random_page(rng);
  const MachineId bad = d.manager->range(0).refs[1].machine;
  EXPECT_EQ(d.manager->read_fan_out(0), 9);
  for (int i = 0; i < 40 && !d.manager->is_suspect(bad); ++i) {
    ASSERT_TRUE(d.manager->write_sync({0, 0}, page).ok());
    d.cluster->corrupt(d.manager->range(0).refs[1].slab, 0, 3, Bytes{0xff});
    const auto r = d.manager->read_sync({0, 0});
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r.page, page);
  }
  EXPECT_TRUE(d.manager->is_suspect(bad));
  EXPECT_GT(d.manager->health(bad).error_rate, c.error_correction_limit);
  EXPECT_EQ(d.manager->read_fan_out(0), 11);
}

TEST(ResilienceManager, CompletionLogHasOneRowPerOperation) {
  auto d = Deployment::make(24, config());
  std::mt19937_64 rng(15);
  d.manager->map_range(0);
  d.manager->write_sync({0, 0}, random_page(rng));
  d.manager->read_sync({0, 0});
  std::ostringstream out;
  d.manager->write_completion_log(out);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "submit_ns,complete_ns,op,fan_out,outcome");
  std::getline(in, line);
  EXPECT_NE(line.find(",W,10,ok"), std::string::npos) << line;
  std::getline(in, line);
  EXPECT_NE(line.find(",R,9,ok"), std::string::npos) << line;
}

TEST(ResilienceManager, CapacityExhaustedWhenGroupIsFull) {
  ManagerConfig c = config(2, 1, 0);
  sim::ClusterConfig cc;
  cc.machines = 3;
  cc.machine_bytes = 2 * cc.slab_bytes;
  sim::Cluster cluster(cc, 1);
  auto plan = build_codingsets(ClusterShape{3, 16, 0.0}, c.params, 0, 1);
  ResilienceManager m(cluster, plan, c, 1);
  m.map_range(0);
  m.map_range(1);
  try {
    m.map_range(2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCapacityExhausted);
  }
}

}  // namespace
}  // namespace ecmem::rm
