#include <gtest/gtest.h>

#include <random>

#include "pnmkv/model_zoo.hpp"
#include "pnmkv/topology.hpp"

using namespace pnmkv;

TEST(Devices, Builtins) {
  const auto d = builtin_devices();
  const auto& gpu = d.at("A100-80GB");
  EXPECT_EQ(gpu.kind, DeviceKind::GPU);
  EXPECT_EQ(gpu.mem_capacity, 80ULL << 30);
  EXPECT_DOUBLE_EQ(gpu.mem_bandwidth, 2.0e12);
  EXPECT_DOUBLE_EQ(gpu.max_power, 400.0);
  EXPECT_DOUBLE_EQ(gpu.op_cost, 0.072);
  EXPECT_DOUBLE_EQ(gpu.hw_cost, 0.761);
  EXPECT_NEAR(gpu.hourly_cost(), 0.833, 1e-12);

  const auto& pnm = d.at("CXL-PNM");
  EXPECT_EQ(pnm.kind, DeviceKind::PNM);
  EXPECT_EQ(pnm.mem_capacity, 512ULL << 30);
  EXPECT_DOUBLE_EQ(pnm.mem_bandwidth, 1.1e12);
  EXPECT_DOUBLE_EQ(pnm.peak_compute, 8e12);
  EXPECT_DOUBLE_EQ(pnm.max_power, 150.0);
  EXPECT_DOUBLE_EQ(pnm.op_cost, 0.027);
  EXPECT_DOUBLE_EQ(pnm.hw_cost, 0.266);
  EXPECT_NEAR(pnm.hourly_cost(), 0.293, 1e-12);
  EXPECT_LE(kPnmControllerPower + kPnmDramPower, pnm.max_power);
  for (const auto& [_, s] : d) EXPECT_NO_THROW(s.validate());
}

TEST(Devices, ValidateRejects) {
  auto d = builtin_devices().at("CXL-PNM");
  d.mem_bandwidth = 0;
  EXPECT_THROW(d.validate(), std::invalid_argument);
  d = builtin_devices().at("CXL-PNM");
  d.hw_cost = -1;
  EXPECT_THROW(d.validate(), std::invalid_argument);
}

TEST(Cluster, Validate) {
  const auto d = builtin_devices();
  ClusterConfig c;
  c.gpus = {d.at("A100-80GB")};
  c.mode = Mode::Baseline;
  EXPECT_NO_THROW(c.validate());
  c.pnms = {d.at("CXL-PNM")};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.mode = Mode::PNM_KV;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.mapping, Mapping::TP_DP);
  c.gpus.clear();
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Names, RoundTrip) {
  for (auto m : {Mode::Baseline, Mode::PNM_KV, Mode::PnG_KV}) EXPECT_EQ(parse_mode(to_string(m)), m);
  for (auto m : {Mapping::TP_TP, Mapping::TP_DP}) EXPECT_EQ(parse_mapping(to_string(m)), m);
  EXPECT_THROW(parse_mode("gpu"), std::invalid_argument);
  EXPECT_THROW(parse_mapping("dp"), std::invalid_argument);
}

TEST(SteadyRatio, Values) {
  EXPECT_DOUBLE_EQ(steady_ratio(1, 8), 1.0 / 9.0);
  EXPECT_DOUBLE_EQ(steady_ratio(0, 3), 0.0);
  EXPECT_DOUBLE_EQ(steady_ratio(3, 0), 1.0);
  EXPECT_THROW(steady_ratio(0, 0), std::invalid_argument);
  for (std::uint64_t g = 1; g <= 4; ++g)
    for (std::uint64_t n = 0; n < 16; ++n) {
      EXPECT_GE(steady_ratio(g, n), 0.0);
      EXPECT_LE(steady_ratio(g, n), 1.0);
      EXPECT_GT(steady_ratio(g, n), steady_ratio(g, n + 1));
    }
}

TEST(Comm, Profiles) {
  auto tt = comm_profile(Mapping::TP_TP, 4, 1000);
  EXPECT_EQ(tt.topk_sorts, 4U);
  EXPECT_EQ(tt.reduction_msgs, 3U);
  auto td = comm_profile(Mapping::TP_DP, 4, 1000);
  EXPECT_EQ(td.reduction_msgs, 0U);
  EXPECT_EQ(td.scatter_gather_bytes, tt.scatter_gather_bytes);
  EXPECT_THROW(comm_profile(Mapping::TP_DP, 0, 1), std::invalid_argument);
}

TEST(Activation, Bytes) {
  const ModelSpec& s = *find_builtin_spec("Llama3.1-8B");
  // 32 layers * (4096 + 2*1024 + 4096) elements * 2 bytes
  EXPECT_EQ(activation_bytes(s, 1), 655360U);
  EXPECT_EQ(activation_bytes(s, 0), 0U);
  EXPECT_EQ(activation_bytes(s, 14), 2 * activation_bytes(s, 7));
  EXPECT_EQ(activation_bytes(s, 1, ActivationFields::QOnly), 32U * 8192 * 2);
}

TEST(DpAssign, RoundRobin) {
  auto a = dp_assign({0, 1, 2, 3, 4, 5}, 2);
  EXPECT_EQ(a[0], (std::vector<std::uint64_t>{0, 2, 4}));
  EXPECT_EQ(a[1], (std::vector<std::uint64_t>{1, 3, 5}));
  auto one = dp_assign({7, 8, 9}, 1);
  EXPECT_EQ(one[0], (std::vector<std::uint64_t>{7, 8, 9}));
  auto none = dp_assign({}, 3);
  ASSERT_EQ(none.size(), 3U);
  for (const auto& v : none) EXPECT_TRUE(v.empty());
  EXPECT_THROW(dp_assign({1}, 0), std::invalid_argument);
}
