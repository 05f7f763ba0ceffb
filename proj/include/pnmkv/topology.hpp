#pragma once

// Cluster description and GPU<->PNM communication accounting.

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pnmkv/model_zoo.hpp"

namespace pnmkv {

enum class DeviceKind { GPU, PNM };
enum class Mapping { TP_TP, TP_DP };
enum class Mode { Baseline, PNM_KV, PnG_KV };

inline constexpr double GiB = 1024.0 * 1024.0 * 1024.0;

struct DeviceSpec {
  std::string name;
  DeviceKind kind = DeviceKind::GPU;
  Bytes mem_capacity = 0;
  double mem_bandwidth = 0;   // B/s
  double peak_compute = 0;    // FLOP/s
  double link_bandwidth = 0;  // B/s, device <-> switch
  double max_power = 0;       // W
  double op_cost = 0;         // $/h
  double hw_cost = 0;         // $/h
  double sorter_rate = 0;     // Top-K comparisons/s

  void validate() const {
    if (mem_capacity == 0 || mem_bandwidth <= 0 || peak_compute <= 0 || link_bandwidth <= 0 ||
        max_power <= 0 || sorter_rate <= 0)
      throw std::invalid_argument("device '" + name + "': rates and capacities must be positive");
    if (op_cost < 0 || hw_cost < 0)
      throw std::invalid_argument("device '" + name + "': costs must be non-negative");
  }
  [[nodiscard]] double hourly_cost() const { return op_cost + hw_cost; }
};

struct ClusterConfig {
  std::vector<DeviceSpec> gpus;
  std::vector<DeviceSpec> pnms;
  double host_link_bandwidth = 128e9;  // PCIe 6.0 x16
  Mapping mapping = Mapping::TP_DP;
  Mode mode = Mode::Baseline;

  void validate() const {
    if (gpus.empty()) throw std::invalid_argument("cluster: at least one GPU is required");
    if (pnms.empty() != (mode == Mode::Baseline))
      throw std::invalid_argument("cluster: PNM list must be empty iff mode is Baseline");
    if (host_link_bandwidth <= 0) throw std::invalid_argument("cluster: host link bandwidth must be positive");
    for (const auto& d : gpus) d.validate();
    for (const auto& d : pnms) d.validate();
  }
};

struct CommProfile {
  std::uint64_t topk_sorts = 0;
  std::uint64_t reduction_msgs = 0;
  Bytes scatter_gather_bytes = 0;
};

inline std::map<std::string, DeviceSpec> builtin_devices() {
  std::map<std::string, DeviceSpec> out;
  // A100 FP16 dense peak; only bandwidth, power and cost come from the
  // published platform numbers.
  out["A100-80GB"] = DeviceSpec{"A100-80GB", DeviceKind::GPU, Bytes{80} << 30, 2.0e12, 312e12,
                                64e9, 400.0, 0.072, 0.761, 2.0e13};
  // 4,096 multipliers at 1 GHz; 8,160 comparators at 1 GHz drive the sorter.
  out["CXL-PNM"] = DeviceSpec{"CXL-PNM", DeviceKind::PNM, Bytes{512} << 30, 1.1e12, 8e12,
                              64e9, 150.0, 0.027, 0.266, 8.16e12};
  return out;
}

// Controller + accelerator and LPDDR5X contributions to the PNM platform power.
inline constexpr double kPnmControllerPower = 90.0;
inline constexpr double kPnmDramPower = 40.0;
// PNM devices modeled behind one host link (one rack-scale node).
inline constexpr std::uint64_t kPnmNodeDevices = 16;

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::Baseline: return "baseline";
    case Mode::PNM_KV: return "pnm-kv";
    case Mode::PnG_KV: return "png-kv";
  }
  return "?";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "baseline") return Mode::Baseline;
  if (s == "pnm-kv") return Mode::PNM_KV;
  if (s == "png-kv") return Mode::PnG_KV;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "'");
}

inline const char* to_string(Mapping m) { return m == Mapping::TP_TP ? "tp-tp" : "tp-dp"; }

inline Mapping parse_mapping(std::string_view s) {
  if (s == "tp-tp") return Mapping::TP_TP;
  if (s == "tp-dp") return Mapping::TP_DP;
  throw std::invalid_argument("unknown mapping '" + std::string(s) + "'");
}

inline double steady_ratio(std::uint64_t n_gpu, std::uint64_t n_pnm) {
  if (n_gpu + n_pnm == 0) throw std::invalid_argument("steady_ratio: no devices");
  return static_cast<double>(n_gpu) / static_cast<double>(n_gpu + n_pnm);
}

inline CommProfile comm_profile(Mapping mapping, std::uint64_t n_pnm, Bytes activation) {
  if (n_pnm == 0) throw std::invalid_argument("comm_profile: n_pnm must be >= 1");
  CommProfile p;
  p.topk_sorts = n_pnm;
  p.reduction_msgs = mapping == Mapping::TP_TP ? n_pnm - 1 : 0;
  p.scatter_gather_bytes = activation;
  return p;
}

enum class ActivationFields {
  QKVOut,  // ship Q, K, V of the new token; receive the attention output
  QOnly,   // ship Q only (K/V recomputed near memory); receive the output
};

// Per decode step. Depends only on batch and model width, never on context.
inline Bytes activation_bytes(const ModelSpec& spec, std::uint64_t batch,
                              ActivationFields fields = ActivationFields::QKVOut) {
  const std::uint64_t kv_width = spec.kv_heads() * spec.d_h;
  const std::uint64_t outbound = fields == ActivationFields::QKVOut ? spec.d_in + 2 * kv_width : spec.d_in;
  return batch * spec.n_l * (outbound + spec.d_in) * spec.bytes_per_elem;
}

inline std::vector<std::vector<std::uint64_t>> dp_assign(const std::vector<std::uint64_t>& batch_ids,
                                                         std::uint64_t n_pnm) {
  if (n_pnm == 0) throw std::invalid_argument("dp_assign: n_pnm must be >= 1");
  std::vector<std::vector<std::uint64_t>> out(n_pnm);
  for (std::size_t i = 0; i < batch_ids.size(); ++i) out[i % n_pnm].push_back(batch_ids[i]);
  return out;
}

}  // namespace pnmkv
