#pragma once

// Roofline model of one decode step for Baseline (GPU + plain CXL memory),
// PNM-KV (all attention near memory) and PnG-KV (steady tokens on GPU,
// the rest near memory, partials merged before the FC layers).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "pnmkv/cache_manager.hpp"
#include "pnmkv/model_zoo.hpp"
#include "pnmkv/recall_trace.hpp"
#include "pnmkv/topology.hpp"

namespace pnmkv {

enum class RecallSource { Trace, Analytic };

struct PerfParams {
  std::uint64_t page_size = 32;
  std::uint64_t budget_pages = 0;   // 0: default_budget_pages(context pages)
  double steady_ratio = -1.0;       // < 0: n_gpu / (n_gpu + n_pnm)
  Bytes model_weight_bytes = 0;     // 0: FC parameter bytes
  double b_sat = 96.0;              // batch at which GPU FC compute saturates
  double idle_fraction = 0.0;       // idle power as a fraction of max power
  double step_overhead_s = 0.0;
  std::uint64_t max_batch_cap = 0;  // 0: unlimited
  ActivationFields activation = ActivationFields::QKVOut;

  RecallSource recall_source = RecallSource::Trace;
  double churn_prob = 0.05;         // analytic mode: per-page replacement probability

  // Trace mode: desk-scale stand-in for one (layer, KV head, sample).
  std::size_t trace_d_h = 16;
  std::uint64_t trace_steps = 32;
  double locality = 0.95;
  double drift = 1.0;
  double token_spread = 0.5;
};

// Mean recalled pages per decode step for one (layer, KV head, sample).
struct RecallStats {
  double arkvale_pages = 0.0;
  double steady_pages = 0.0;
};

struct LatencyBreakdown {
  double fc_s = 0, attention_s = 0, recall_s = 0, topk_s = 0, comm_s = 0, total_s = 0;
  // Per device class; attention_s is the critical path across them.
  double gpu_attention_s = 0, pnm_attention_s = 0;
};

enum class RunStatus { Ok, Infeasible };

struct RunReport {
  Mode mode = Mode::Baseline;
  std::string model;
  std::uint64_t n_gpu = 0, n_pnm = 0;
  std::uint64_t batch = 0;
  Tokens context = 0;
  double throughput = 0, energy_per_token = 0, tokens_per_dollar = 0;
  LatencyBreakdown breakdown;
  BudgetConfig budgets;
  double recall_pages_per_step = 0;  // per (layer, KV head, sample)
  Bytes recall_bytes_per_sample = 0;
  RunStatus status = RunStatus::Ok;
  std::string diagnostic;
};

class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename F>
double sum_over(const std::vector<DeviceSpec>& devs, F f) {
  double s = 0;
  for (const auto& d : devs) s += f(d);
  return s;
}

inline double to_gib(Bytes b) { return static_cast<double>(b) / GiB; }

inline std::string gib_str(Bytes b) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f GiB", to_gib(b));
  return buf;
}

}  // namespace detail

inline Bytes model_weight_bytes(const ModelSpec& spec, const PerfParams& p) {
  return p.model_weight_bytes ? p.model_weight_bytes : fc_param_bytes(spec);
}

// Weights are TP-sharded, so bandwidth and compute aggregate across GPUs.
inline double fc_time(const ModelSpec& spec, std::uint64_t batch, const std::vector<DeviceSpec>& gpus,
                      const PerfParams& p = {}) {
  if (gpus.empty()) throw std::invalid_argument("fc_time: no GPUs");
  if (batch == 0) throw std::invalid_argument("fc_time: batch must be >= 1");
  const double bw = detail::sum_over(gpus, [](const auto& d) { return d.mem_bandwidth; });
  const double util = std::min(1.0, static_cast<double>(batch) / p.b_sat);
  const double compute = detail::sum_over(gpus, [](const auto& d) { return d.peak_compute; }) * util;
  const double memory_s = static_cast<double>(model_weight_bytes(spec, p)) / bw;
  const double compute_s =
      static_cast<double>(batch) * static_cast<double>(fc_flops_per_token(spec)) / compute;
  return std::max(memory_s, compute_s);
}

// Memory-bound GEMV over the `share` of budget tokens held by this class.
inline double attention_time(const ModelSpec& spec, std::uint64_t batch, Tokens budget_tokens,
                             const std::vector<DeviceSpec>& devices, double share) {
  if (share < 0.0 || share > 1.0) throw std::invalid_argument("attention_time: share must lie in [0,1]");
  if (share == 0.0) return 0.0;
  if (devices.empty()) throw std::invalid_argument("attention_time: no devices for a nonzero share");
  const double bw = detail::sum_over(devices, [](const auto& d) { return d.mem_bandwidth; });
  const double bytes = static_cast<double>(batch) * share * static_cast<double>(budget_tokens) *
                       static_cast<double>(kv_bytes_per_token(spec));
  return bytes / bw;
}

inline double recall_time(double recall_bytes_per_step, double link_bandwidth) {
  if (!(link_bandwidth > 0)) throw std::invalid_argument("recall_time: bandwidth must be positive");
  return recall_bytes_per_step / link_bandwidth;
}

// Merge-sort cost: n log2 n comparisons per sorted list.
inline double topk_time(std::uint64_t context_pages, std::uint64_t batch, double sorter_rate) {
  if (!(sorter_rate > 0)) throw std::invalid_argument("topk_time: sorter_rate must be positive");
  if (context_pages == 0) return 0.0;
  const double n = static_cast<double>(context_pages);
  return static_cast<double>(batch) * n * std::log2(std::max(n, 2.0)) / sorter_rate;
}

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

inline LatencyBreakdown step_latency(const ClusterConfig& cluster, const ModelSpec& spec,
                                     std::uint64_t batch, Tokens context, const BudgetConfig& budgets,
                                     const RecallStats& recall, const PerfParams& p = {}) {
  if (batch == 0) throw InfeasibleError("step_latency: batch must be >= 1");
  const auto& gpus = cluster.gpus;
  const auto& pnms = cluster.pnms;
  const std::uint64_t pages = ceil_div(context, p.page_size);
  // A page recall moves that token range for every layer and KV head.
  const double page_bytes = static_cast<double>(p.page_size * kv_bytes_per_token(spec));
  const double gpu_link = detail::sum_over(gpus, [](const auto& d) { return d.link_bandwidth; });
  const std::uint64_t lists_per_sample = spec.n_l * spec.kv_heads();
  const double samples = static_cast<double>(batch);

  LatencyBreakdown b;
  b.fc_s = fc_time(spec, batch, gpus, p);

  if (cluster.mode == Mode::Baseline) {
    b.gpu_attention_s = attention_time(spec, batch, budgets.t_budget, gpus, 1.0);
    b.attention_s = b.gpu_attention_s;
    b.recall_s = recall_time(samples * recall.arkvale_pages * page_bytes, gpu_link);
    // Heads are TP-split, so the sorted lists spread over the GPUs.
    const double rate = detail::sum_over(gpus, [](const auto& d) { return d.sorter_rate; });
    b.topk_s = topk_time(pages, batch * lists_per_sample, rate);
    b.comm_s = 0.0;
    b.total_s = b.fc_s + b.attention_s + b.recall_s + b.topk_s + b.comm_s + p.step_overhead_s;
    return b;
  }

  const std::uint64_t n_pnm = pnms.size();
  const double one_rate = pnms.front().sorter_rate;
  if (cluster.mapping == Mapping::TP_DP) {
    b.topk_s = topk_time(pages, ceil_div(batch, n_pnm) * lists_per_sample, one_rate);
  } else {
    // Scores are reduced across head shards, then every device sorts the full list.
    b.topk_s = topk_time(pages, batch * lists_per_sample, one_rate);
  }
  const auto prof = comm_profile(cluster.mapping, n_pnm, activation_bytes(spec, batch, p.activation));
  b.comm_s = static_cast<double>(prof.scatter_gather_bytes) / cluster.host_link_bandwidth;
  if (prof.reduction_msgs > 0) {
    // Host-mediated store-and-forward: two link traversals per message.
    const double msg = static_cast<double>(batch * spec.n_l * pages * spec.bytes_per_elem);
    b.comm_s += static_cast<double>(prof.reduction_msgs) * 2.0 * msg / pnms.front().link_bandwidth;
  }

  if (cluster.mode == Mode::PNM_KV) {
    b.pnm_attention_s = attention_time(spec, batch, budgets.t_budget, pnms, 1.0);
    b.attention_s = b.pnm_attention_s;
    b.recall_s = 0.0;
    b.total_s = b.fc_s + b.attention_s + b.topk_s + b.comm_s + p.step_overhead_s;
    return b;
  }

  const double gpu_share = budgets.t_budget == 0
                               ? 0.0
                               : static_cast<double>(budgets.t_steady) / static_cast<double>(budgets.t_budget);
  b.gpu_attention_s = attention_time(spec, batch, budgets.t_budget, gpus, gpu_share);
  b.pnm_attention_s = attention_time(spec, batch, budgets.t_budget, pnms, 1.0 - gpu_share);
  b.recall_s = recall_time(samples * recall.steady_pages * page_bytes, gpu_link);
  b.attention_s = std::max(b.gpu_attention_s, b.pnm_attention_s);
  b.total_s = b.fc_s + std::max(b.pnm_attention_s, b.gpu_attention_s + b.recall_s) + b.topk_s +
              b.comm_s + p.step_overhead_s;
  return b;
}

struct ActiveTimes {
  double gpu_s = 0, pnm_s = 0;
};

inline ActiveTimes active_times(const LatencyBreakdown& b, Mode mode) {
  switch (mode) {
    case Mode::Baseline: return {b.fc_s + b.gpu_attention_s + b.recall_s + b.topk_s, 0.0};
    case Mode::PNM_KV: return {b.fc_s, b.pnm_attention_s + b.topk_s};
    case Mode::PnG_KV: return {b.fc_s + b.gpu_attention_s + b.recall_s, b.pnm_attention_s + b.topk_s};
  }
  return {};
}

inline double energy_per_token(const LatencyBreakdown& b, const ClusterConfig& cluster,
                               std::uint64_t batch, double idle_fraction = 0.0) {
  if (batch == 0) throw std::invalid_argument("energy_per_token: batch must be >= 1");
  const ActiveTimes t = active_times(b, cluster.mode);
  auto device_energy = [&](const DeviceSpec& d, double active) {
    const double idle = std::max(0.0, b.total_s - active);
    return d.max_power * (active + idle_fraction * idle);
  };
  double joules = 0;
  for (const auto& g : cluster.gpus) joules += device_energy(g, t.gpu_s);
  for (const auto& q : cluster.pnms) joules += device_energy(q, t.pnm_s);
  return joules / static_cast<double>(batch);
}

inline double cluster_hourly_cost(const ClusterConfig& cluster) {
  return detail::sum_over(cluster.gpus, [](const auto& d) { return d.hourly_cost(); }) +
         detail::sum_over(cluster.pnms, [](const auto& d) { return d.hourly_cost(); });
}

inline double tokens_per_dollar(double throughput, const ClusterConfig& cluster) {
  if (throughput < 0) throw std::invalid_argument("tokens_per_dollar: negative throughput");
  const double cost = cluster_hourly_cost(cluster);
  if (!(cost > 0)) throw std::invalid_argument("tokens_per_dollar: zero total cost");
  return throughput * 3600.0 / cost;
}

// Trace-mode recall statistics are deterministic per key, so they are
// memoized across runs in one process.
namespace detail {

struct TraceKey {
  std::uint64_t pages, page_size, d_h, seed;
  double spread, locality, drift;
  std::uint64_t steps, policy, capacity, budget;
  auto tie() const {
    return std::tie(pages, page_size, d_h, seed, spread, locality, drift, steps, policy, capacity, budget);
  }
  bool operator<(const TraceKey& o) const { return tie() < o.tie(); }
};

struct DigestKey {
  std::uint64_t pages, page_size, d_h, seed;
  double spread;
  auto tie() const { return std::tie(pages, page_size, d_h, seed, spread); }
  bool operator<(const DigestKey& o) const { return tie() < o.tie(); }
};

class TraceCache {
 public:
  static TraceCache& instance() {
    static TraceCache c;
    return c;
  }

  double mean_recalls(const TraceKey& key) {
    {
      std::lock_guard lock(mu_);
      if (auto it = results_.find(key); it != results_.end()) return it->second;
    }
    const auto digests = digests_for({key.pages, key.page_size, key.d_h, key.seed, key.spread});
    TraceParams tp;
    tp.stream = QueryStream{derive_seed(key.seed, 2), key.steps, key.locality, key.drift};
    tp.policy = key.policy == 0 ? Policy::ArkVale : Policy::Steady;
    tp.capacity_pages = key.capacity;
    tp.budget_pages = key.budget;
    const double mean = run_trace(tp, *digests, key.d_h).mean_recalls;
    std::lock_guard lock(mu_);
    results_.emplace(key, mean);
    return mean;
  }

 private:
  std::shared_ptr<const std::vector<PageDigest>> digests_for(const DigestKey& key) {
    {
      std::lock_guard lock(mu_);
      if (auto it = digests_.find(key); it != digests_.end()) return it->second;
    }
    ContextParams c{key.pages, key.page_size, key.d_h, derive_seed(key.seed, 1), key.spread};
    auto d = std::make_shared<const std::vector<PageDigest>>(make_context_digests(c));
    std::lock_guard lock(mu_);
    return digests_.emplace(key, std::move(d)).first->second;
  }

  std::mutex mu_;
  std::map<DigestKey, std::shared_ptr<const std::vector<PageDigest>>> digests_;
  std::map<TraceKey, double> results_;
};

}  // namespace detail

inline double recall_pages_per_step(Policy policy, std::uint64_t context_pages, std::uint64_t capacity_pages,
                                    std::uint64_t budget_pages, std::uint64_t seed, const PerfParams& p) {
  if (capacity_pages == 0 || budget_pages == 0) return 0.0;
  if (p.recall_source == RecallSource::Analytic) {
    const auto held = policy == Policy::ArkVale ? budget_pages : capacity_pages;
    return p.churn_prob * static_cast<double>(held);
  }
  detail::TraceKey key{context_pages, p.page_size, p.trace_d_h, seed, p.token_spread, p.locality, p.drift,
                       p.trace_steps, policy == Policy::ArkVale ? 0U : 1U, capacity_pages, budget_pages};
  return detail::TraceCache::instance().mean_recalls(key);
}

// Decode-step report for one configuration. Infeasible configurations come
// back with status Infeasible and a diagnostic naming the violated limit.
inline RunReport run(const ClusterConfig& cluster, const ModelSpec& spec, Tokens context,
                     std::uint64_t seed, const PerfParams& p = {}) {
  RunReport r;
  r.mode = cluster.mode;
  r.model = spec.name;
  r.n_gpu = cluster.gpus.size();
  r.n_pnm = cluster.pnms.size();
  r.context = context;
  auto infeasible = [&](std::string why) {
    r.status = RunStatus::Infeasible;
    r.diagnostic = std::move(why);
    return r;
  };
  spec.validate();
  cluster.validate();
  if (context == 0) return infeasible("context must be >= 1 token");
  if (p.page_size == 0) return infeasible("page_size must be >= 1");

  const Bytes kvbpt = kv_bytes_per_token(spec);
  const Bytes weights = model_weight_bytes(spec, p);
  const Bytes gpu_mem = std::accumulate(cluster.gpus.begin(), cluster.gpus.end(), Bytes{0},
                                        [](Bytes s, const DeviceSpec& d) { return s + d.mem_capacity; });
  if (weights > gpu_mem)
    return infeasible("model weights (" + detail::gib_str(weights) + ") exceed GPU memory (" +
                      detail::gib_str(gpu_mem) + ")");
  const Bytes gpu_free = gpu_mem - weights;
  const std::uint64_t pages = ceil_div(context, p.page_size);
  const std::uint64_t budget_pages =
      std::min(pages, p.budget_pages ? p.budget_pages : default_budget_pages(pages));
  const Tokens t_budget = std::min<Tokens>(budget_pages * p.page_size, context);

  // A page digest (min and max vector per layer and KV head) costs as much
  // as one token of KV.
  std::uint64_t batch = 0;
  if (cluster.mode == Mode::Baseline) {
    const Tokens resident = t_budget + pages;
    batch = max_batch(spec, gpu_free, resident);
    if (batch == 0)
      return infeasible("batch collapse: per-sample GPU residency (" + detail::gib_str(resident * kvbpt) +
                        ") exceeds free GPU memory (" + detail::gib_str(gpu_free) + ")");
  } else {
    const Tokens per_sample = context + pages;
    if (cluster.mapping == Mapping::TP_DP) {
      for (const auto& d : cluster.pnms) batch += max_batch(spec, d.mem_capacity, per_sample);
    } else {
      Bytes total = 0;
      for (const auto& d : cluster.pnms) total += d.mem_capacity;
      batch = max_batch(spec, total, per_sample);
    }
    if (batch == 0)
      return infeasible("per-sample KV cache (" + detail::gib_str(per_sample * kvbpt) +
                        ") exceeds PNM memory");
  }
  if (p.max_batch_cap) batch = std::min(batch, p.max_batch_cap);
  r.batch = batch;

  RecallStats stats;
  if (cluster.mode == Mode::Baseline) {
    r.budgets = BudgetConfig{t_budget, 0, 0.0};
    stats.arkvale_pages = recall_pages_per_step(Policy::ArkVale, pages, budget_pages, budget_pages, seed, p);
    r.recall_pages_per_step = stats.arkvale_pages;
  } else if (cluster.mode == Mode::PnG_KV) {
    const double ratio = p.steady_ratio >= 0.0 ? p.steady_ratio : steady_ratio(r.n_gpu, r.n_pnm);
    const Tokens cap = steady_capacity(gpu_free, spec, batch, p.page_size);
    r.budgets = make_budget(t_budget, ratio, p.page_size, cap);
    const std::uint64_t steady_pages = r.budgets.t_steady / p.page_size;
    stats.steady_pages = recall_pages_per_step(Policy::Steady, pages, steady_pages, budget_pages, seed, p);
    r.recall_pages_per_step = stats.steady_pages;
  } else {
    r.budgets = BudgetConfig{t_budget, 0, 0.0};
  }
  // Summed over every (layer, KV head) of one sample.
  r.recall_bytes_per_sample = static_cast<Bytes>(
      std::llround(r.recall_pages_per_step * static_cast<double>(p.page_size * kvbpt)));

  r.breakdown = step_latency(cluster, spec, batch, context, r.budgets, stats, p);
  r.throughput = static_cast<double>(batch) / r.breakdown.total_s;
  r.energy_per_token = energy_per_token(r.breakdown, cluster, batch, p.idle_fraction);
  r.tokens_per_dollar = tokens_per_dollar(r.throughput, cluster);
  if (r.n_pnm > kPnmNodeDevices)
    r.diagnostic = "assumes one node of " + std::to_string(kPnmNodeDevices) + " PNMs per host link; " +
                   std::to_string(r.n_pnm) + " requested";
  return r;
}

// Homogeneous cluster from built-in or user-defined device specs.
inline ClusterConfig make_cluster(const DeviceSpec& gpu, std::uint64_t n_gpu, const DeviceSpec& pnm,
                                  std::uint64_t n_pnm, Mode mode, Mapping mapping = Mapping::TP_DP,
                                  double host_link_bandwidth = 128e9) {
  ClusterConfig c;
  c.gpus.assign(n_gpu, gpu);
  if (mode != Mode::Baseline) c.pnms.assign(n_pnm, pnm);
  c.mode = mode;
  c.mapping = mapping;
  c.host_link_bandwidth = host_link_bandwidth;
  return c;
}

}  // namespace pnmkv
