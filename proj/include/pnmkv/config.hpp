#pragma once

// Experiment configuration: flat INI-style text with one level of
// sections. Lines starting with ';' or '#' are comments.
//
//   [model.<name>]   ModelSpec fields (n_l, n_h, d_h, d_in, d_out, g,
//                    context_window, bytes_per_elem, mlp_matrices)
//   [device.<name>]  DeviceSpec fields (kind = gpu|pnm, mem_capacity,
//                    mem_bandwidth, peak_compute, link_bandwidth,
//                    max_power, op_cost, hw_cost, sorter_rate); unset
//                    fields inherit from `base = <built-in name>`
//   [sweep]          model, gpu, pnm, modes, contexts, n_gpu, n_pnm,
//                    mapping, host_link_bandwidth, seed, out
//   [budget]         page_size, budget_pages, steady_ratio
//   [perf]           b_sat, idle_fraction, step_overhead_s,
//                    model_weight_bytes, max_batch_cap, activation,
//                    recall_source, churn_prob
//   [stream]         locality, drift, steps, d_h, token_spread
//   [fidelity]       context_pages, capacity_pages, steady_pages,
//                    budget_pages, steps, seeds, d_h, group, page_size,
//                    selection = group-mean|per-head
//
// List values are comma separated.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "pnmkv/model_zoo.hpp"
#include "pnmkv/perf_model.hpp"
#include "pnmkv/topology.hpp"

namespace pnmkv {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SweepConfig {
  std::string model = "Llama3.1-8B";
  std::string gpu = "A100-80GB";
  std::string pnm = "CXL-PNM";
  std::vector<Mode> modes{Mode::Baseline, Mode::PNM_KV, Mode::PnG_KV};
  std::vector<Tokens> contexts{131072};
  std::vector<std::uint64_t> n_gpus{1};
  std::vector<std::uint64_t> n_pnms{1, 2, 4, 8};
  Mapping mapping = Mapping::TP_DP;
  double host_link_bandwidth = 128e9;
  std::uint64_t seed = 0;
  std::string out;
  PerfParams perf;
};

struct FidelityConfig {
  std::vector<std::uint64_t> context_pages{1024, 2048, 4096, 8192};
  std::uint64_t page_size = 32;
  std::uint64_t capacity_pages = 64;  // ArkVale residency = Top-K size
  std::uint64_t steady_pages = 16;    // Steady-Select residency
  std::uint64_t budget_pages = 64;
  std::uint64_t steps = 64;
  std::uint64_t seeds = 5;
  std::size_t d_h = 16;
  std::uint64_t group = 4;  // query heads per KV head
  bool per_head_selection = false;  // score pages by the best head instead of the group mean
  double locality = 0.95;
  double drift = 1.0;
  double token_spread = 0.5;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  std::map<std::string, ModelSpec> models;
  std::map<std::string, DeviceSpec> devices;
  SweepConfig sweep;
  FidelityConfig fidelity;

  ExperimentConfig() {
    for (const auto& s : builtin_specs()) models.emplace(s.name, s);
    devices = builtin_devices();
  }

  [[nodiscard]] const ModelSpec& model(const std::string& name) const {
    auto it = models.find(name);
    if (it == models.end()) throw ConfigError("unknown model '" + name + "'");
    return it->second;
  }
  [[nodiscard]] const DeviceSpec& device(const std::string& name) const {
    auto it = devices.find(name);
    if (it == devices.end()) throw ConfigError("unknown device '" + name + "'");
    return it->second;
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = trim(item); !t.empty()) out.push_back(t);
  return out;
}

class SectionReader {
 public:
  SectionReader(std::string name, const boost::property_tree::ptree& tree)
      : name_(std::move(name)), tree_(tree) {}

  // Rejects keys that no reader asked for.
  void finish() const {
    for (const auto& [key, _] : tree_)
      if (!used_.count(key)) throw ConfigError("[" + name_ + "] " + key + ": unknown key");
  }

  [[nodiscard]] bool has(const std::string& key) const { return tree_.find(key) != tree_.not_found(); }

  std::string text(const std::string& key, std::string fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    return trim(tree_.get<std::string>(key));
  }

  template <typename T>
  T number(const std::string& key, T fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    return parse<T>(key, trim(tree_.get<std::string>(key)));
  }

  template <typename T>
  std::vector<T> numbers(const std::string& key, std::vector<T> fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    std::vector<T> out;
    for (const auto& item : split_list(tree_.get<std::string>(key))) out.push_back(parse<T>(key, item));
    return out;
  }

 private:
  template <typename T>
  T parse(const std::string& key, const std::string& raw) const {
    T value{};
    const char* first = raw.data();
    const char* last = raw.data() + raw.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || raw.empty())
      throw ConfigError("[" + name_ + "] " + key + ": invalid number '" + raw + "'");
    return value;
  }

  std::string name_;
  const boost::property_tree::ptree& tree_;
  std::set<std::string> used_;
};

inline void read_model(ExperimentConfig& cfg, const std::string& name, SectionReader& r) {
  ModelSpec s;
  if (auto it = cfg.models.find(name); it != cfg.models.end()) s = it->second;
  s.name = name;
  s.n_l = r.number("n_l", s.n_l);
  s.n_h = r.number("n_h", s.n_h);
  s.d_h = r.number("d_h", s.d_h);
  s.d_in = r.number("d_in", s.d_in);
  s.d_out = r.number("d_out", s.d_out);
  s.g = r.number("g", s.g);
  s.context_window = r.number("context_window", s.context_window);
  s.bytes_per_elem = r.number("bytes_per_elem", s.bytes_per_elem);
  s.mlp_matrices = r.number("mlp_matrices", s.mlp_matrices);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("[model." + name + "] " + e.what());
  }
  cfg.models[name] = s;
}

inline void read_device(ExperimentConfig& cfg, const std::string& name, SectionReader& r) {
  DeviceSpec d;
  const std::string base = r.text("base", "");
  if (!base.empty()) d = cfg.device(base);
  else if (auto it = cfg.devices.find(name); it != cfg.devices.end()) d = it->second;
  d.name = name;
  const std::string kind = r.text("kind", d.kind == DeviceKind::GPU ? "gpu" : "pnm");
  if (kind != "gpu" && kind != "pnm") throw ConfigError("[device." + name + "] kind: expected gpu or pnm");
  d.kind = kind == "gpu" ? DeviceKind::GPU : DeviceKind::PNM;
  d.mem_capacity = r.number("mem_capacity", d.mem_capacity);
  d.mem_bandwidth = r.number("mem_bandwidth", d.mem_bandwidth);
  d.peak_compute = r.number("peak_compute", d.peak_compute);
  d.link_bandwidth = r.number("link_bandwidth", d.link_bandwidth);
  d.max_power = r.number("max_power", d.max_power);
  d.op_cost = r.number("op_cost", d.op_cost);
  d.hw_cost = r.number("hw_cost", d.hw_cost);
  d.sorter_rate = r.number("sorter_rate", d.sorter_rate);
  try {
    d.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("[device." + name + "] " + e.what());
  }
  cfg.devices[name] = d;
}

template <typename F>
auto rethrow_as_config(const std::string& where, F f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline void read_sweep(SweepConfig& s, SectionReader& r) {
  s.model = r.text("model", s.model);
  s.gpu = r.text("gpu", s.gpu);
  s.pnm = r.text("pnm", s.pnm);
  if (r.has("modes")) {
    s.modes.clear();
    for (const auto& m : split_list(r.text("modes", "")))
      s.modes.push_back(rethrow_as_config("[sweep] modes", [&] { return parse_mode(m); }));
  }
  s.contexts = r.numbers<Tokens>("contexts", s.contexts);
  std::sort(s.contexts.begin(), s.contexts.end());
  s.n_gpus = r.numbers<std::uint64_t>("n_gpu", s.n_gpus);
  s.n_pnms = r.numbers<std::uint64_t>("n_pnm", s.n_pnms);
  if (r.has("mapping"))
    s.mapping = rethrow_as_config("[sweep] mapping", [&] { return parse_mapping(r.text("mapping", "")); });
  s.host_link_bandwidth = r.number("host_link_bandwidth", s.host_link_bandwidth);
  s.seed = r.number("seed", s.seed);
  s.out = r.text("out", s.out);
}

inline void read_budget(PerfParams& p, FidelityConfig& f, SectionReader& r) {
  p.page_size = r.number("page_size", p.page_size);
  if (p.page_size == 0) throw ConfigError("[budget] page_size: must be >= 1");
  f.page_size = p.page_size;
  p.budget_pages = r.number("budget_pages", p.budget_pages);
  p.steady_ratio = r.number("steady_ratio", p.steady_ratio);
  if (p.steady_ratio > 1.0) throw ConfigError("[budget] steady_ratio: must lie in [0,1]");
}

inline void read_perf(PerfParams& p, SectionReader& r) {
  p.b_sat = r.number("b_sat", p.b_sat);
  p.idle_fraction = r.number("idle_fraction", p.idle_fraction);
  p.step_overhead_s = r.number("step_overhead_s", p.step_overhead_s);
  p.model_weight_bytes = r.number("model_weight_bytes", p.model_weight_bytes);
  p.max_batch_cap = r.number("max_batch_cap", p.max_batch_cap);
  const std::string act = r.text("activation", "qkv-out");
  if (act == "qkv-out") p.activation = ActivationFields::QKVOut;
  else if (act == "q-only") p.activation = ActivationFields::QOnly;
  else throw ConfigError("[perf] activation: expected qkv-out or q-only");
  const std::string src = r.text("recall_source", "trace");
  if (src == "trace") p.recall_source = RecallSource::Trace;
  else if (src == "analytic") p.recall_source = RecallSource::Analytic;
  else throw ConfigError("[perf] recall_source: expected trace or analytic");
  p.churn_prob = r.number("churn_prob", p.churn_prob);
}

inline void read_stream(PerfParams& p, FidelityConfig& f, SectionReader& r) {
  p.locality = f.locality = r.number("locality", p.locality);
  p.drift = f.drift = r.number("drift", p.drift);
  p.token_spread = f.token_spread = r.number("token_spread", p.token_spread);
  p.trace_steps = r.number("steps", p.trace_steps);
  p.trace_d_h = r.number("d_h", p.trace_d_h);
  if (p.locality < 0.0 || p.locality > 1.0) throw ConfigError("[stream] locality: must lie in [0,1]");
  if (p.drift < 0.0) throw ConfigError("[stream] drift: must be >= 0");
}

inline void read_fidelity(FidelityConfig& f, SectionReader& r) {
  f.context_pages = r.numbers<std::uint64_t>("context_pages", f.context_pages);
  std::sort(f.context_pages.begin(), f.context_pages.end());
  f.page_size = r.number("page_size", f.page_size);
  f.capacity_pages = r.number("capacity_pages", f.capacity_pages);
  f.steady_pages = r.number("steady_pages", f.steady_pages);
  f.budget_pages = r.number("budget_pages", f.budget_pages);
  f.steps = r.number("steps", f.steps);
  f.seeds = r.number("seeds", f.seeds);
  f.d_h = r.number("d_h", f.d_h);
  f.group = r.number("group", f.group);
  const auto sel = r.text("selection", f.per_head_selection ? "per-head" : "group-mean");
  if (sel != "group-mean" && sel != "per-head")
    throw ConfigError("[fidelity] selection: expected group-mean or per-head, got '" + sel + "'");
  f.per_head_selection = sel == "per-head";
  if (f.d_h == 0 || f.page_size == 0 || f.group == 0) throw ConfigError("[fidelity] d_h, page_size, group must be >= 1");
  if (f.steady_pages > f.budget_pages || f.capacity_pages < f.budget_pages)
    throw ConfigError("[fidelity] need steady_pages <= budget_pages <= capacity_pages");
}

}  // namespace detail

inline ExperimentConfig parse_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("line " + std::to_string(e.line()) + ": " + e.message());
  }
  ExperimentConfig cfg;
  // Models and devices first so [sweep] can refer to them regardless of order.
  for (const auto& [section, body] : tree) {
    if (section.rfind("model.", 0) == 0) {
      detail::SectionReader r(section, body);
      detail::read_model(cfg, section.substr(6), r);
      r.finish();
    } else if (section.rfind("device.", 0) == 0) {
      detail::SectionReader r(section, body);
      detail::read_device(cfg, section.substr(7), r);
      r.finish();
    }
  }
  for (const auto& [section, body] : tree) {
    if (section.rfind("model.", 0) == 0 || section.rfind("device.", 0) == 0) continue;
    if (body.empty() && !body.data().empty())
      throw ConfigError("key '" + section + "' outside any section");
    detail::SectionReader r(section, body);
    if (section == "sweep") detail::read_sweep(cfg.sweep, r);
    else if (section == "budget") detail::read_budget(cfg.sweep.perf, cfg.fidelity, r);
    else if (section == "perf") detail::read_perf(cfg.sweep.perf, r);
    else if (section == "stream") detail::read_stream(cfg.sweep.perf, cfg.fidelity, r);
    else if (section == "fidelity") detail::read_fidelity(cfg.fidelity, r);
    else throw ConfigError("unknown section [" + section + "]");
    r.finish();
  }
  cfg.fidelity.seed = cfg.sweep.seed;
  (void)cfg.model(cfg.sweep.model);
  if (cfg.device(cfg.sweep.gpu).kind != DeviceKind::GPU) throw ConfigError("[sweep] gpu: '" + cfg.sweep.gpu + "' is not a GPU");
  if (cfg.device(cfg.sweep.pnm).kind != DeviceKind::PNM) throw ConfigError("[sweep] pnm: '" + cfg.sweep.pnm + "' is not a PNM");
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  return parse_config(in);
}

}  // namespace pnmkv
