#pragma once

// Command-line front end. Exit codes: 0 success, 1 usage or config error,
// 2 when every sweep point is infeasible.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pnmkv/config.hpp"
#include "pnmkv/csv.hpp"
#include "pnmkv/model_zoo.hpp"
#include "pnmkv/sim_driver.hpp"
#include "pnmkv/topology.hpp"

namespace pnmkv {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitInfeasible = 2;

inline CsvTable devices_table(const std::map<std::string, DeviceSpec>& devices) {
  CsvTable t;
  t.header = {"name",           "kind",      "mem_capacity_gib", "mem_bandwidth", "peak_compute", "link_bandwidth",
              "max_power",      "op_cost",   "hw_cost",          "hourly_cost",   "sorter_rate"};
  for (const auto& [name, d] : devices)
    t.rows.push_back({csv_cell(name), d.kind == DeviceKind::GPU ? "gpu" : "pnm",
                      format_number(static_cast<double>(d.mem_capacity) / GiB), format_number(d.mem_bandwidth),
                      format_number(d.peak_compute), format_number(d.link_bandwidth), format_number(d.max_power),
                      format_number(d.op_cost), format_number(d.hw_cost), format_number(d.hourly_cost()),
                      format_number(d.sorter_rate)});
  return t;
}

inline void print_sizing(std::ostream& os, const ModelSpec& spec, std::uint64_t batch, Tokens context,
                         Bytes free_bytes) {
  const auto r = sizing_report(spec, batch, context, free_bytes);
  os << "model " << spec.name << '\n'
     << "batch " << batch << '\n'
     << "context " << context << '\n'
     << "kv_bytes_per_token " << r.kv_bytes_per_token << '\n'
     << "kv_cache_bytes " << r.kv_cache_bytes << " (" << format_number(r.kv_cache_bytes / GiB) << " GiB)\n"
     << "fc_param_bytes " << r.fc_param_bytes << " (" << format_number(r.fc_param_bytes / GiB) << " GiB)\n"
     << "fc_flops_per_token " << r.fc_flops_per_token << '\n'
     << "free_bytes " << free_bytes << '\n'
     << "max_batch " << r.max_batch << '\n';
}

namespace detail {

// Writes to `path`, or to `fallback` when the path is empty.
template <typename F>
void with_output(const std::string& path, std::ostream& fallback, F&& body) {
  if (path.empty()) {
    body(fallback);
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open output '" + path + "'");
  body(f);
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"PNM KV-cache simulator", "pnmkv_sim"};
  app.require_subcommand(0, 1);

  std::string config_path, out_path, mode, trace_path, model_name = "Llama3.1-8B";
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  std::uint64_t batch = 1;
  Tokens context = 131072;
  std::optional<double> free_gib;

  auto* sweep = app.add_subcommand("sweep", "analytical sweep over modes, contexts and device counts");
  sweep->add_option("--config", config_path, "config file");
  sweep->add_option("--seed", seed, "RNG seed");
  sweep->add_option("--out", out_path, "CSV output path (stdout if omitted)");
  sweep->add_option("--mode", mode, "restrict to one mode")->check(CLI::IsMember({"baseline", "pnm-kv", "png-kv"}));
  sweep->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);

  auto* fidelity = app.add_subcommand("fidelity", "functional selection, replacement and merge experiment");
  fidelity->add_option("--config", config_path, "config file");
  fidelity->add_option("--seed", seed, "RNG seed");
  fidelity->add_option("--out", out_path, "CSV output path (stdout if omitted)");
  fidelity->add_option("--trace", trace_path, "per-step replacement trace output");

  auto* sizing = app.add_subcommand("sizing", "KV-cache and FC sizing for one model");
  sizing->add_option("--config", config_path, "config file");
  sizing->add_option("--model", model_name, "model name");
  sizing->add_option("--context", context, "context length in tokens");
  sizing->add_option("--batch", batch, "batch size");
  sizing->add_option("--free", free_gib, "free memory for KV in GiB (default: GPU memory minus weights)");

  auto* devices = app.add_subcommand("devices", "list device parameters");
  devices->add_option("--config", config_path, "config file");

  if (argc <= 1) {
    err << app.help();
    return kExitConfig;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitConfig;
  }
  if (app.get_subcommands().empty()) {
    err << app.help();
    return kExitConfig;
  }

  try {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (seed) cfg.sweep.seed = cfg.fidelity.seed = *seed;

    if (*sweep) {
      if (!mode.empty()) cfg.sweep.modes = {parse_mode(mode)};
      if (!out_path.empty()) cfg.sweep.out = out_path;
      const auto reports = run_sweep(cfg, jobs);
      detail::with_output(cfg.sweep.out, out, [&](std::ostream& os) { write_csv(os, sweep_table(reports, cfg.sweep.seed)); });
      const bool any_ok = std::any_of(reports.begin(), reports.end(),
                                      [](const RunReport& r) { return r.status == RunStatus::Ok; });
      if (!reports.empty() && !any_ok) {
        err << "all sweep points are infeasible\n";
        return kExitInfeasible;
      }
      return kExitOk;
    }
    if (*fidelity) {
      std::optional<std::ofstream> trace;
      if (!trace_path.empty()) {
        trace.emplace(trace_path, std::ios::binary);
        if (!*trace) throw ConfigError("cannot open trace '" + trace_path + "'");
      }
      const auto rep = run_fidelity(cfg.fidelity, trace ? &*trace : nullptr);
      detail::with_output(out_path, out, [&](std::ostream& os) { write_csv(os, fidelity_table(rep)); });
      return kExitOk;
    }
    if (*sizing) {
      const ModelSpec& spec = cfg.model(model_name);
      Bytes free_bytes = 0;
      if (free_gib) {
        if (*free_gib < 0) throw ConfigError("--free must be non-negative");
        free_bytes = static_cast<Bytes>(*free_gib * GiB);
      } else {
        const Bytes cap = cfg.device(cfg.sweep.gpu).mem_capacity;
        const Bytes weights = fc_param_bytes(spec);
        free_bytes = cap > weights ? cap - weights : 0;
      }
      print_sizing(out, spec, batch, context, free_bytes);
      return kExitOk;
    }
    write_csv(out, devices_table(cfg.devices));
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
  }
  return kExitConfig;
}

}  // namespace pnmkv
