#pragma once

// Experiment drivers: analytical sweeps over (mode, context, GPUs, PNMs)
// and functional fidelity runs of selection, replacement and merged
// attention on a synthetic decode stream.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "pnmkv/attention_core.hpp"
#include "pnmkv/cache_manager.hpp"
#include "pnmkv/config.hpp"
#include "pnmkv/csv.hpp"
#include "pnmkv/perf_model.hpp"
#include "pnmkv/recall_trace.hpp"
#include "pnmkv/stream.hpp"

namespace pnmkv {

struct SweepPoint {
  Mode mode;
  Tokens context;
  std::uint64_t n_gpu;
  std::uint64_t n_pnm;
};

// Config order: mode, then context, then GPU count, then PNM count.
// Baseline has no PNMs, so it contributes one point per (context, n_gpu).
inline std::vector<SweepPoint> sweep_points(const SweepConfig& s) {
  std::vector<SweepPoint> pts;
  for (Mode m : s.modes)
    for (Tokens c : s.contexts)
      for (auto g : s.n_gpus) {
        if (m == Mode::Baseline) {
          pts.push_back({m, c, g, 0});
          continue;
        }
        for (auto p : s.n_pnms) pts.push_back({m, c, g, p});
      }
  return pts;
}

inline RunReport run_point(const ExperimentConfig& cfg, const SweepPoint& pt) {
  const auto& s = cfg.sweep;
  const ModelSpec& spec = cfg.model(s.model);
  RunReport r;
  r.mode = pt.mode;
  r.model = spec.name;
  r.context = pt.context;
  r.n_gpu = pt.n_gpu;
  r.n_pnm = pt.n_pnm;
  try {
    if (pt.n_gpu == 0) throw std::invalid_argument("at least one GPU is required");
    if (pt.mode != Mode::Baseline && pt.n_pnm == 0)
      throw std::invalid_argument(std::string(to_string(pt.mode)) + " requires at least one PNM");
    const auto cluster = make_cluster(cfg.device(s.gpu), pt.n_gpu, cfg.device(s.pnm), pt.n_pnm, pt.mode,
                                      s.mapping, s.host_link_bandwidth);
    return run(cluster, spec, pt.context, s.seed, s.perf);
  } catch (const std::invalid_argument& e) {
    r.status = RunStatus::Infeasible;
    r.diagnostic = e.what();
  } catch (const InfeasibleError& e) {
    r.status = RunStatus::Infeasible;
    r.diagnostic = e.what();
  }
  return r;
}

// Points run on `jobs` worker threads; results keep config order.
inline std::vector<RunReport> run_sweep(const ExperimentConfig& cfg, unsigned jobs = 1) {
  const auto pts = sweep_points(cfg.sweep);
  std::vector<RunReport> out(pts.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < pts.size(); i = next++) out[i] = run_point(cfg, pts[i]);
  };
  jobs = std::max(1U, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(pts.size(), 1))));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

inline const std::vector<std::string>& sweep_header() {
  static const std::vector<std::string> h{
      "mode",    "model",  "context",   "n_gpu",      "n_pnm",            "batch",
      "fc_s",    "attention_s", "recall_s", "topk_s", "comm_s",           "total_s",
      "throughput", "energy_per_token", "tokens_per_dollar", "seed",   "status", "diagnostic"};
  return h;
}

inline CsvTable sweep_table(const std::vector<RunReport>& reports, std::uint64_t seed) {
  CsvTable t;
  t.header = sweep_header();
  for (const auto& r : reports) {
    const bool ok = r.status == RunStatus::Ok;
    auto num = [&](double v) { return ok ? format_number(v) : std::string{}; };
    const auto& b = r.breakdown;
    t.rows.push_back({to_string(r.mode), csv_cell(r.model), format_number(r.context), format_number(r.n_gpu),
                      format_number(r.n_pnm), format_number(r.batch), num(b.fc_s), num(b.attention_s),
                      num(b.recall_s), num(b.topk_s), num(b.comm_s), num(b.total_s), num(r.throughput),
                      num(r.energy_per_token), num(r.tokens_per_dollar), format_number(seed),
                      ok ? "ok" : "infeasible", csv_cell(r.diagnostic)});
  }
  return t;
}

// ---------------------------------------------------------------------------
// Fidelity

struct FidelityRow {
  std::uint64_t context_pages = 0;
  std::uint64_t seed = 0;
  double arkvale_recalls = 0;    // mean per step after warm-up
  double steady_recalls = 0;
  double selection_overlap = 0;  // digest Top-K vs exact max-token Top-K
  double merge_residual = 0;     // max relative error of merged partials
  std::vector<std::uint64_t> arkvale_steps;
  std::vector<std::uint64_t> steady_steps;
};

struct FidelityReport {
  std::vector<FidelityRow> rows;

  // Mean ArkVale recalls per step for each context size, averaged over seeds.
  [[nodiscard]] std::vector<std::pair<std::uint64_t, double>> mean_arkvale_by_context() const {
    std::vector<std::pair<std::uint64_t, double>> out;
    for (const auto& row : rows) {
      auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == row.context_pages; });
      if (it == out.end()) out.emplace_back(row.context_pages, 0.0), it = out.end() - 1;
      it->second += row.arkvale_recalls;
    }
    for (auto& [pages, sum] : out) {
      const auto n = std::count_if(rows.begin(), rows.end(), [&](const auto& r) { return r.context_pages == pages; });
      sum /= static_cast<double>(n);
    }
    return out;
  }
};

namespace detail {

inline double max_relative_error(std::span<const double> got, std::span<const double> want) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t j = 0; j < want.size(); ++j) {
    diff = std::max(diff, std::fabs(got[j] - want[j]));
    scale = std::max(scale, std::fabs(want[j]));
  }
  return scale > 0 ? diff / scale : diff;
}

inline double page_max_token_score(std::span<const double> q, const KVPage& page) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < page.keys.rows(); ++r) best = std::max(best, detail::dot(q, page.keys.row(r)));
  return best;
}

}  // namespace detail

inline FidelityRow run_fidelity_point(const FidelityConfig& f, std::uint64_t context_pages,
                                      std::uint64_t seed, std::ostream* trace = nullptr) {
  if (f.budget_pages > context_pages)
    throw std::invalid_argument("run_fidelity: budget exceeds context pages");
  FidelityRow row;
  row.context_pages = context_pages;
  row.seed = seed;

  const ContextParams ctx{context_pages, f.page_size, f.d_h, derive_seed(seed, 1), f.token_spread};
  const auto pages = make_context_pages(ctx);
  std::vector<PageDigest> digests;
  digests.reserve(pages.size());
  for (const auto& p : pages) digests.push_back(make_digest(p));

  const auto stream = gen_stream({derive_seed(seed, 2), f.steps, f.locality, f.drift}, f.d_h);
  // Each query head in the group sees the shared stream plus a fixed offset.
  SplitMix64 head_rng(derive_seed(seed, 3));
  std::vector<Vector> head_offsets;
  for (std::uint64_t h = 0; h < f.group; ++h) head_offsets.push_back(head_rng.gaussian_vector(f.d_h));
  const double scale = default_scale(f.d_h);
  const Bytes page_bytes = f.page_size * 2 * f.d_h * sizeof(double);

  ResidencySet arkvale(f.capacity_pages, context_pages);
  ResidencySet steady(f.steady_pages, context_pages);
  std::uint64_t ark_total = 0, steady_total = 0, counted = 0;
  double overlap_sum = 0.0;

  for (std::uint64_t step = 0; step < stream.size(); ++step) {
    std::vector<Vector> heads;
    for (std::uint64_t h = 0; h < f.group; ++h) {
      Vector qh = stream[step];
      for (std::size_t j = 0; j < qh.size(); ++j) qh[j] += 0.25 * head_offsets[h][j];
      normalize(qh);
      heads.push_back(std::move(qh));
    }
    const Vector selector = group_query(heads);
    ScoreList S;
    if (f.per_head_selection) {
      std::vector<ScoredPage> scores;
      scores.reserve(digests.size());
      for (const auto& d : digests) {
        double best = -std::numeric_limits<double>::infinity();
        for (const auto& qh : heads) best = std::max(best, score_page(qh, d));
        scores.push_back({d.page_id, best});
      }
      S = top_k(std::move(scores), f.budget_pages);
    } else {
      S = select_pages(selector, digests, f.budget_pages);
    }

    auto ark_plan = arkvale_replace(arkvale, S, f.budget_pages);
    ark_plan.recall_bytes = recall_volume(ark_plan, page_bytes);
    arkvale = apply_plan(arkvale, ark_plan);
    auto steady_plan = steady_replace(steady, S, f.budget_pages);
    steady_plan.recall_bytes = recall_volume(steady_plan, page_bytes);
    if (trace) write_trace_line(*trace, step, steady_plan);
    steady = apply_plan(steady, steady_plan);

    row.arkvale_steps.push_back(ark_plan.recall.size());
    row.steady_steps.push_back(steady_plan.recall.size());
    if (step >= 1) {
      ark_total += ark_plan.recall.size();
      steady_total += steady_plan.recall.size();
      ++counted;
    }

    // Exact per-page relevance ranking, independent of the digest path.
    std::vector<std::pair<double, PageId>> exact;
    exact.reserve(pages.size());
    for (const auto& p : pages) {
      double best = detail::page_max_token_score(selector, p);
      if (f.per_head_selection) {
        best = -std::numeric_limits<double>::infinity();
        for (const auto& qh : heads) best = std::max(best, detail::page_max_token_score(qh, p));
      }
      exact.emplace_back(best, p.page_id);
    }
    std::sort(exact.begin(), exact.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::set<PageId> truth;
    for (std::size_t i = 0; i < f.budget_pages; ++i) truth.insert(exact[i].second);
    std::size_t hit = 0;
    for (const auto& e : S.entries) hit += truth.count(e.page_id);
    overlap_sum += f.budget_pages ? static_cast<double>(hit) / static_cast<double>(f.budget_pages) : 1.0;

    // Steady pages attend on the GPU side, the rest of the budget near memory.
    std::vector<const KVPage*> all, gpu_side, pnm_side;
    for (const auto& e : S.entries) {
      const KVPage* p = &pages[e.page_id];
      all.push_back(p);
      (steady.contains(e.page_id) ? gpu_side : pnm_side).push_back(p);
    }
    if (!all.empty()) {
      for (const auto& qh : heads) {
        const Vector want = attention_exact(qh, all, scale);
        const auto merged = merge_partials(attention_partial(qh, gpu_side, scale),
                                           attention_partial(qh, pnm_side, scale));
        row.merge_residual = std::max(row.merge_residual, detail::max_relative_error(finalize(merged), want));
      }
    }
  }
  if (counted) {
    row.arkvale_recalls = static_cast<double>(ark_total) / static_cast<double>(counted);
    row.steady_recalls = static_cast<double>(steady_total) / static_cast<double>(counted);
  }
  row.selection_overlap = stream.empty() ? 0.0 : overlap_sum / static_cast<double>(stream.size());
  return row;
}

inline std::uint64_t fidelity_seed(std::uint64_t base, std::uint64_t index) {
  return derive_seed(base, 1000 + index);
}

inline FidelityReport run_fidelity(const FidelityConfig& f, std::ostream* trace = nullptr) {
  FidelityReport rep;
  for (auto pages : f.context_pages)
    for (std::uint64_t s = 0; s < f.seeds; ++s) {
      const auto seed = fidelity_seed(f.seed, s);
      if (trace) *trace << "# context_pages=" << pages << " seed=" << seed << " policy=steady\n";
      rep.rows.push_back(run_fidelity_point(f, pages, seed, trace));
    }
  return rep;
}

inline CsvTable fidelity_table(const FidelityReport& rep) {
  CsvTable t;
  t.header = {"context_pages", "seed", "arkvale_recalls", "steady_recalls", "selection_overlap", "merge_residual"};
  for (const auto& r : rep.rows)
    t.rows.push_back({format_number(r.context_pages), format_number(r.seed), format_number(r.arkvale_recalls),
                      format_number(r.steady_recalls), format_number(r.selection_overlap),
                      format_number(r.merge_residual)});
  return t;
}

}  // namespace pnmkv
