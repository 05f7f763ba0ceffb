#pragma once

// Desk-scale recall dynamics: a synthetic paged context, a drifting query
// stream, and a replacement policy stepped once per decode step.

#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <vector>

#include "pnmkv/attention_core.hpp"
#include "pnmkv/cache_manager.hpp"
#include "pnmkv/stream.hpp"

namespace pnmkv {

// Keys of page p are center_p + token_spread * noise, so pages carry a
// distinct direction the digest can pick up. Each page draws from its own
// sub-stream, so digests can be produced without materializing values.
struct ContextParams {
  std::uint64_t pages = 0;
  std::uint64_t page_size = 32;
  std::size_t d_h = 16;
  std::uint64_t seed = 0;
  double token_spread = 0.5;
};

namespace detail {

template <typename RowSink>
void draw_page_keys(const ContextParams& c, SplitMix64& rng, RowSink&& sink) {
  const Vector center = rng.gaussian_vector(c.d_h);
  Vector row(c.d_h);
  for (std::uint64_t r = 0; r < c.page_size; ++r) {
    for (std::size_t j = 0; j < c.d_h; ++j) row[j] = center[j] + c.token_spread * rng.gaussian();
    sink(row);
  }
}

}  // namespace detail

inline std::vector<KVPage> make_context_pages(const ContextParams& c) {
  std::vector<KVPage> pages;
  pages.reserve(c.pages);
  for (std::uint64_t p = 0; p < c.pages; ++p) {
    SplitMix64 rng(derive_seed(c.seed, p));
    KVPage page;
    page.page_id = static_cast<PageId>(p);
    page.start = p * c.page_size;
    page.end = page.start + c.page_size;
    detail::draw_page_keys(c, rng, [&](const Vector& row) { page.keys.append_row(row); });
    for (std::uint64_t r = 0; r < c.page_size; ++r) page.values.append_row(rng.gaussian_vector(c.d_h));
    pages.push_back(std::move(page));
  }
  return pages;
}

inline std::vector<PageDigest> make_context_digests(const ContextParams& c) {
  std::vector<PageDigest> out;
  out.reserve(c.pages);
  for (std::uint64_t p = 0; p < c.pages; ++p) {
    SplitMix64 rng(derive_seed(c.seed, p));
    PageDigest d;
    d.page_id = static_cast<PageId>(p);
    bool first = true;
    detail::draw_page_keys(c, rng, [&](const Vector& row) {
      if (first) {
        d.min_vec = row;
        d.max_vec = row;
        first = false;
        return;
      }
      for (std::size_t j = 0; j < row.size(); ++j) {
        d.min_vec[j] = std::min(d.min_vec[j], row[j]);
        d.max_vec[j] = std::max(d.max_vec[j], row[j]);
      }
    });
    out.push_back(std::move(d));
  }
  return out;
}

enum class Policy { ArkVale, Steady };

struct TraceParams {
  QueryStream stream;
  Policy policy = Policy::ArkVale;
  std::uint64_t capacity_pages = 0;
  std::uint64_t budget_pages = 0;  // Top-K size (ArkVale) or budget set size (Steady)
  std::uint64_t warmup_steps = 1;  // cold-start steps excluded from the mean
  Bytes page_bytes = 0;            // for trace output only
};

struct TraceResult {
  std::vector<std::uint64_t> recalls;  // per step, warm-up included
  double mean_recalls = 0.0;           // over post-warm-up steps
};

inline TraceResult run_trace(const TraceParams& p, std::span<const PageDigest> digests,
                             std::size_t d_h, std::ostream* trace = nullptr) {
  if (p.budget_pages > digests.size())
    throw std::invalid_argument("run_trace: budget exceeds context pages");
  const auto queries = gen_stream(p.stream, d_h);
  ResidencySet P(p.capacity_pages, digests.size());
  TraceResult result;
  std::uint64_t counted = 0, total = 0;
  for (std::uint64_t step = 0; step < queries.size(); ++step) {
    const ScoreList S = select_pages(queries[step], digests, p.budget_pages);
    ReplacementPlan plan = p.policy == Policy::ArkVale ? arkvale_replace(P, S, p.budget_pages)
                                                       : steady_replace(P, S, p.budget_pages);
    plan.recall_bytes = recall_volume(plan, p.page_bytes);
    if (trace) write_trace_line(*trace, step, plan);
    P = apply_plan(P, plan);
    result.recalls.push_back(plan.recall.size());
    if (step >= p.warmup_steps) {
      total += plan.recall.size();
      ++counted;
    }
  }
  result.mean_recalls = counted ? static_cast<double>(total) / static_cast<double>(counted) : 0.0;
  return result;
}

}  // namespace pnmkv
