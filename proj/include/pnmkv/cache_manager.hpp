#pragma once

// On-GPU KV residency: ArkVale-style Top-K replacement, Steady-Select
// replacement, and the bitmask selector that computes the same candidate
// sets with word-wide boolean ops.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "pnmkv/attention_core.hpp"
#include "pnmkv/model_zoo.hpp"

namespace pnmkv {

class Bitmask {
 public:
  Bitmask() = default;
  explicit Bitmask(std::size_t bits) : bits_(bits), words_((bits + 63) / 64, 0) {}

  static Bitmask from_ids(std::size_t bits, std::span<const PageId> ids) {
    Bitmask m(bits);
    for (auto id : ids) m.set(id);
    return m;
  }

  [[nodiscard]] std::size_t size() const { return bits_; }

  void resize(std::size_t bits) {
    bits_ = bits;
    words_.resize((bits + 63) / 64, 0);
    clear_tail();
  }
  void set(std::size_t i, bool v = true) {
    if (i >= bits_) throw std::out_of_range("Bitmask::set: index out of range");
    const std::uint64_t bit = std::uint64_t{1} << (i % 64);
    if (v)
      words_[i / 64] |= bit;
    else
      words_[i / 64] &= ~bit;
  }
  [[nodiscard]] bool test(std::size_t i) const {
    return i < bits_ && ((words_[i / 64] >> (i % 64)) & 1U);
  }
  [[nodiscard]] std::size_t count() const {
    std::size_t n = 0;
    for (auto w : words_) n += static_cast<std::size_t>(std::popcount(w));
    return n;
  }
  [[nodiscard]] bool none() const { return count() == 0; }

  [[nodiscard]] std::vector<PageId> ids() const {
    std::vector<PageId> out;
    for (std::size_t w = 0; w < words_.size(); ++w) {
      std::uint64_t word = words_[w];
      while (word) {
        out.push_back(static_cast<PageId>(w * 64 + std::countr_zero(word)));
        word &= word - 1;
      }
    }
    return out;
  }

  Bitmask operator~() const {
    Bitmask r(*this);
    for (auto& w : r.words_) w = ~w;
    r.clear_tail();
    return r;
  }
  Bitmask operator&(const Bitmask& o) const {
    check_same(o);
    Bitmask r(*this);
    for (std::size_t i = 0; i < words_.size(); ++i) r.words_[i] &= o.words_[i];
    return r;
  }
  friend bool operator==(const Bitmask&, const Bitmask&) = default;

 private:
  void check_same(const Bitmask& o) const {
    if (bits_ != o.bits_) throw std::invalid_argument("Bitmask: length mismatch");
  }
  void clear_tail() {
    if (bits_ % 64 != 0 && !words_.empty())
      words_.back() &= (std::uint64_t{1} << (bits_ % 64)) - 1;
  }

  std::size_t bits_ = 0;
  std::vector<std::uint64_t> words_;
};

// The on-GPU page set P, mirrored as a bitmask over all page ids.
class ResidencySet {
 public:
  explicit ResidencySet(std::size_t capacity, std::size_t universe = 0)
      : capacity_(capacity), mask_(universe) {}

  [[nodiscard]] std::size_t capacity() const { return capacity_; }
  [[nodiscard]] std::size_t size() const { return resident_.size(); }
  [[nodiscard]] std::size_t free_slots() const { return capacity_ - resident_.size(); }
  [[nodiscard]] bool contains(PageId id) const { return resident_.count(id) != 0; }
  [[nodiscard]] const std::set<PageId>& resident() const { return resident_; }
  [[nodiscard]] const Bitmask& bitmask() const { return mask_; }

  // Grow the id universe as decode appends pages.
  void ensure_universe(std::size_t pages) {
    if (pages > mask_.size()) mask_.resize(pages);
  }

  void insert(PageId id) {
    if (resident_.size() >= capacity_) throw std::logic_error("ResidencySet: capacity exceeded");
    if (!resident_.insert(id).second)
      throw std::logic_error("ResidencySet: page " + std::to_string(id) + " already resident");
    ensure_universe(static_cast<std::size_t>(id) + 1);
    mask_.set(id);
  }
  void erase(PageId id) {
    if (resident_.erase(id) == 0)
      throw std::logic_error("ResidencySet: page " + std::to_string(id) + " not resident");
    mask_.set(id, false);
  }

  [[nodiscard]] bool consistent() const {
    if (resident_.size() > capacity_ || mask_.count() != resident_.size()) return false;
    return std::all_of(resident_.begin(), resident_.end(), [&](PageId id) { return mask_.test(id); });
  }

  friend bool operator==(const ResidencySet& a, const ResidencySet& b) {
    return a.capacity_ == b.capacity_ && a.resident_ == b.resident_;
  }

 private:
  std::size_t capacity_;
  std::set<PageId> resident_;
  Bitmask mask_;
};

struct ReplacementPlan {
  std::vector<PageId> evict;
  std::vector<PageId> recall;
  Bytes recall_bytes = 0;

  [[nodiscard]] bool empty() const { return evict.empty() && recall.empty(); }
  friend bool operator==(const ReplacementPlan&, const ReplacementPlan&) = default;
};

struct BudgetConfig {
  Tokens t_budget = 0;
  Tokens t_steady = 0;
  double steady_ratio = 0.0;
};

namespace detail {

// Rank position of each scored page; unscored pages rank after all scored
// ones, ordered by ascending id (so the larger id is evicted first).
class RankOrder {
 public:
  explicit RankOrder(const ScoreList& s) {
    rank_.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) rank_.emplace(s.entries[i].page_id, i);
  }
  [[nodiscard]] bool before(PageId a, PageId b) const {
    const auto ra = rank_.find(a), rb = rank_.find(b);
    const bool sa = ra != rank_.end(), sb = rb != rank_.end();
    if (sa && sb) return ra->second < rb->second;
    if (sa != sb) return sa;
    return a < b;
  }

 private:
  std::unordered_map<PageId, std::size_t> rank_;
};

inline std::unordered_set<PageId> prefix_set(const ScoreList& s, std::size_t n) {
  std::unordered_set<PageId> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n && i < s.size(); ++i) out.insert(s.entries[i].page_id);
  return out;
}

// Members of P outside `keep`, in rank order.
inline std::vector<PageId> outside_in_rank_order(const ResidencySet& P,
                                                 const std::unordered_set<PageId>& keep,
                                                 const RankOrder& order) {
  std::vector<PageId> out;
  for (auto id : P.resident())
    if (!keep.count(id)) out.push_back(id);
  std::sort(out.begin(), out.end(), [&](PageId a, PageId b) { return order.before(a, b); });
  return out;
}

}  // namespace detail

// Keep the full Top-K resident: recall every Top-K page that is missing,
// evicting the lowest-ranked non-Top-K residents once free slots run out.
inline ReplacementPlan arkvale_replace(const ResidencySet& P, const ScoreList& S, std::size_t k) {
  if (k > S.size()) throw std::invalid_argument("arkvale_replace: k exceeds score list length");
  if (P.capacity() < k) throw std::invalid_argument("arkvale_replace: capacity cannot host Top-K");
  ReplacementPlan plan;
  for (std::size_t i = 0; i < k; ++i)
    if (!P.contains(S.entries[i].page_id)) plan.recall.push_back(S.entries[i].page_id);
  const std::size_t overflow = P.size() + plan.recall.size() > P.capacity()
                                   ? P.size() + plan.recall.size() - P.capacity()
                                   : 0;
  if (overflow > 0) {
    const detail::RankOrder order(S);
    auto candidates = detail::outside_in_rank_order(P, detail::prefix_set(S, k), order);
    plan.evict.assign(candidates.end() - static_cast<std::ptrdiff_t>(overflow), candidates.end());
  }
  return plan;
}

// Steady-Select: evict residents that left the budget set, and refill the
// freed (and any empty) slots with the best budget pages not yet resident.
inline ReplacementPlan steady_replace(const ResidencySet& P, const ScoreList& S,
                                      std::size_t budget_pages) {
  if (budget_pages > S.size())
    throw std::invalid_argument("steady_replace: budget exceeds score list length");
  if (budget_pages < P.size())
    throw std::invalid_argument("steady_replace: budget cannot cover residency");
  if (budget_pages < P.capacity())
    throw std::invalid_argument("steady_replace: budget must be >= capacity");
  ReplacementPlan plan;
  const detail::RankOrder order(S);
  plan.evict = detail::outside_in_rank_order(P, detail::prefix_set(S, budget_pages), order);
  const std::size_t want = plan.evict.size() + P.free_slots();
  for (std::size_t i = 0; i < budget_pages && plan.recall.size() < want; ++i)
    if (!P.contains(S.entries[i].page_id)) plan.recall.push_back(S.entries[i].page_id);
  return plan;
}

inline ResidencySet apply_plan(const ResidencySet& P, const ReplacementPlan& plan) {
  ResidencySet next = P;
  for (auto id : plan.evict) {
    if (!next.contains(id))
      throw std::logic_error("apply_plan: evicting non-resident page " + std::to_string(id));
    next.erase(id);
  }
  for (auto id : plan.recall) {
    if (P.contains(id))
      throw std::logic_error("apply_plan: recalling resident page " + std::to_string(id));
    next.insert(id);
  }
  return next;
}

struct SelectorMasks {
  Bitmask evict;
  Bitmask recall;
};

inline SelectorMasks bitmask_select(const Bitmask& topk_mask, const Bitmask& p_mask) {
  if (topk_mask.size() != p_mask.size())
    throw std::invalid_argument("bitmask_select: mask length mismatch");
  return {~topk_mask & p_mask, ~p_mask & topk_mask};
}

// Hardware-style steady selector: masks give the eviction slots, then a
// counter walks the sorted budget list and takes the first recall
// candidates until every eviction (and empty) slot is filled.
inline ReplacementPlan steady_replace_bitmask(const ResidencySet& P, const ScoreList& S,
                                              std::size_t budget_pages, std::size_t universe) {
  if (budget_pages > S.size() || budget_pages < P.capacity())
    throw std::invalid_argument("steady_replace_bitmask: invalid budget");
  Bitmask p_mask(universe);
  for (auto id : P.resident()) p_mask.set(id);
  Bitmask topk(universe);
  for (std::size_t i = 0; i < budget_pages; ++i) topk.set(S.entries[i].page_id);
  const auto masks = bitmask_select(topk, p_mask);
  ReplacementPlan plan;
  const detail::RankOrder order(S);
  plan.evict = masks.evict.ids();
  std::sort(plan.evict.begin(), plan.evict.end(),
            [&](PageId a, PageId b) { return order.before(a, b); });
  const std::size_t want = plan.evict.size() + P.free_slots();
  for (std::size_t i = 0; i < budget_pages && plan.recall.size() < want; ++i)
    if (masks.recall.test(S.entries[i].page_id)) plan.recall.push_back(S.entries[i].page_id);
  return plan;
}

// Largest page-aligned per-sample allotment that fits the whole batch.
inline Tokens steady_capacity(Bytes gpu_free_bytes, const ModelSpec& spec, std::uint64_t batch,
                              std::uint64_t page_size) {
  if (batch == 0) throw std::invalid_argument("steady_capacity: batch must be >= 1");
  if (page_size == 0) throw std::invalid_argument("steady_capacity: page_size must be >= 1");
  const Tokens per_sample = gpu_free_bytes / (batch * kv_bytes_per_token(spec));
  return per_sample / page_size * page_size;
}

inline Bytes recall_volume(const ReplacementPlan& plan, Bytes page_bytes) {
  return plan.recall.size() * page_bytes;
}

// Budget grows with context: max(64 pages, 1/16 of the context pages),
// never more than the context itself.
inline std::uint64_t default_budget_pages(std::uint64_t context_pages) {
  const std::uint64_t b = std::max<std::uint64_t>(64, context_pages / 16);
  return std::min(b, context_pages);
}

inline Tokens round_to_page(double tokens, std::uint64_t page_size) {
  return static_cast<Tokens>(std::llround(tokens / static_cast<double>(page_size))) * page_size;
}

inline BudgetConfig make_budget(Tokens t_budget, double steady_ratio, std::uint64_t page_size,
                                Tokens steady_cap) {
  if (steady_ratio < 0.0 || steady_ratio > 1.0)
    throw std::invalid_argument("make_budget: steady_ratio must lie in [0,1]");
  BudgetConfig b;
  b.t_budget = t_budget;
  b.t_steady = std::min({round_to_page(steady_ratio * static_cast<double>(t_budget), page_size),
                         steady_cap, t_budget});
  b.steady_ratio = t_budget == 0 ? 0.0 : static_cast<double>(b.t_steady) / static_cast<double>(t_budget);
  return b;
}

inline void write_trace_line(std::ostream& os, std::uint64_t step, const ReplacementPlan& plan) {
  os << step << " evict=";
  for (std::size_t i = 0; i < plan.evict.size(); ++i) os << (i ? "," : "") << plan.evict[i];
  os << " recall=";
  for (std::size_t i = 0; i < plan.recall.size(); ++i) os << (i ? "," : "") << plan.recall[i];
  os << " bytes=" << plan.recall_bytes << '\n';
}

}  // namespace pnmkv
