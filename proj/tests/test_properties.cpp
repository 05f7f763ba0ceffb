#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "oracles.hpp"
#include "pnmkv/pnmkv.hpp"

using namespace pnmkv;

namespace {

std::vector<KVPage> random_pages(std::mt19937_64& rng, std::size_t tokens, std::size_t d, std::size_t page) {
  std::normal_distribution<double> n(0.0, 1.5);
  Matrix k(tokens, d), v(tokens, d);
  for (std::size_t r = 0; r < tokens; ++r)
    for (std::size_t c = 0; c < d; ++c) k(r, c) = n(rng), v(r, c) = n(rng);
  return partition_pages(k, v, page);
}

Vector random_vec(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> n;
  Vector q(d);
  for (auto& x : q) x = n(rng);
  return q;
}

double rel_err(const Vector& a, const Vector& b) {
  double diff = 0, scale = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    diff = std::max(diff, std::fabs(a[j] - b[j]));
    scale = std::max(scale, std::fabs(b[j]));
  }
  return diff / std::max(scale, 1e-300);
}

}  // namespace

TEST(Property, KvCacheLinear) {
  std::mt19937_64 rng(1);
  for (const auto& s : builtin_specs())
    for (int i = 0; i < 100; ++i) {
      const std::uint64_t b = rng() % 512, t = rng() % (1 << 22);
      EXPECT_EQ(kv_cache_bytes(s, b, t), b * t * kv_bytes_per_token(s));
      EXPECT_EQ(kv_cache_bytes(s, 2 * b, t), 2 * kv_cache_bytes(s, b, t));
      EXPECT_EQ(kv_cache_bytes(s, b, 3 * t), 3 * kv_cache_bytes(s, b, t));
    }
}

TEST(Property, DigestContainmentAndUpperBound) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 2.0);
  for (int iter = 0; iter < 300; ++iter) {
    const std::size_t d = 1 + rng() % 32;
    for (const auto& p : random_pages(rng, 1 + rng() % 64, d, 1 + rng() % 16)) {
      const auto dg = make_digest(p);
      Vector q(d);
      for (auto& x : q) x = u(rng);
      const double s = score_page(q, dg);
      for (std::size_t r = 0; r < p.size(); ++r) {
        const auto key = p.keys.row(r);
        double dot = 0;
        for (std::size_t j = 0; j < d; ++j) {
          ASSERT_LE(dg.min_vec[j], key[j]);
          ASSERT_LE(key[j], dg.max_vec[j]);
          dot += q[j] * key[j];
        }
        ASSERT_LE(dot, s + 1e-12 * std::max(1.0, std::fabs(s)));
      }
    }
  }
}

TEST(Property, MergeExactCommutativeAssociative) {
  std::mt19937_64 rng(3);
  for (int iter = 0; iter < 200; ++iter) {
    const std::size_t d = 1 + rng() % 64;
    const auto pages = random_pages(rng, 3 + rng() % 200, d, 1 + rng() % 16);
    const auto q = random_vec(rng, d);
    const double scale = default_scale(d);
    std::vector<const KVPage*> a, b, c;
    for (const auto& p : pages) (rng() % 3 == 0 ? a : rng() % 2 ? b : c).push_back(&p);
    const auto pa = attention_partial(q, a, scale), pb = attention_partial(q, b, scale),
               pc = attention_partial(q, c, scale);
    const auto want = attention_exact(q, pages, scale);
    EXPECT_LE(rel_err(finalize(merge_partials(merge_partials(pa, pb), pc)), want), 1e-10);
    const auto ab = merge_partials(pa, pb), ba = merge_partials(pb, pa);
    if (!ab.is_empty()) {
      EXPECT_LE(rel_err(finalize(ab), finalize(ba)), 1e-12);
    }
    const auto left = finalize(merge_partials(merge_partials(pa, pb), pc));
    const auto right = finalize(merge_partials(pa, merge_partials(pb, pc)));
    EXPECT_LE(rel_err(left, right), 1e-12);
  }
}

TEST(Property, AttentionInValueHull) {
  std::mt19937_64 rng(4);
  for (int iter = 0; iter < 200; ++iter) {
    const std::size_t d = 1 + rng() % 16;
    const auto pages = random_pages(rng, 1 + rng() % 50, d, 4);
    const auto out = attention_exact(random_vec(rng, d), pages, 1.0);
    for (std::size_t j = 0; j < d; ++j) {
      double lo = INFINITY, hi = -INFINITY;
      for (const auto& p : pages)
        for (std::size_t r = 0; r < p.size(); ++r) lo = std::min(lo, p.values(r, j)), hi = std::max(hi, p.values(r, j));
      EXPECT_GE(out[j], lo - 1e-12);
      EXPECT_LE(out[j], hi + 1e-12);
    }
  }
}

TEST(Property, TopKPermutationInvariant) {
  std::mt19937_64 rng(5);
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<ScoredPage> s;
    const std::size_t n = rng() % 100;
    for (std::size_t i = 0; i < n; ++i) s.push_back({static_cast<PageId>(i * 3), static_cast<double>(rng() % 5)});
    const std::size_t k = rng() % (n + 2);
    const auto ref = top_k(s, k);
    std::shuffle(s.begin(), s.end(), rng);
    EXPECT_EQ(top_k(s, k), ref);
    for (std::size_t i = 1; i < ref.size(); ++i) EXPECT_TRUE(ranks_before(ref.entries[i - 1], ref.entries[i]));
  }
}

TEST(Property, BitmaskMatchesSets) {
  std::mt19937_64 rng(6);
  for (int iter = 0; iter < 1000; ++iter) {
    const std::size_t n = 1 + rng() % 200;
    std::set<PageId> t, p;
    Bitmask tm(n), pm(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (rng() % 3 == 0) t.insert(static_cast<PageId>(i)), tm.set(i);
      if (rng() % 3 == 0) p.insert(static_cast<PageId>(i)), pm.set(i);
    }
    std::vector<PageId> ev, rc;
    std::set_difference(p.begin(), p.end(), t.begin(), t.end(), std::back_inserter(ev));
    std::set_difference(t.begin(), t.end(), p.begin(), p.end(), std::back_inserter(rc));
    const auto m = bitmask_select(tm, pm);
    EXPECT_EQ(m.evict.ids(), ev);
    EXPECT_EQ(m.recall.ids(), rc);
  }
}

TEST(Property, ReplacementPostconditions) {
  std::mt19937_64 rng(7);
  for (int iter = 0; iter < 1000; ++iter) {
    const std::size_t universe = 8 + rng() % 64;
    const auto S = oracle::random_scores(rng, universe, universe);
    const std::size_t cap = 1 + rng() % universe;
    ResidencySet P(cap, universe);
    std::vector<PageId> ids(universe);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t fill = rng() % (cap + 1);
    for (std::size_t i = 0; i < fill; ++i) P.insert(ids[i]);

    const std::size_t k = rng() % (cap + 1);
    const auto ap = arkvale_replace(P, S, k);
    const auto an = apply_plan(P, ap);
    EXPECT_TRUE(an.consistent());
    EXPECT_LE(an.size(), cap);
    for (std::size_t i = 0; i < k; ++i) EXPECT_TRUE(an.contains(S.entries[i].page_id));
    if (P.size() == cap) {
      EXPECT_EQ(ap.evict.size(), ap.recall.size());
    }

    const std::size_t budget = cap + rng() % (universe - cap + 1);
    const auto sp = steady_replace(P, S, budget);
    EXPECT_LE(sp.recall.size(), cap);
    const auto sn = apply_plan(P, sp);
    EXPECT_TRUE(sn.consistent());
    EXPECT_EQ(sn.size(), cap);
    std::set<PageId> prefix;
    for (std::size_t i = 0; i < budget; ++i) prefix.insert(S.entries[i].page_id);
    for (auto id : sn.resident()) EXPECT_TRUE(prefix.count(id));
    for (auto id : sp.evict) EXPECT_EQ(std::count(sp.recall.begin(), sp.recall.end(), id), 0);
  }
}

TEST(Property, DpAssignBalancedPartition) {
  std::mt19937_64 rng(8);
  for (int iter = 0; iter < 300; ++iter) {
    const std::size_t b = rng() % 200;
    const std::uint64_t n = 1 + rng() % 16;
    std::vector<std::uint64_t> ids(b);
    std::iota(ids.begin(), ids.end(), 100);
    const auto a = dp_assign(ids, n);
    std::vector<std::uint64_t> all;
    std::size_t lo = SIZE_MAX, hi = 0;
    for (const auto& part : a) {
      all.insert(all.end(), part.begin(), part.end());
      lo = std::min(lo, part.size());
      hi = std::max(hi, part.size());
    }
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, ids);
    EXPECT_LE(hi - lo, 1U);
  }
}

TEST(Property, ActivationIndependentOfContext) {
  // The signature takes no context; check the 8B value at two batch sizes
  // against runs at very different contexts.
  const auto& s = *find_builtin_spec("Llama3.1-8B");
  auto c = make_cluster(builtin_devices().at("A100-80GB"), 1, builtin_devices().at("CXL-PNM"), 2, Mode::PNM_KV);
  BudgetConfig budget{2048, 0, 0};
  const auto a = step_latency(c, s, 4, 131072, budget, {});
  const auto b = step_latency(c, s, 4, 1048576, budget, {});
  EXPECT_EQ(a.comm_s, b.comm_s);
}

TEST(Property, PerfTotalsCoverComponents) {
  const auto d = builtin_devices();
  PerfParams p;
  p.recall_source = RecallSource::Analytic;
  for (auto mode : {Mode::Baseline, Mode::PNM_KV, Mode::PnG_KV})
    for (std::uint64_t n = 1; n <= 4; ++n)
      for (Tokens ctx : {32768ULL, 131072ULL}) {
        auto r = run(make_cluster(d.at("A100-80GB"), 1, d.at("CXL-PNM"), n, mode), *find_builtin_spec("Llama3.1-8B"),
                     ctx, 0, p);
        ASSERT_EQ(r.status, RunStatus::Ok);
        const auto& b = r.breakdown;
        for (double c : {b.fc_s, b.attention_s, b.recall_s, b.topk_s, b.comm_s}) {
          EXPECT_GE(c, 0.0);
          EXPECT_GE(b.total_s, c);
        }
        EXPECT_TRUE(std::isfinite(r.throughput) && r.throughput > 0);
        EXPECT_TRUE(std::isfinite(r.energy_per_token) && r.energy_per_token > 0);
        EXPECT_TRUE(std::isfinite(r.tokens_per_dollar) && r.tokens_per_dollar > 0);
      }
}
