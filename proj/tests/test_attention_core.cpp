#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "pnmkv/attention_core.hpp"

using namespace pnmkv;

namespace {

KVPage page_of(PageId id, const std::vector<Vector>& keys, const std::vector<Vector>& values) {
  KVPage p;
  p.page_id = id;
  p.end = keys.size();
  p.keys = Matrix::from_rows(keys);
  p.values = Matrix::from_rows(values);
  return p;
}

Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  std::normal_distribution<double> n;
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = n(rng);
  return m;
}

}  // namespace

TEST(Partition, PageCounts) {
  std::mt19937_64 rng(1);
  auto k = random_matrix(rng, 5, 3), v = random_matrix(rng, 5, 3);
  auto pages = partition_pages(k, v, 2);
  ASSERT_EQ(pages.size(), 3U);
  EXPECT_EQ(pages[0].size(), 2U);
  EXPECT_EQ(pages[1].size(), 2U);
  EXPECT_EQ(pages[2].size(), 1U);
  EXPECT_EQ(pages[2].start, 4U);
  EXPECT_EQ(pages[2].end, 5U);
  for (std::size_t i = 0; i < pages.size(); ++i) EXPECT_EQ(pages[i].page_id, i);

  EXPECT_TRUE(partition_pages(Matrix{}, Matrix{}, 4).empty());
  auto one = partition_pages(random_matrix(rng, 4, 2), random_matrix(rng, 4, 2), 4);
  ASSERT_EQ(one.size(), 1U);
  EXPECT_EQ(one[0].start, 0U);
  EXPECT_EQ(one[0].end, 4U);

  EXPECT_THROW(partition_pages(random_matrix(rng, 4, 2), random_matrix(rng, 3, 2), 2), std::invalid_argument);
  EXPECT_THROW(partition_pages(k, v, 0), std::invalid_argument);
}

TEST(Digest, MinMax) {
  auto d = make_digest(page_of(0, {{1, -2}, {3, 0}}, {{0, 0}, {0, 0}}));
  EXPECT_EQ(d.min_vec, (Vector{1, -2}));
  EXPECT_EQ(d.max_vec, (Vector{3, 0}));
  auto s = make_digest(page_of(4, {{2, 7}}, {{0, 0}}));
  EXPECT_EQ(s.min_vec, s.max_vec);
  EXPECT_EQ(s.page_id, 4U);
  auto z = make_digest(page_of(0, {{0, 0}, {0, 0}}, {{0, 0}, {0, 0}}));
  EXPECT_EQ(z.min_vec, (Vector{0, 0}));
  EXPECT_EQ(z.max_vec, (Vector{0, 0}));
  EXPECT_THROW(make_digest(KVPage{}), std::invalid_argument);
}

TEST(Digest, Score) {
  PageDigest d{0, {0, 0}, {1, 2}};
  EXPECT_DOUBLE_EQ(score_page(Vector{1, 1}, d), 3.0);
  EXPECT_DOUBLE_EQ(score_page(Vector{0, 0}, d), 0.0);
  PageDigest e{0, {2, 5}, {4, 9}};
  EXPECT_DOUBLE_EQ(score_page(Vector{-1, 0}, e), -2.0);
  EXPECT_THROW(score_page(Vector{1}, d), std::invalid_argument);
}

TEST(TopK, TieBreakAndBounds) {
  std::vector<ScoredPage> s{{0, 5.0}, {1, 5.0}, {2, 1.0}};
  auto r = top_k(s, 2);
  ASSERT_EQ(r.size(), 2U);
  EXPECT_EQ(r.entries[0], (ScoredPage{0, 5.0}));
  EXPECT_EQ(r.entries[1], (ScoredPage{1, 5.0}));
  EXPECT_TRUE(top_k(s, 0).empty());
  auto all = top_k(s, 10);
  EXPECT_EQ(all.ids(), (std::vector<PageId>{0, 1, 2}));
  EXPECT_THROW(top_k({{1, 1.0}, {1, 2.0}}, 1), std::invalid_argument);
}

TEST(TopK, MergeSortMatchesStdSort) {
  std::mt19937_64 rng(3);
  for (int iter = 0; iter < 200; ++iter) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(0, 300)(rng);
    std::vector<ScoredPage> s;
    for (std::size_t i = 0; i < n; ++i) s.push_back({static_cast<PageId>(i), static_cast<double>(rng() % 13)});
    std::shuffle(s.begin(), s.end(), rng);
    auto want = s;
    std::sort(want.begin(), want.end(), ranks_before);
    merge_sort_ranked(s);
    EXPECT_EQ(s, want);
  }
}

TEST(SelectPages, BruteForceRank) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  std::vector<PageDigest> digests;
  for (PageId p = 0; p < 40; ++p) {
    PageDigest d{p, Vector(6), Vector(6)};
    for (int j = 0; j < 6; ++j) {
      double a = n(rng), b = n(rng);
      d.min_vec[j] = std::min(a, b);
      d.max_vec[j] = std::max(a, b);
    }
    digests.push_back(d);
  }
  Vector q(6);
  for (auto& x : q) x = n(rng);
  std::vector<std::pair<double, PageId>> brute;
  for (const auto& d : digests) {
    double lo = 0, hi = 0;
    for (int j = 0; j < 6; ++j) lo += q[j] * d.min_vec[j], hi += q[j] * d.max_vec[j];
    brute.emplace_back(-std::max(lo, hi), d.page_id);
  }
  std::sort(brute.begin(), brute.end());
  auto s = select_pages(q, digests, 10);
  ASSERT_EQ(s.size(), 10U);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(s.entries[i].page_id, brute[i].second);
  EXPECT_EQ(select_pages(q, digests, 40).size(), 40U);
  EXPECT_TRUE(select_pages(q, digests, 0).empty());
}

TEST(Attention, Exact) {
  auto single = page_of(0, {{3, -1}}, {{0.25, 7}});
  std::vector<KVPage> pages{single};
  EXPECT_EQ(attention_exact(Vector{1, 2}, pages, 0.3), (Vector{0.25, 7}));

  auto twin = page_of(0, {{1, 1}, {1, 1}}, {{2, 4}, {6, 0}});
  std::vector<KVPage> tp{twin};
  const auto out = attention_exact(Vector{0.5, -2}, tp, 1.0);
  EXPECT_DOUBLE_EQ(out[0], 4.0);
  EXPECT_DOUBLE_EQ(out[1], 2.0);

  EXPECT_THROW(attention_exact(Vector{1, 2}, std::vector<KVPage>{}, 1.0), std::invalid_argument);
}

TEST(Attention, ExactMatchesBruteForce) {
  std::mt19937_64 rng(11);
  auto pages = partition_pages(random_matrix(rng, 8, 5), random_matrix(rng, 8, 5), 3);
  Vector q{0.3, -1.2, 0.8, 0.1, 2.0};
  std::vector<const KVPage*> ptrs;
  for (const auto& p : pages) ptrs.push_back(&p);
  const auto got = attention_exact(q, pages, default_scale(5));
  const auto want = oracle::softmax_attention(q, oracle::tokens_of(ptrs), default_scale(5));
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(got[j], want[j], 1e-13);
}

TEST(Attention, PartialBasics) {
  const auto empty = attention_partial(Vector{1, 2}, std::vector<KVPage>{}, 1.0);
  EXPECT_TRUE(empty.is_empty());
  EXPECT_EQ(empty.m, -std::numeric_limits<double>::infinity());
  EXPECT_EQ(empty.out, (Vector{0, 0}));

  std::vector<KVPage> one{page_of(0, {{2, 1}}, {{5, -3}})};
  const auto p = attention_partial(Vector{1, 1}, one, 0.5);
  EXPECT_DOUBLE_EQ(p.m, 1.5);
  EXPECT_DOUBLE_EQ(p.l, 1.0);
  EXPECT_EQ(p.out, (Vector{5, -3}));
  EXPECT_EQ(finalize(p), (Vector{5, -3}));
  EXPECT_THROW(finalize(empty), std::domain_error);
}

TEST(Attention, MergeIdentityAndFullSet) {
  std::mt19937_64 rng(13);
  auto pages = partition_pages(random_matrix(rng, 20, 4), random_matrix(rng, 20, 4), 4);
  Vector q{1, -0.5, 0.25, 2};
  const auto full = attention_partial(q, pages, 0.5);
  const auto id = AttentionPartial<>::identity(4);
  const auto m1 = merge_partials(full, id);
  const auto m2 = merge_partials(id, full);
  EXPECT_EQ(m1.out, full.out);
  EXPECT_EQ(m2.out, full.out);
  EXPECT_EQ(m1.l, full.l);
  const auto want = attention_exact(q, pages, 0.5);
  const auto got = finalize(full);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(got[j], want[j], 1e-12);
  EXPECT_TRUE(merge_partials(id, id).is_empty());
  EXPECT_THROW(merge_partials(id, AttentionPartial<>::identity(3)), std::invalid_argument);
}

TEST(Attention, SinglePrecisionPartial) {
  std::mt19937_64 rng(17);
  auto pages = partition_pages(random_matrix(rng, 64, 16), random_matrix(rng, 64, 16), 8);
  Vector q(16, 0.2);
  const auto lo = finalize(attention_partial<float>(q, pages, 0.25));
  const auto hi = attention_exact(q, pages, 0.25);
  for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(lo[j], hi[j], 1e-4 * std::max(1.0, std::fabs(hi[j])));
}

TEST(Attention, GroupQueryMean) {
  std::vector<Vector> heads{{1, 2}, {3, 6}};
  EXPECT_EQ(group_query(heads), (Vector{2, 4}));
  EXPECT_THROW(group_query(std::vector<Vector>{}), std::invalid_argument);
}

TEST(Dump, Formats) {
  std::ostringstream os;
  dump_digest(os, PageDigest{3, {1, -2}, {4, 5}});
  EXPECT_EQ(os.str(), "page 3 min=[1,-2] max=[4,5]\n");
  std::ostringstream ss;
  dump_scores(ss, ScoreList{{{7, 0.5}, {2, 0.25}}});
  EXPECT_EQ(ss.str(), "0 7 0.5\n1 2 0.25\n");
}
