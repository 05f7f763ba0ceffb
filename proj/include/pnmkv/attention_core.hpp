#pragma once

// Functional decode-step attention over paged KV: digests, digest scoring,
// Top-K page selection, exact attention, and online-softmax partials that
// can be computed on separate devices and merged afterwards.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <ostream>
#include <span>
#include <stdexcept>
#include <unordered_set>
#include <vector>

namespace pnmkv {

using PageId = std::uint32_t;
using Vector = std::vector<double>;

// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }
  [[nodiscard]] bool empty() const { return rows_ == 0; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  [[nodiscard]] std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  void append_row(std::span<const double> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) throw std::invalid_argument("Matrix::append_row: width mismatch");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  static Matrix from_rows(const std::vector<Vector>& rows) {
    Matrix m;
    for (const auto& r : rows) m.append_row(r);
    return m;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct KVPage {
  PageId page_id = 0;
  std::uint64_t start = 0;  // token range [start, end)
  std::uint64_t end = 0;
  Matrix keys;
  Matrix values;

  [[nodiscard]] std::size_t size() const { return keys.rows(); }
  [[nodiscard]] std::size_t dim() const { return keys.cols(); }
};

struct PageDigest {
  PageId page_id = 0;
  Vector min_vec;
  Vector max_vec;
};

struct ScoredPage {
  PageId page_id = 0;
  double score = 0.0;
  friend bool operator==(const ScoredPage&, const ScoredPage&) = default;
};

// Total order used everywhere a ranking is needed: higher score first,
// smaller page id on ties.
constexpr bool ranks_before(const ScoredPage& a, const ScoredPage& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.page_id < b.page_id;
}

struct ScoreList {
  std::vector<ScoredPage> entries;

  [[nodiscard]] std::size_t size() const { return entries.size(); }
  [[nodiscard]] bool empty() const { return entries.empty(); }
  [[nodiscard]] std::vector<PageId> ids() const {
    std::vector<PageId> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.page_id);
    return out;
  }
  friend bool operator==(const ScoreList&, const ScoreList&) = default;
};

// Online-softmax state: `out` is the accumulator rescaled to the running
// max `m`; `l` is the running sum of exp(logit - m). An empty partial has
// l = 0, m = -inf, out = 0.
template <std::floating_point Real = double>
struct AttentionPartial {
  std::vector<Real> out;
  Real m = -std::numeric_limits<Real>::infinity();
  Real l = 0;

  static AttentionPartial identity(std::size_t dim) {
    AttentionPartial p;
    p.out.assign(dim, Real{0});
    return p;
  }
  [[nodiscard]] bool is_empty() const { return l == Real{0}; }
};

namespace detail {

inline const KVPage& deref(const KVPage& p) { return p; }
inline const KVPage& deref(const KVPage* p) { return *p; }

template <typename A, typename B>
double dot(const A& a, const B& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// exp(x - m) with exp(-inf - anything) == 0 exactly.
template <std::floating_point Real>
Real rescale(Real x, Real m) {
  if (x == -std::numeric_limits<Real>::infinity()) return Real{0};
  return std::exp(x - m);
}

}  // namespace detail

template <typename R>
concept PageRange = std::ranges::input_range<R> && requires(std::ranges::range_reference_t<R> p) {
  { detail::deref(p) } -> std::same_as<const KVPage&>;
};

inline std::vector<KVPage> partition_pages(const Matrix& keys, const Matrix& values,
                                           std::size_t page_size) {
  if (page_size == 0) throw std::invalid_argument("partition_pages: page_size must be >= 1");
  if (keys.rows() != values.rows() || (keys.rows() > 0 && keys.cols() != values.cols()))
    throw std::invalid_argument("partition_pages: keys/values shape mismatch");
  std::vector<KVPage> pages;
  const std::size_t total = keys.rows();
  for (std::size_t start = 0; start < total; start += page_size) {
    const std::size_t end = std::min(total, start + page_size);
    KVPage page;
    page.page_id = static_cast<PageId>(pages.size());
    page.start = start;
    page.end = end;
    for (std::size_t r = start; r < end; ++r) {
      page.keys.append_row(keys.row(r));
      page.values.append_row(values.row(r));
    }
    pages.push_back(std::move(page));
  }
  return pages;
}

inline PageDigest make_digest(const KVPage& page) {
  if (page.keys.empty()) throw std::invalid_argument("make_digest: empty page");
  PageDigest d;
  d.page_id = page.page_id;
  const auto first = page.keys.row(0);
  d.min_vec.assign(first.begin(), first.end());
  d.max_vec.assign(first.begin(), first.end());
  for (std::size_t r = 1; r < page.keys.rows(); ++r) {
    const auto row = page.keys.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) {
      d.min_vec[j] = std::min(d.min_vec[j], row[j]);
      d.max_vec[j] = std::max(d.max_vec[j], row[j]);
    }
  }
  return d;
}

// Larger of the two digest inner products. Only an upper bound on the
// in-page token scores when the query is elementwise non-negative.
inline double score_page(std::span<const double> query, const PageDigest& digest) {
  if (query.size() != digest.min_vec.size() || query.size() != digest.max_vec.size())
    throw std::invalid_argument("score_page: dimension mismatch");
  return std::max(detail::dot(query, digest.min_vec), detail::dot(query, digest.max_vec));
}

// Bottom-up merge sort under ranks_before. Each pass merges independent
// runs, so the passes map directly onto a parallel sorter.
inline void merge_sort_ranked(std::vector<ScoredPage>& items) {
  const std::size_t n = items.size();
  std::vector<ScoredPage> scratch(n);
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo < n; lo += 2 * width) {
      const std::size_t mid = std::min(lo + width, n);
      const std::size_t hi = std::min(lo + 2 * width, n);
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) scratch[k++] = ranks_before(items[j], items[i]) ? items[j++] : items[i++];
      while (i < mid) scratch[k++] = items[i++];
      while (j < hi) scratch[k++] = items[j++];
    }
    items.swap(scratch);
  }
}

inline ScoreList top_k(std::vector<ScoredPage> scores, std::size_t k) {
  std::unordered_set<PageId> seen;
  seen.reserve(scores.size());
  for (const auto& s : scores)
    if (!seen.insert(s.page_id).second)
      throw std::invalid_argument("top_k: duplicate page id " + std::to_string(s.page_id));
  merge_sort_ranked(scores);
  if (k < scores.size()) scores.resize(k);
  return ScoreList{std::move(scores)};
}

inline ScoreList select_pages(std::span<const double> query, std::span<const PageDigest> digests,
                              std::size_t budget_pages) {
  std::vector<ScoredPage> scores;
  scores.reserve(digests.size());
  for (const auto& d : digests) scores.push_back({d.page_id, score_page(query, d)});
  return top_k(std::move(scores), budget_pages);
}

// Selecting query for a KV head shared by a group of query heads.
inline Vector group_query(std::span<const Vector> head_queries) {
  if (head_queries.empty()) throw std::invalid_argument("group_query: no query heads");
  Vector mean(head_queries.front().size(), 0.0);
  for (const auto& q : head_queries) {
    if (q.size() != mean.size()) throw std::invalid_argument("group_query: dimension mismatch");
    for (std::size_t j = 0; j < q.size(); ++j) mean[j] += q[j];
  }
  for (auto& v : mean) v /= static_cast<double>(head_queries.size());
  return mean;
}

inline double default_scale(std::size_t d_h) { return 1.0 / std::sqrt(static_cast<double>(d_h)); }

// Reference: materialize all logits, softmax, weighted sum of values.
template <PageRange Pages>
Vector attention_exact(std::span<const double> query, const Pages& pages, double scale) {
  std::vector<double> logits;
  std::vector<std::span<const double>> value_rows;
  for (const auto& p : pages) {
    const KVPage& page = detail::deref(p);
    if (page.keys.rows() > 0 && (page.dim() != query.size() || page.values.cols() != query.size()))
      throw std::invalid_argument("attention_exact: dimension mismatch");
    for (std::size_t r = 0; r < page.keys.rows(); ++r) {
      logits.push_back(scale * detail::dot(query, page.keys.row(r)));
      value_rows.push_back(page.values.row(r));
    }
  }
  if (logits.empty()) throw std::invalid_argument("attention_exact: zero tokens");
  const double m = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  for (auto& z : logits) {
    z = std::exp(z - m);
    denom += z;
  }
  Vector out(query.size(), 0.0);
  for (std::size_t t = 0; t < logits.size(); ++t) {
    const double w = logits[t] / denom;
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += w * value_rows[t][j];
  }
  return out;
}

template <std::floating_point Real = double, PageRange Pages>
AttentionPartial<Real> attention_partial(std::span<const double> query, const Pages& pages,
                                         double scale) {
  const std::size_t dim = query.size();
  auto acc = AttentionPartial<Real>::identity(dim);
  std::vector<Real> q(query.begin(), query.end());
  const Real s = static_cast<Real>(scale);
  for (const auto& p : pages) {
    const KVPage& page = detail::deref(p);
    if (page.keys.rows() > 0 && (page.dim() != dim || page.values.cols() != dim))
      throw std::invalid_argument("attention_partial: dimension mismatch");
    for (std::size_t r = 0; r < page.keys.rows(); ++r) {
      const auto key = page.keys.row(r);
      Real z = 0;
      for (std::size_t j = 0; j < dim; ++j) z += q[j] * static_cast<Real>(key[j]);
      z *= s;
      const auto value = page.values.row(r);
      if (z > acc.m) {
        const Real shrink = detail::rescale(acc.m, z);
        for (auto& o : acc.out) o *= shrink;
        acc.l = acc.l * shrink + Real{1};
        acc.m = z;
        for (std::size_t j = 0; j < dim; ++j) acc.out[j] += static_cast<Real>(value[j]);
      } else {
        const Real w = std::exp(z - acc.m);
        acc.l += w;
        for (std::size_t j = 0; j < dim; ++j) acc.out[j] += w * static_cast<Real>(value[j]);
      }
    }
  }
  return acc;
}

template <std::floating_point Real>
AttentionPartial<Real> merge_partials(const AttentionPartial<Real>& a,
                                      const AttentionPartial<Real>& b) {
  if (a.out.size() != b.out.size()) throw std::invalid_argument("merge_partials: dimension mismatch");
  if (a.is_empty()) return b;
  if (b.is_empty()) return a;
  AttentionPartial<Real> r;
  r.m = std::max(a.m, b.m);
  const Real wa = detail::rescale(a.m, r.m);
  const Real wb = detail::rescale(b.m, r.m);
  r.l = a.l * wa + b.l * wb;
  r.out.resize(a.out.size());
  for (std::size_t j = 0; j < r.out.size(); ++j) r.out[j] = a.out[j] * wa + b.out[j] * wb;
  return r;
}

template <std::floating_point Real>
std::vector<Real> finalize(const AttentionPartial<Real>& p) {
  if (!(p.l > Real{0})) throw std::domain_error("finalize: no tokens attended");
  std::vector<Real> out(p.out);
  for (auto& v : out) v /= p.l;
  return out;
}

// Text dumps for test triage.
inline void dump_digest(std::ostream& os, const PageDigest& d) {
  os << "page " << d.page_id << " min=[";
  for (std::size_t j = 0; j < d.min_vec.size(); ++j) os << (j ? "," : "") << d.min_vec[j];
  os << "] max=[";
  for (std::size_t j = 0; j < d.max_vec.size(); ++j) os << (j ? "," : "") << d.max_vec[j];
  os << "]\n";
}

inline void dump_scores(std::ostream& os, const ScoreList& s) {
  const auto flags = os.flags();
  os << std::setprecision(17);
  for (std::size_t i = 0; i < s.entries.size(); ++i)
    os << i << ' ' << s.entries[i].page_id << ' ' << s.entries[i].score << '\n';
  os.flags(flags);
}

}  // namespace pnmkv
