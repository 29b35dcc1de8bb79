#pragma once

// Embedding algebra, similarity ranking and rank-correlation statistics.
// Everything here is a pure function over immutable inputs; no shared state.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace matterrank::embedcore {

// Fixed-dimension real-valued embedding. 768 for the supported encoders, but
// nothing below assumes that.
class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t dim) : values_(dim, 0.0) {}
  explicit Vector(std::vector<double> values) : values_(std::move(values)) {}
  Vector(std::initializer_list<double> init) : values_(init) {}

  std::size_t dim() const { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  const double& operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }

  auto begin() { return values_.begin(); }
  auto end() { return values_.end(); }
  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(),
                       [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Vector& a, const Vector& b) {
    return a.values_ == b.values_;
  }

 private:
  std::vector<double> values_;
};

// Material name + formula + experimental property value (zT) + gold rank.
// gold_rank 1 is the highest experimental value.
struct MaterialRecord {
  std::string name;
  std::string formula;
  double experimental_value = 0.0;
  int gold_rank = 0;
};

struct RankedEntry {
  std::string key;
  double score = 0.0;
  int position = 0;  // 1-based, 1 = most similar
};

struct RankedList {
  std::vector<RankedEntry> entries;
};

struct CorrelationReport {
  double rho = 0.0;
  std::size_t n = 0;
  std::string label;
};

inline double dot(const Vector& a, const Vector& b) {
  if (a.dim() != b.dim())
    throw std::invalid_argument("dot: dimension mismatch (" +
                                std::to_string(a.dim()) + " vs " +
                                std::to_string(b.dim()) + ")");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) sum += a[i] * b[i];
  return sum;
}

inline double norm(const Vector& a) { return std::sqrt(dot(a, a)); }

// Component-wise arithmetic mean. All inputs must share one dimension.
inline Vector mean_vectors(std::span<const Vector> vs) {
  if (vs.empty()) throw std::invalid_argument("mean_vectors: empty input");
  const std::size_t dim = vs.front().dim();
  if (dim == 0) throw std::invalid_argument("mean_vectors: zero-dim input");
  Vector out(dim);
  for (const Vector& v : vs) {
    if (v.dim() != dim)
      throw std::invalid_argument(
          "mean_vectors: mixed dimensions (" + std::to_string(dim) + " vs " +
          std::to_string(v.dim()) + ")");
    for (std::size_t i = 0; i < dim; ++i) out[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(vs.size());
  for (std::size_t i = 0; i < dim; ++i) out[i] *= inv;
  return out;
}

inline Vector mean_vectors(const std::vector<Vector>& vs) {
  return mean_vectors(std::span<const Vector>(vs));
}

// dot(a,b)/(|a||b|), clamped to [-1,1] against round-off.
inline double cosine_similarity(const Vector& a, const Vector& b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0)
    throw std::invalid_argument("cosine_similarity: first operand has zero norm");
  if (nb == 0.0)
    throw std::invalid_argument(
        "cosine_similarity: second operand has zero norm");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

// Entries sorted by cosine similarity to `center`, descending; ties broken by
// ascending lexicographic key so outputs are reproducible.
inline RankedList rank_by_similarity(const Vector& center,
                                     const std::map<std::string, Vector>& items) {
  if (items.empty())
    throw std::invalid_argument("rank_by_similarity: no items");
  std::string bad;
  for (const auto& [key, v] : items) {
    if (v.dim() != center.dim()) bad += bad.empty() ? key : ", " + key;
  }
  if (!bad.empty())
    throw std::invalid_argument("rank_by_similarity: dimension mismatch for: " +
                                bad);
  RankedList out;
  out.entries.reserve(items.size());
  for (const auto& [key, v] : items)
    out.entries.push_back({key, cosine_similarity(center, v), 0});
  std::sort(out.entries.begin(), out.entries.end(),
            [](const RankedEntry& a, const RankedEntry& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.key < b.key;
            });
  for (std::size_t i = 0; i < out.entries.size(); ++i)
    out.entries[i].position = static_cast<int>(i + 1);
  return out;
}

// Average ranks with ties: highest score gets rank 1; equal scores share the
// mean of the positions they occupy.
inline std::vector<double> to_rank_positions(std::span<const double> scores) {
  if (scores.empty())
    throw std::invalid_argument("to_rank_positions: empty input");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    // Positions i+1 .. j+1 share one averaged rank.
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline std::vector<double> to_rank_positions(const std::vector<double>& scores) {
  return to_rank_positions(std::span<const double>(scores));
}

// Spearman rank correlation with average-rank tie handling: Pearson
// correlation of the two rank sequences. For tie-free inputs this equals
// 1 - 6*sum(d^2)/(n(n^2-1)).
inline CorrelationReport spearman(std::span<const double> a,
                                  std::span<const double> b,
                                  std::string label = "") {
  if (a.size() != b.size())
    throw std::invalid_argument("spearman: length mismatch (" +
                                std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()) + ")");
  if (a.size() < 2)
    throw std::invalid_argument("spearman: need at least 2 samples");
  const std::vector<double> ra = to_rank_positions(a);
  const std::vector<double> rb = to_rank_positions(b);
  const std::size_t n = ra.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = ra[i] - ma;
    const double db = rb[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  if (va == 0.0 || vb == 0.0)
    throw std::invalid_argument(
        "spearman: zero variance in " +
        std::string(va == 0.0 ? "first" : "second") +
        " sequence, rho undefined");
  const double rho = std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
  return {rho, n, std::move(label)};
}

inline CorrelationReport spearman(const std::vector<double>& a,
                                  const std::vector<double>& b,
                                  std::string label = "") {
  return spearman(std::span<const double>(a), std::span<const double>(b),
                  std::move(label));
}

// Assign gold ranks: rank 1 = highest experimental value; exact value ties
// are broken by ascending name so the rank stays a permutation of 1..N.
inline void derive_gold_ranks(std::vector<MaterialRecord>& records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (records[x].experimental_value != records[y].experimental_value)
      return records[x].experimental_value > records[y].experimental_value;
    return records[x].name < records[y].name;
  });
  for (std::size_t i = 0; i < order.size(); ++i)
    records[order[i]].gold_rank = static_cast<int>(i + 1);
}

}  // namespace matterrank::embedcore
