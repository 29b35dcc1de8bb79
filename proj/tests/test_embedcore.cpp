#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "matterrank/embedcore.hpp"
#include "matterrank/rng.hpp"

using namespace matterrank;
using embedcore::Vector;

namespace {

Vector random_vector(rng::SplitMix& gen, std::size_t dim) {
  std::vector<double> v(dim);
  for (auto& x : v) x = gen.next_double() * 4.0 - 2.0;
  return Vector(std::move(v));
}

// Independent oracle: long-double accumulate, then divide.
std::vector<double> naive_mean(const std::vector<Vector>& vs) {
  std::vector<long double> acc(vs.front().dim(), 0.0L);
  for (const auto& v : vs)
    for (std::size_t i = 0; i < v.dim(); ++i) acc[i] += v[i];
  std::vector<double> out(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i)
    out[i] = static_cast<double>(acc[i] / static_cast<long double>(vs.size()));
  return out;
}

// Independent ranking oracle: rank of x = (# strictly greater) + (1 + #equal)/2.
std::vector<double> counting_ranks(const std::vector<double>& scores) {
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    std::size_t greater = 0, equal = 0;
    for (double s : scores) {
      if (s > scores[i]) ++greater;
      if (s == scores[i]) ++equal;
    }
    out[i] = static_cast<double>(greater) + (1.0 + static_cast<double>(equal)) / 2.0;
  }
  return out;
}

// Independent Spearman oracle via rank covariance.
double spearman_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = counting_ranks(a);
  const auto rb = counting_ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

}  // namespace

TEST_CASE("mean_vectors basic cases") {
  CHECK(embedcore::mean_vectors({Vector{1, 1}, Vector{3, 3}}) == Vector{2, 2});
  CHECK(embedcore::mean_vectors({Vector{5, -2}}) == Vector{5, -2});
  CHECK_THROWS_AS(embedcore::mean_vectors(std::vector<Vector>{}),
                  std::invalid_argument);
  CHECK_THROWS_AS(embedcore::mean_vectors({Vector{1, 2}, Vector{1, 2, 3}}),
                  std::invalid_argument);
}

TEST_CASE("mean_vectors matches accumulate-then-divide oracle") {
  rng::SplitMix gen(101);
  std::vector<Vector> vs;
  for (int i = 0; i < 100; ++i) vs.push_back(random_vector(gen, 32));
  const Vector got = embedcore::mean_vectors(vs);
  const auto want = naive_mean(vs);
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(std::abs(got[i] - want[i]) < 1e-12);
}

TEST_CASE("mean_vectors is permutation-invariant and idempotent on copies") {
  rng::SplitMix gen(7);
  std::vector<Vector> vs;
  for (int i = 0; i < 9; ++i) vs.push_back(random_vector(gen, 6));
  const Vector base = embedcore::mean_vectors(vs);
  std::vector<Vector> shuffled = vs;
  std::vector<std::size_t> idx(vs.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  rng::shuffle_indices(idx, 99);
  for (std::size_t i = 0; i < idx.size(); ++i) shuffled[i] = vs[idx[i]];
  const Vector perm = embedcore::mean_vectors(shuffled);
  for (std::size_t i = 0; i < base.dim(); ++i)
    CHECK(perm[i] == Catch::Approx(base[i]).margin(1e-12));

  const Vector v = random_vector(gen, 5);
  const Vector rep = embedcore::mean_vectors({v, v, v, v});
  for (std::size_t i = 0; i < v.dim(); ++i)
    CHECK(rep[i] == Catch::Approx(v[i]).margin(1e-12));
}

TEST_CASE("cosine_similarity basic and derived values") {
  CHECK(embedcore::cosine_similarity(Vector{1, 0}, Vector{1, 0}) == 1.0);
  CHECK(embedcore::cosine_similarity(Vector{1, 0}, Vector{0, 1}) == 0.0);
  CHECK(embedcore::cosine_similarity(Vector{1, 2, 3}, Vector{4, 5, 6}) ==
        Catch::Approx(0.9746318).margin(1e-6));
  CHECK_THROWS_WITH(embedcore::cosine_similarity(Vector{0, 0}, Vector{1, 0}),
                    Catch::Matchers::ContainsSubstring("first operand"));
  CHECK_THROWS_WITH(embedcore::cosine_similarity(Vector{1, 0}, Vector{0, 0}),
                    Catch::Matchers::ContainsSubstring("second operand"));
}

TEST_CASE("cosine_similarity scaling identities") {
  rng::SplitMix gen(5);
  for (int trial = 0; trial < 20; ++trial) {
    Vector a = random_vector(gen, 8);
    Vector scaled = a;
    const double c = gen.next_double() * 3.0 + 0.25;
    for (auto& x : scaled.values()) x *= c;
    CHECK(embedcore::cosine_similarity(a, scaled) == Catch::Approx(1.0).margin(1e-12));
    Vector neg = a;
    for (auto& x : neg.values()) x = -x;
    CHECK(embedcore::cosine_similarity(a, neg) == Catch::Approx(-1.0).margin(1e-12));
  }
}

TEST_CASE("rank_by_similarity collinear geometry and tie-break") {
  const Vector center{1, 0};
  std::map<std::string, Vector> items{
      {"A", Vector{1, 0}}, {"B", Vector{0, 1}}, {"C", Vector{-1, 0}}};
  const auto ranked = embedcore::rank_by_similarity(center, items);
  REQUIRE(ranked.entries.size() == 3);
  CHECK(ranked.entries[0].key == "A");
  CHECK(ranked.entries[1].key == "B");
  CHECK(ranked.entries[2].key == "C");
  CHECK(ranked.entries[0].position == 1);

  std::map<std::string, Vector> ties{
      {"zeta", Vector{2, 2}}, {"alpha", Vector{1, 1}}, {"mid", Vector{1, 0}}};
  const auto r2 = embedcore::rank_by_similarity(center, ties);
  // alpha and zeta are colinear, so they tie and sort lexicographically.
  CHECK(r2.entries[0].key == "mid");
  CHECK(r2.entries[1].key == "alpha");
  CHECK(r2.entries[2].key == "zeta");
}

TEST_CASE("rank_by_similarity dimension mismatch lists offending keys") {
  const Vector center{1, 0};
  std::map<std::string, Vector> items{{"ok", Vector{1, 1}},
                                      {"bad1", Vector{1, 2, 3}},
                                      {"bad2", Vector{1}}};
  CHECK_THROWS_WITH(embedcore::rank_by_similarity(center, items),
                    Catch::Matchers::ContainsSubstring("bad1") &&
                        Catch::Matchers::ContainsSubstring("bad2"));
}

TEST_CASE("rank_by_similarity matches exhaustive pairwise oracle") {
  rng::SplitMix gen(31);
  const Vector center = random_vector(gen, 12);
  std::map<std::string, Vector> items;
  for (int i = 0; i < 20; ++i)
    items.emplace("item" + std::to_string(i), random_vector(gen, 12));

  std::vector<std::pair<std::string, double>> oracle;
  for (const auto& [k, v] : items)
    oracle.emplace_back(k, embedcore::cosine_similarity(center, v));
  std::sort(oracle.begin(), oracle.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  const auto ranked = embedcore::rank_by_similarity(center, items);
  REQUIRE(ranked.entries.size() == oracle.size());
  for (std::size_t i = 0; i < oracle.size(); ++i) {
    CHECK(ranked.entries[i].key == oracle[i].first);
    CHECK(ranked.entries[i].score == Catch::Approx(oracle[i].second).margin(1e-12));
  }
}

TEST_CASE("rank order is invariant under uniform positive scaling") {
  rng::SplitMix gen(77);
  const Vector center = random_vector(gen, 6);
  std::map<std::string, Vector> items;
  for (int i = 0; i < 10; ++i)
    items.emplace("k" + std::to_string(i), random_vector(gen, 6));
  const auto base = embedcore::rank_by_similarity(center, items);

  Vector center_scaled = center;
  for (auto& x : center_scaled.values()) x *= 7.5;
  std::map<std::string, Vector> scaled;
  for (const auto& [k, v] : items) {
    Vector w = v;
    for (auto& x : w.values()) x *= 0.03;
    scaled.emplace(k, std::move(w));
  }
  const auto again = embedcore::rank_by_similarity(center_scaled, scaled);
  for (std::size_t i = 0; i < base.entries.size(); ++i)
    CHECK(base.entries[i].key == again.entries[i].key);
}

TEST_CASE("to_rank_positions strict and tied cases") {
  CHECK(embedcore::to_rank_positions({9.0, 7.0, 5.0}) ==
        std::vector<double>{1, 2, 3});
  CHECK(embedcore::to_rank_positions({9.0, 9.0, 5.0}) ==
        std::vector<double>{1.5, 1.5, 3});
  CHECK_THROWS_AS(embedcore::to_rank_positions(std::vector<double>{}),
                  std::invalid_argument);
}

TEST_CASE("to_rank_positions matches counting oracle on random scores") {
  rng::SplitMix gen(13);
  std::vector<double> scores(50);
  for (auto& s : scores) s = std::floor(gen.next_double() * 20.0);  // force ties
  const auto got = embedcore::to_rank_positions(scores);
  const auto want = counting_ranks(scores);
  for (std::size_t i = 0; i < scores.size(); ++i)
    CHECK(got[i] == Catch::Approx(want[i]).margin(1e-12));
}

TEST_CASE("spearman basic cases") {
  CHECK(embedcore::spearman({1, 2, 3, 4}, {1, 2, 3, 4}).rho == Catch::Approx(1.0));
  CHECK(embedcore::spearman({1, 2, 3, 4}, {4, 3, 2, 1}).rho == Catch::Approx(-1.0));
  // Closed form: 1 - 6*8/120.
  CHECK(embedcore::spearman({1, 2, 3, 4, 5}, {3, 1, 2, 5, 4}).rho ==
        Catch::Approx(0.6).margin(1e-12));
  CHECK(embedcore::spearman({1, 2}, {1, 2}, "lbl").label == "lbl");
  CHECK_THROWS_AS(embedcore::spearman({1, 2, 3}, {1, 2}), std::invalid_argument);
  CHECK_THROWS_AS(embedcore::spearman({1.0}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(embedcore::spearman({2, 2, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST_CASE("spearman is invariant under strictly monotone transforms") {
  rng::SplitMix gen(23);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> a(12), b(12);
    for (auto& x : a) x = gen.next_double() * 10.0 - 5.0;
    for (auto& x : b) x = gen.next_double() * 10.0 - 5.0;
    const double base = embedcore::spearman(a, b).rho;
    std::vector<double> ta(a.size()), tb(b.size());
    for (std::size_t i = 0; i < a.size(); ++i) ta[i] = std::exp(a[i]);
    for (std::size_t i = 0; i < b.size(); ++i) tb[i] = 3.0 * b[i] + 11.0;
    CHECK(embedcore::spearman(ta, tb).rho == Catch::Approx(base).margin(1e-12));
  }
}

TEST_CASE("spearman on tie-free ranks: identity and reversal") {
  rng::SplitMix gen(41);
  for (int trial = 0; trial < 8; ++trial) {
    const std::size_t n = 3 + trial;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{1});
    rng::shuffle_indices(perm, 1000 + trial);
    std::vector<double> r(perm.begin(), perm.end());
    std::vector<double> rev(r.size());
    for (std::size_t i = 0; i < r.size(); ++i)
      rev[i] = static_cast<double>(n + 1) - r[i];  // best rank becomes worst
    CHECK(embedcore::spearman(r, r).rho == Catch::Approx(1.0).margin(1e-12));
    CHECK(embedcore::spearman(r, rev).rho == Catch::Approx(-1.0).margin(1e-12));
  }
}

TEST_CASE("spearman matches brute-force rank covariance on small permutations") {
  rng::SplitMix gen(4242);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 2 + static_cast<std::size_t>(gen.next_below(5));
    std::vector<std::size_t> pa(n), pb(n);
    std::iota(pa.begin(), pa.end(), std::size_t{1});
    std::iota(pb.begin(), pb.end(), std::size_t{1});
    rng::shuffle_indices(pa, gen.next_u64());
    rng::shuffle_indices(pb, gen.next_u64());
    std::vector<double> a(pa.begin(), pa.end());
    std::vector<double> b(pb.begin(), pb.end());
    if (n < 2) continue;
    const double want = spearman_oracle(a, b);
    const double got = embedcore::spearman(a, b).rho;
    CHECK(std::abs(got - want) < 1e-12);
  }
}

TEST_CASE("derive_gold_ranks orders by value, name-stable on ties") {
  std::vector<embedcore::MaterialRecord> recs{
      {"B", "B", 1.5, 0}, {"A", "A", 2.5, 0}, {"C", "C", 1.5, 0}};
  embedcore::derive_gold_ranks(recs);
  CHECK(recs[1].gold_rank == 1);  // A, highest value
  CHECK(recs[0].gold_rank == 2);  // B before C on equal value
  CHECK(recs[2].gold_rank == 3);
}
