#pragma once

// Multiple Negatives Ranking losses over cosine similarity, with analytic
// gradients w.r.t. every input embedding.
//
// Pairs:    loss_i = -log( exp(cos(a_i,p_i)/tau) / sum_j exp(cos(a_i,p_j)/tau) )
// Triplets: the denominator additionally sums exp(cos(a_i,n_j)/tau) over the
//           batch's hard negatives.
// Reduction is the mean over the batch, so magnitudes are comparable across
// batch sizes.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "matterrank/embedcore.hpp"

namespace matterrank::finetune {

struct MnrConfig {
  double temperature = 0.05;
  std::size_t batch_size = 0;  // 0 = inferred from the inputs

  void validate(std::size_t n) const {
    if (temperature <= 0.0)
      throw std::invalid_argument("mnr: temperature must be > 0");
    if (batch_size != 0 && batch_size != n)
      throw std::invalid_argument("mnr: configured batch_size " +
                                  std::to_string(batch_size) +
                                  " does not match input count " +
                                  std::to_string(n));
  }
};

struct MnrResult {
  double loss = 0.0;
  std::vector<embedcore::Vector> grad_anchors;
  std::vector<embedcore::Vector> grad_positives;
  std::vector<embedcore::Vector> grad_negatives;  // empty for the pair loss
};

namespace detail {

struct Normalized {
  std::vector<embedcore::Vector> unit;
  std::vector<double> norm;
};

inline Normalized normalize_batch(std::span<const embedcore::Vector> vs,
                                  const char* role) {
  Normalized out;
  out.unit.reserve(vs.size());
  out.norm.reserve(vs.size());
  for (std::size_t i = 0; i < vs.size(); ++i) {
    if (!vs[i].all_finite())
      throw std::invalid_argument(std::string("mnr: non-finite ") + role +
                                  " embedding at batch index " +
                                  std::to_string(i));
    const double n = embedcore::norm(vs[i]);
    if (n == 0.0)
      throw std::invalid_argument(std::string("mnr: zero-norm ") + role +
                                  " embedding at batch index " +
                                  std::to_string(i));
    embedcore::Vector u = vs[i];
    for (auto& x : u.values()) x /= n;
    out.unit.push_back(std::move(u));
    out.norm.push_back(n);
  }
  return out;
}

// d cos(a,b)/da = (b_hat - cos * a_hat) / |a|, accumulated with weight w.
inline void add_cosine_grad(embedcore::Vector& acc,
                            const embedcore::Vector& self_hat,
                            const embedcore::Vector& other_hat, double cosine,
                            double self_norm, double w) {
  for (std::size_t u = 0; u < acc.dim(); ++u)
    acc[u] += w * (other_hat[u] - cosine * self_hat[u]) / self_norm;
}

inline void check_same_shape(std::span<const embedcore::Vector> a,
                             std::span<const embedcore::Vector> b,
                             const char* what) {
  if (a.size() != b.size())
    throw std::invalid_argument(std::string("mnr: ") + what +
                                " count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].dim() != b[i].dim() || a[i].dim() != a[0].dim())
      throw std::invalid_argument(std::string("mnr: ") + what +
                                  " dimension mismatch at batch index " +
                                  std::to_string(i));
}

}  // namespace detail

// Shared implementation; `negatives` may be empty.
inline MnrResult mnr_loss(std::span<const embedcore::Vector> anchors,
                          std::span<const embedcore::Vector> positives,
                          std::span<const embedcore::Vector> negatives,
                          const MnrConfig& cfg) {
  const std::size_t n = anchors.size();
  if (n == 0) throw std::invalid_argument("mnr: empty batch");
  cfg.validate(n);
  detail::check_same_shape(anchors, positives, "anchor/positive");
  const bool with_neg = !negatives.empty();
  if (with_neg) detail::check_same_shape(anchors, negatives, "anchor/negative");

  const auto A = detail::normalize_batch(anchors, "anchor");
  const auto P = detail::normalize_batch(positives, "positive");
  const auto Ng = with_neg ? detail::normalize_batch(negatives, "negative")
                           : detail::Normalized{};

  const std::size_t cols = with_neg ? 2 * n : n;
  const double inv_tau = 1.0 / cfg.temperature;

  // Row-wise scores z[i][j]; columns [0,n) are positives, [n,2n) negatives.
  std::vector<std::vector<double>> z(n, std::vector<double>(cols));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j)
      z[i][j] = embedcore::dot(A.unit[i], P.unit[j]) * inv_tau;
    if (with_neg)
      for (std::size_t j = 0; j < n; ++j)
        z[i][n + j] = embedcore::dot(A.unit[i], Ng.unit[j]) * inv_tau;
  }

  MnrResult out;
  out.grad_anchors.assign(n, embedcore::Vector(anchors[0].dim()));
  out.grad_positives.assign(n, embedcore::Vector(anchors[0].dim()));
  if (with_neg)
    out.grad_negatives.assign(n, embedcore::Vector(anchors[0].dim()));

  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double zmax = z[i][0];
    for (double v : z[i]) zmax = std::max(zmax, v);
    double denom = 0.0;
    for (double v : z[i]) denom += std::exp(v - zmax);
    const double lse = zmax + std::log(denom);
    const double loss_i = lse - z[i][i];
    if (!std::isfinite(loss_i))
      throw std::invalid_argument("mnr: non-finite loss at batch index " +
                                  std::to_string(i));
    total += loss_i;

    for (std::size_t j = 0; j < cols; ++j) {
      const double softmax = std::exp(z[i][j] - zmax) / denom;
      // dLoss/dcos, including the mean reduction and the 1/tau chain.
      double g = softmax * inv_n * inv_tau;
      if (j == i) g -= inv_n * inv_tau;
      if (g == 0.0) continue;
      const bool neg_col = j >= n;
      const std::size_t jj = neg_col ? j - n : j;
      const auto& other = neg_col ? Ng : P;
      const double cosine = z[i][j] * cfg.temperature;
      detail::add_cosine_grad(out.grad_anchors[i], A.unit[i], other.unit[jj],
                              cosine, A.norm[i], g);
      auto& grad_other =
          neg_col ? out.grad_negatives[jj] : out.grad_positives[jj];
      detail::add_cosine_grad(grad_other, other.unit[jj], A.unit[i], cosine,
                              other.norm[jj], g);
    }
  }
  out.loss = total * inv_n;
  return out;
}

// MNR loss for (anchor, positive) batches: every other positive in the batch
// acts as an in-batch negative.
inline MnrResult mnr_loss_pairs(std::span<const embedcore::Vector> anchors,
                                std::span<const embedcore::Vector> positives,
                                const MnrConfig& cfg) {
  return mnr_loss(anchors, positives, {}, cfg);
}

// MNR loss for (anchor, positive, negative) batches: the explicit hard
// negatives join the in-batch negatives in the denominator.
inline MnrResult mnr_loss_triplets(std::span<const embedcore::Vector> anchors,
                                   std::span<const embedcore::Vector> positives,
                                   std::span<const embedcore::Vector> negatives,
                                   const MnrConfig& cfg) {
  if (negatives.empty())
    throw std::invalid_argument("mnr_loss_triplets: no negatives supplied");
  return mnr_loss(anchors, positives, negatives, cfg);
}

}  // namespace matterrank::finetune
