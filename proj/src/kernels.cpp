// SPDX-License-Identifier: Apache-2.0
#include "ldefense/kernels.hpp"

#include <cmath>

#include <omp.h>

namespace ldefense::kernels {
namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Row i of the bias indicator matrix, summed.
std::size_t bias_row(std::span<const double> e, double e_norm, std::span<const Embedding> candidates,
                     std::span<const double> c_norms, double threshold, std::size_t& zero_pairs) {
  std::size_t hits = 0;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    if (e_norm == 0.0 || c_norms[j] == 0.0) {
      ++zero_pairs;
      continue;
    }
    if (dot(e, candidates[j]) / (e_norm * c_norms[j]) > threshold) ++hits;
  }
  return hits;
}

std::vector<double> norms(std::span<const Embedding> v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::sqrt(dot(v[i], v[i]));
  return out;
}

BiasCounts finish(const std::vector<std::size_t>& row_hits, std::size_t m, std::size_t zero_pairs) {
  BiasCounts out;
  out.zero_norm_pairs = zero_pairs;
  if (row_hits.empty() || m == 0) return out;
  double acc = 0.0;
  for (std::size_t h : row_hits) acc += static_cast<double>(h) / static_cast<double>(m);
  out.ratio = acc / static_cast<double>(row_hits.size());
  return out;
}

}  // namespace

std::vector<std::vector<ScoredCandidate>> score_claims_serial(const ExtractorParams& params,
                                                              std::span<const ExtractorExample> claims) {
  std::vector<std::vector<ScoredCandidate>> out(claims.size());
  for (std::size_t i = 0; i < claims.size(); ++i) {
    if (claims[i].candidates.empty()) continue;
    out[i] = score_candidates(params, claims[i].claim, claims[i].candidates);
  }
  return out;
}

std::vector<std::vector<ScoredCandidate>> score_claims_parallel(const ExtractorParams& params,
                                                                std::span<const ExtractorExample> claims) {
  std::vector<std::vector<ScoredCandidate>> out(claims.size());
  const auto n = static_cast<std::ptrdiff_t>(claims.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& c = claims[static_cast<std::size_t>(i)];
    if (c.candidates.empty()) continue;
    out[static_cast<std::size_t>(i)] = score_candidates(params, c.claim, c.candidates);
  }
  return out;
}

std::vector<std::vector<double>> head_distributions_serial(const nn::MlpParams& head,
                                                           std::span<const Embedding> inputs) {
  std::vector<std::vector<double>> out(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) out[i] = nn::softmax(nn::mlp_forward(head, inputs[i]));
  return out;
}

std::vector<std::vector<double>> head_distributions_parallel(const nn::MlpParams& head,
                                                             std::span<const Embedding> inputs) {
  std::vector<std::vector<double>> out(inputs.size());
  const auto n = static_cast<std::ptrdiff_t>(inputs.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = nn::softmax(nn::mlp_forward(head, inputs[k]));
  }
  return out;
}

BiasCounts bias_ratio_serial(std::span<const Embedding> evidence, std::span<const Embedding> candidates,
                             double threshold) {
  const auto e_norms = norms(evidence);
  const auto c_norms = norms(candidates);
  std::vector<std::size_t> hits(evidence.size());
  std::size_t zero_pairs = 0;
  for (std::size_t i = 0; i < evidence.size(); ++i) {
    hits[i] = bias_row(evidence[i], e_norms[i], candidates, c_norms, threshold, zero_pairs);
  }
  return finish(hits, candidates.size(), zero_pairs);
}

BiasCounts bias_ratio_parallel(std::span<const Embedding> evidence, std::span<const Embedding> candidates,
                               double threshold) {
  const auto e_norms = norms(evidence);
  const auto c_norms = norms(candidates);
  std::vector<std::size_t> hits(evidence.size());
  std::size_t zero_pairs = 0;
  const auto n = static_cast<std::ptrdiff_t>(evidence.size());
#pragma omp parallel for schedule(static) reduction(+ : zero_pairs)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    std::size_t local_zero = 0;
    hits[k] = bias_row(evidence[k], e_norms[k], candidates, c_norms, threshold, local_zero);
    zero_pairs += local_zero;
  }
  return finish(hits, candidates.size(), zero_pairs);
}

std::vector<Embedding> mock_embed_serial(std::span<const std::string> texts, int dim, std::uint64_t seed) {
  std::vector<Embedding> out(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) out[i] = mock_embed(texts[i], dim, seed);
  return out;
}

std::vector<Embedding> mock_embed_parallel(std::span<const std::string> texts, int dim, std::uint64_t seed) {
  std::vector<Embedding> out(texts.size());
  const auto n = static_cast<std::ptrdiff_t>(texts.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = mock_embed(texts[k], dim, seed);
  }
  return out;
}

int max_threads() { return omp_get_max_threads(); }

}  // namespace ldefense::kernels
