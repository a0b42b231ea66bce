// SPDX-License-Identifier: Apache-2.0
#pragma once

// Data-parallel kernels. Every kernel has a serial reference and an OpenMP
// version; both write results by index, so outputs are bitwise identical.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ldefense/embedding.hpp"
#include "ldefense/extractor.hpp"
#include "ldefense/neural.hpp"

namespace ldefense::kernels {

std::vector<std::vector<ScoredCandidate>> score_claims_serial(const ExtractorParams& params,
                                                              std::span<const ExtractorExample> claims);
std::vector<std::vector<ScoredCandidate>> score_claims_parallel(const ExtractorParams& params,
                                                                std::span<const ExtractorExample> claims);

/// softmax(head(x)) for every input row.
std::vector<std::vector<double>> head_distributions_serial(const nn::MlpParams& head,
                                                           std::span<const Embedding> inputs);
std::vector<std::vector<double>> head_distributions_parallel(const nn::MlpParams& head,
                                                             std::span<const Embedding> inputs);

struct BiasCounts {
  double ratio = 0.0;
  std::size_t zero_norm_pairs = 0;
};

/// (1/k) sum_i (1/m) sum_j [cos(e_i, c_j) > threshold]; zero-norm pairs count 0.
BiasCounts bias_ratio_serial(std::span<const Embedding> evidence, std::span<const Embedding> candidates,
                             double threshold);
BiasCounts bias_ratio_parallel(std::span<const Embedding> evidence, std::span<const Embedding> candidates,
                               double threshold);

std::vector<Embedding> mock_embed_serial(std::span<const std::string> texts, int dim, std::uint64_t seed);
std::vector<Embedding> mock_embed_parallel(std::span<const std::string> texts, int dim, std::uint64_t seed);

int max_threads();

}  // namespace ldefense::kernels
