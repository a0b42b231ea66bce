// SPDX-License-Identifier: Apache-2.0
// Serial vs OpenMP timings for the data-parallel kernels.
//   ldefense_bench [--reps N] [--scale S]

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ldefense/kernels.hpp"

using namespace ldefense;

namespace {

template <typename F>
double best_ms(int reps, F&& f) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  return best;
}

template <typename Serial, typename Parallel>
void row(const char* name, const std::string& size, int reps, Serial&& serial, Parallel&& parallel) {
  decltype(serial()) a, b;
  const double ts = best_ms(reps, [&] { a = serial(); });
  const double tp = best_ms(reps, [&] { b = parallel(); });
  std::printf("%-20s %-22s %10.2f %10.2f %8.2fx  %s\n", name, size.c_str(), ts, tp, ts / tp,
              a == b ? "identical" : "DIFFER");
}

Embedding random_vec(std::mt19937_64& rng, int dim) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Embedding v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = u(rng);
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial vs OpenMP kernel benchmark"};
  int reps = 5;
  int scale = 1;
  app.add_option("--reps", reps, "Repetitions per kernel (best time is reported)")->capture_default_str();
  app.add_option("--scale", scale, "Problem size multiplier")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  std::mt19937_64 rng(1);
  const int dim = 64;
  std::printf("threads: %d\n", kernels::max_threads());
  std::printf("%-20s %-22s %10s %10s %9s  %s\n", "kernel", "size", "serial ms", "omp ms", "speedup", "outputs");

  std::vector<std::string> texts;
  for (int i = 0; i < 4000 * scale; ++i) {
    texts.push_back("sentence " + std::to_string(i) + " reports that officials confirmed the figures for district " +
                    std::to_string(i % 97) + " and the transit agency disputed them");
  }
  row("mock_embed", std::to_string(texts.size()) + " texts", reps,
      [&] { return kernels::mock_embed_serial(texts, dim, 0); },
      [&] { return kernels::mock_embed_parallel(texts, dim, 0); });

  const auto params = ExtractorParams::init(dim, 3);
  std::vector<ExtractorExample> claims(static_cast<std::size_t>(200 * scale));
  for (auto& c : claims) {
    c.claim = random_vec(rng, dim);
    for (int j = 0; j < 60; ++j) c.candidates.push_back(random_vec(rng, dim));
  }
  row("score_claims", std::to_string(claims.size()) + " claims x 60", reps,
      [&] { return kernels::score_claims_serial(params, claims); },
      [&] { return kernels::score_claims_parallel(params, claims); });

  const auto head = nn::make_head(dim, 6, 5);
  std::vector<Embedding> rows;
  for (int i = 0; i < 20000 * scale; ++i) rows.push_back(random_vec(rng, dim));
  row("head_distributions", std::to_string(rows.size()) + " rows", reps,
      [&] { return kernels::head_distributions_serial(head, rows); },
      [&] { return kernels::head_distributions_parallel(head, rows); });

  std::vector<Embedding> ev(rows.begin(), rows.begin() + 200), cands(rows.begin() + 200, rows.begin() + 200 + 2000 * scale);
  auto ratio = [](const kernels::BiasCounts& b) { return std::pair{b.ratio, b.zero_norm_pairs}; };
  row("bias_ratio", "200 x " + std::to_string(cands.size()), reps,
      [&] { return ratio(kernels::bias_ratio_serial(ev, cands, 0.5)); },
      [&] { return ratio(kernels::bias_ratio_parallel(ev, cands, 0.5)); });
  return 0;
}
