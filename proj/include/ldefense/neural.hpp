// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ldefense::nn {

/// Floor applied to every probability before a log or division.
inline constexpr double kProbFloor = 1e-12;

/// Width of the single tanh hidden layer used by every head.
inline constexpr int kHiddenWidth = 128;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Activation : std::uint8_t { kIdentity = 0, kTanh = 1, kRelu = 2 };

struct Layer {
  int in = 0;
  int out = 0;
  std::vector<double> weight;  // out x in, row-major
  std::vector<double> bias;    // out
  Activation activation = Activation::kIdentity;

  bool operator==(const Layer&) const = default;
};

struct MlpParams {
  std::vector<Layer> layers;

  [[nodiscard]] int input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  [[nodiscard]] int output_dim() const { return layers.empty() ? 0 : layers.back().out; }
  [[nodiscard]] std::size_t parameter_count() const;
  /// Throws ShapeError when dims do not chain or entries are not finite.
  void validate() const;

  bool operator==(const MlpParams&) const = default;
};

/// Glorot-uniform weights, zero biases. `dims` = {in, hidden..., out}; hidden
/// layers use `hidden_activation`, the last layer is linear.
MlpParams make_mlp(std::span<const int> dims, Activation hidden_activation, std::uint64_t seed);

/// in -> 128 tanh -> out.
MlpParams make_head(int in, int out, std::uint64_t seed);

MlpParams zeros_like(const MlpParams& params);
void zero_output_layer(MlpParams& params);
void fill_zero(MlpParams& params);

/// Post-activation outputs of every layer; activations[0] is the input.
struct MlpTrace {
  std::vector<std::vector<double>> activations;
};

std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> x,
                                MlpTrace* trace = nullptr);

/// Accumulates parameter gradients into `grads` and returns dL/dx.
std::vector<double> mlp_backward(const MlpParams& params, const MlpTrace& trace,
                                 std::span<const double> grad_out, MlpParams& grads);

std::vector<double> softmax(std::span<const double> logits);

/// Backprop through softmax: returns dL/dlogits given probabilities and dL/dprobs.
std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> grad_probs);

/// KL(p || q) in nats, with 0 * log(0/.) := 0 and q floored at kProbFloor.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// d KL(p || q) / d q; zero on coordinates where the floor is active.
std::vector<double> kl_divergence_grad_q(std::span<const double> p, std::span<const double> q);

/// -log dist[gold], floored.
double cross_entropy(std::span<const double> dist, std::size_t gold);

/// Flat views over a set of heads, in the given order.
std::size_t parameter_count(std::span<const MlpParams* const> heads);
std::vector<double> flatten(std::span<const MlpParams* const> heads);
void assign_flat(std::span<MlpParams* const> heads, std::span<const double> flat);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction over a fixed list of heads.
class Adam {
 public:
  explicit Adam(std::size_t parameter_count, AdamConfig config = {});

  void step(std::span<MlpParams* const> params, std::span<const MlpParams* const> grads, double lr);

  [[nodiscard]] long steps() const { return step_; }
  [[nodiscard]] const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  long step_ = 0;
};

/// Linear warm-up from 0 to base_lr, then linear decay to 0 at total_steps.
double lr_at(long step, long total_steps, double warmup_fraction, double base_lr);

struct TrainConfig {
  int epochs = 5;
  int batch_size = 2;
  double learning_rate = 1e-5;
  double warmup_fraction = 0.1;
  std::uint64_t seed = 13;
  double gamma = 0.9;

  void validate() const;  // throws std::invalid_argument
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // both magnitudes below the floor
};

/// Central finite differences against `analytic`. Checks every coordinate, or a
/// seeded sample of `max_coordinates` when the parameter vector is larger.
GradCheckResult grad_check(const std::function<double(std::span<const double>)>& loss,
                           std::span<const double> point, std::span<const double> analytic,
                           double epsilon = 1e-5, std::size_t max_coordinates = 0,
                           std::uint64_t seed = 0);

using NamedHead = std::pair<std::string, MlpParams>;

/// Binary checkpoint; see docs/checkpoint_format.md for the byte layout.
std::string serialize_heads(std::span<const NamedHead> heads);
std::vector<NamedHead> deserialize_heads(std::string_view bytes);
void save_heads(const std::filesystem::path& path, std::span<const NamedHead> heads);
std::vector<NamedHead> load_heads(const std::filesystem::path& path);

}  // namespace ldefense::nn
