// SPDX-License-Identifier: Apache-2.0
#include "ldefense/neural.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "ldefense/util.hpp"

namespace ldefense::nn {
namespace {

double uniform_pm1(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
}

double activate(Activation a, double x) {
  switch (a) {
    case Activation::kTanh:
      return std::tanh(x);
    case Activation::kRelu:
      return x > 0.0 ? x : 0.0;
    case Activation::kIdentity:
      return x;
  }
  return x;
}

// Derivative expressed through the post-activation value.
double activate_grad(Activation a, double y) {
  switch (a) {
    case Activation::kTanh:
      return 1.0 - y * y;
    case Activation::kRelu:
      return y > 0.0 ? 1.0 : 0.0;
    case Activation::kIdentity:
      return 1.0;
  }
  return 1.0;
}

template <typename Fn>
void for_each_tensor(std::span<const MlpParams* const> heads, Fn&& fn) {
  for (const MlpParams* head : heads) {
    for (const Layer& layer : head->layers) {
      fn(std::span<const double>(layer.weight));
      fn(std::span<const double>(layer.bias));
    }
  }
}

template <typename Fn>
void for_each_tensor_mut(std::span<MlpParams* const> heads, Fn&& fn) {
  for (MlpParams* head : heads) {
    for (Layer& layer : head->layers) {
      fn(std::span<double>(layer.weight));
      fn(std::span<double>(layer.bias));
    }
  }
}

constexpr char kMagic[8] = {'L', 'D', 'H', 'E', 'A', 'D', 'S', '1'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  [[nodiscard]] bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

void MlpParams::validate() const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.in <= 0 || l.out <= 0) throw ShapeError("layer dims must be positive");
    if (l.weight.size() != static_cast<std::size_t>(l.in) * static_cast<std::size_t>(l.out) ||
        l.bias.size() != static_cast<std::size_t>(l.out)) {
      throw ShapeError("layer " + std::to_string(i) + " tensor sizes do not match dims");
    }
    if (i > 0 && layers[i - 1].out != l.in) throw ShapeError("layer dims do not chain");
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(l.weight.begin(), l.weight.end(), finite) ||
        !std::all_of(l.bias.begin(), l.bias.end(), finite)) {
      throw ShapeError("layer " + std::to_string(i) + " has non-finite entries");
    }
  }
}

MlpParams make_mlp(std::span<const int> dims, Activation hidden_activation, std::uint64_t seed) {
  if (dims.size() < 2) throw ShapeError("an MLP needs at least input and output dims");
  std::mt19937_64 rng(splitmix64(seed));
  MlpParams p;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    Layer l;
    l.in = dims[i];
    l.out = dims[i + 1];
    if (l.in <= 0 || l.out <= 0) throw ShapeError("layer dims must be positive");
    l.activation = i + 2 == dims.size() ? Activation::kIdentity : hidden_activation;
    const double a = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    l.weight.resize(static_cast<std::size_t>(l.in) * static_cast<std::size_t>(l.out));
    for (double& w : l.weight) w = a * uniform_pm1(rng);
    l.bias.assign(static_cast<std::size_t>(l.out), 0.0);
    p.layers.push_back(std::move(l));
  }
  return p;
}

MlpParams make_head(int in, int out, std::uint64_t seed) {
  const int dims[] = {in, kHiddenWidth, out};
  return make_mlp(dims, Activation::kTanh, seed);
}

MlpParams zeros_like(const MlpParams& params) {
  MlpParams z = params;
  fill_zero(z);
  return z;
}

void fill_zero(MlpParams& params) {
  for (auto& l : params.layers) {
    std::fill(l.weight.begin(), l.weight.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

void zero_output_layer(MlpParams& params) {
  if (params.layers.empty()) return;
  auto& l = params.layers.back();
  std::fill(l.weight.begin(), l.weight.end(), 0.0);
  std::fill(l.bias.begin(), l.bias.end(), 0.0);
}

std::vector<double> mlp_forward(const MlpParams& params, std::span<const double> x, MlpTrace* trace) {
  if (params.layers.empty()) throw ShapeError("empty MLP");
  if (static_cast<int>(x.size()) != params.input_dim()) {
    throw ShapeError("MLP input has dim " + std::to_string(x.size()) + ", expected " +
                     std::to_string(params.input_dim()));
  }
  std::vector<double> cur(x.begin(), x.end());
  if (trace) {
    trace->activations.clear();
    trace->activations.push_back(cur);
  }
  for (const Layer& l : params.layers) {
    std::vector<double> next(static_cast<std::size_t>(l.out));
    for (int o = 0; o < l.out; ++o) {
      const double* row = l.weight.data() + static_cast<std::size_t>(o) * static_cast<std::size_t>(l.in);
      double acc = l.bias[static_cast<std::size_t>(o)];
      for (int i = 0; i < l.in; ++i) acc += row[i] * cur[static_cast<std::size_t>(i)];
      next[static_cast<std::size_t>(o)] = activate(l.activation, acc);
    }
    cur = std::move(next);
    if (trace) trace->activations.push_back(cur);
  }
  return cur;
}

std::vector<double> mlp_backward(const MlpParams& params, const MlpTrace& trace,
                                 std::span<const double> grad_out, MlpParams& grads) {
  if (trace.activations.size() != params.layers.size() + 1) throw ShapeError("trace does not match MLP");
  if (static_cast<int>(grad_out.size()) != params.output_dim()) throw ShapeError("gradient dim mismatch");
  std::vector<double> delta(grad_out.begin(), grad_out.end());
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const Layer& l = params.layers[li];
    Layer& g = grads.layers[li];
    const auto& out = trace.activations[li + 1];
    const auto& in = trace.activations[li];
    for (int o = 0; o < l.out; ++o) {
      delta[static_cast<std::size_t>(o)] *= activate_grad(l.activation, out[static_cast<std::size_t>(o)]);
    }
    std::vector<double> prev(static_cast<std::size_t>(l.in), 0.0);
    for (int o = 0; o < l.out; ++o) {
      const double d = delta[static_cast<std::size_t>(o)];
      g.bias[static_cast<std::size_t>(o)] += d;
      if (d == 0.0) continue;
      const std::size_t base = static_cast<std::size_t>(o) * static_cast<std::size_t>(l.in);
      const double* row = l.weight.data() + base;
      double* grow = g.weight.data() + base;
      for (int i = 0; i < l.in; ++i) {
        grow[i] += d * in[static_cast<std::size_t>(i)];
        prev[static_cast<std::size_t>(i)] += d * row[i];
      }
    }
    delta = std::move(prev);
  }
  return delta;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> softmax_backward(std::span<const double> probs, std::span<const double> grad_probs) {
  if (probs.size() != grad_probs.size()) throw ShapeError("softmax backward size mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * grad_probs[i];
  std::vector<double> out(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) out[i] = probs[i] * (grad_probs[i] - dot);
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("KL operands differ in length");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], kProbFloor));
  }
  // Rounding can leave a tiny negative when p == q.
  return std::max(kl, 0.0);
}

std::vector<double> kl_divergence_grad_q(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("KL operands differ in length");
  std::vector<double> g(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0 && q[i] > kProbFloor) g[i] = -p[i] / q[i];
  }
  return g;
}

double cross_entropy(std::span<const double> dist, std::size_t gold) {
  if (gold >= dist.size()) throw std::out_of_range("gold index outside distribution");
  return -std::log(std::max(dist[gold], kProbFloor));
}

std::size_t parameter_count(std::span<const MlpParams* const> heads) {
  std::size_t n = 0;
  for (const auto* h : heads) n += h->parameter_count();
  return n;
}

std::vector<double> flatten(std::span<const MlpParams* const> heads) {
  std::vector<double> out;
  out.reserve(parameter_count(heads));
  for_each_tensor(heads, [&](std::span<const double> t) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

void assign_flat(std::span<MlpParams* const> heads, std::span<const double> flat) {
  std::size_t pos = 0;
  for_each_tensor_mut(heads, [&](std::span<double> t) {
    if (pos + t.size() > flat.size()) throw ShapeError("flat parameter vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), t.size(), t.begin());
    pos += t.size();
  });
  if (pos != flat.size()) throw ShapeError("flat parameter vector too long");
}

Adam::Adam(std::size_t parameter_count, AdamConfig config)
    : config_(config), m_(parameter_count, 0.0), v_(parameter_count, 0.0) {}

void Adam::step(std::span<MlpParams* const> params, std::span<const MlpParams* const> grads, double lr) {
  if (params.size() != grads.size()) throw ShapeError("Adam: params and grads differ in head count");
  for (std::size_t h = 0; h < params.size(); ++h) {
    if (params[h]->layers.size() != grads[h]->layers.size()) throw ShapeError("Adam: layer count mismatch");
    for (std::size_t l = 0; l < params[h]->layers.size(); ++l) {
      if (params[h]->layers[l].weight.size() != grads[h]->layers[l].weight.size() ||
          params[h]->layers[l].bias.size() != grads[h]->layers[l].bias.size()) {
        throw ShapeError("Adam: tensor shape mismatch");
      }
    }
  }
  std::size_t count = 0;
  for (const MlpParams* head : params) count += head->parameter_count();
  if (count != m_.size()) {
    throw ShapeError("Adam: parameter count differs from optimizer state");
  }
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  std::size_t pos = 0;
  for (std::size_t h = 0; h < params.size(); ++h) {
    for (std::size_t l = 0; l < params[h]->layers.size(); ++l) {
      Layer& p = params[h]->layers[l];
      const Layer& g = grads[h]->layers[l];
      auto update = [&](std::vector<double>& pv, const std::vector<double>& gv) {
        for (std::size_t i = 0; i < pv.size(); ++i, ++pos) {
          const double gi = gv[i];
          m_[pos] = b1 * m_[pos] + (1.0 - b1) * gi;
          v_[pos] = b2 * v_[pos] + (1.0 - b2) * gi * gi;
          const double mhat = m_[pos] / c1;
          const double vhat = v_[pos] / c2;
          pv[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
        }
      };
      update(p.weight, g.weight);
      update(p.bias, g.bias);
    }
  }
}

double lr_at(long step, long total_steps, double warmup_fraction, double base_lr) {
  if (total_steps <= 0) return 0.0;
  step = std::clamp(step, 0L, total_steps);
  const double warmup = warmup_fraction * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s < warmup) return base_lr * s / warmup;
  const double remaining = static_cast<double>(total_steps) - warmup;
  if (remaining <= 0.0) return 0.0;
  return base_lr * (static_cast<double>(total_steps) - s) / remaining;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) throw std::invalid_argument("warmup fraction must lie in [0, 1)");
  if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("gamma must lie in [0, 1]");
}

GradCheckResult grad_check(const std::function<double(std::span<const double>)>& loss,
                           std::span<const double> point, std::span<const double> analytic,
                           double epsilon, std::size_t max_coordinates, std::uint64_t seed) {
  if (point.size() != analytic.size()) throw ShapeError("grad_check: size mismatch");
  std::vector<std::size_t> coords(point.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (max_coordinates > 0 && coords.size() > max_coordinates) {
    std::mt19937_64 rng(splitmix64(seed));
    for (std::size_t i = 0; i < max_coordinates; ++i) {
      std::swap(coords[i], coords[i + static_cast<std::size_t>(rng() % (coords.size() - i))]);
    }
    coords.resize(max_coordinates);
  }
  GradCheckResult result;
  std::vector<double> x(point.begin(), point.end());
  for (std::size_t c : coords) {
    const double saved = x[c];
    x[c] = saved + epsilon;
    const double up = loss(x);
    x[c] = saved - epsilon;
    const double down = loss(x);
    x[c] = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic[c];
    if (std::abs(a) < 1e-8 && std::abs(numeric) < 1e-8) {
      ++result.skipped;
      continue;
    }
    const double rel = std::abs(a - numeric) / std::max(std::abs(a), std::abs(numeric));
    result.max_relative_error = std::max(result.max_relative_error, rel);
    ++result.checked;
  }
  return result;
}

std::string serialize_heads(std::span<const NamedHead> heads) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(heads.size()));
  for (const auto& [name, head] : heads) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(head.layers.size()));
    for (const auto& l : head.layers) {
      put_u32(out, static_cast<std::uint32_t>(l.in));
      put_u32(out, static_cast<std::uint32_t>(l.out));
      out.push_back(static_cast<char>(l.activation));
    }
  }
  for (const auto& [name, head] : heads) {
    for (const auto& l : head.layers) {
      for (double w : l.weight) put_f64(out, w);
      for (double b : l.bias) put_f64(out, b);
    }
  }
  return out;
}

std::vector<NamedHead> deserialize_heads(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) {
    throw std::runtime_error("not a head checkpoint (bad magic)");
  }
  const auto version = r.u32();
  if (version != kFormatVersion) throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto count = r.u32();
  std::vector<NamedHead> heads(count);
  for (auto& [name, head] : heads) {
    name = std::string(r.take(r.u32()));
    const auto layers = r.u32();
    for (std::uint32_t i = 0; i < layers; ++i) {
      Layer l;
      l.in = static_cast<int>(r.u32());
      l.out = static_cast<int>(r.u32());
      const auto act = r.u8();
      if (act > 2) throw std::runtime_error("unknown activation tag " + std::to_string(act));
      l.activation = static_cast<Activation>(act);
      head.layers.push_back(std::move(l));
    }
  }
  for (auto& [name, head] : heads) {
    for (auto& l : head.layers) {
      l.weight.resize(static_cast<std::size_t>(l.in) * static_cast<std::size_t>(l.out));
      l.bias.resize(static_cast<std::size_t>(l.out));
      for (double& w : l.weight) w = r.f64();
      for (double& b : l.bias) b = r.f64();
    }
    head.validate();
  }
  if (!r.done()) throw std::runtime_error("trailing bytes after checkpoint payload");
  return heads;
}

void save_heads(const std::filesystem::path& path, std::span<const NamedHead> heads) {
  write_file_atomic(path, serialize_heads(heads));
}

std::vector<NamedHead> load_heads(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  if (!bytes) throw std::runtime_error("cannot read checkpoint " + path.string());
  return deserialize_heads(*bytes);
}

}  // namespace ldefense::nn
