#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "dmpc/error.hpp"
#include "dmpc/rng.hpp"

namespace dmpc {

enum class Activation { kTanh, kRelu, kIdentity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::kTanh: return "tanh";
    case Activation::kRelu: return "relu";
    case Activation::kIdentity: return "identity";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  if (s == "identity") return Activation::kIdentity;
  throw InvalidInput("unknown activation: " + s);
}

/// Dense feed-forward architecture. `activations[l]` is applied after layer l;
/// the last one must be identity.
struct MlpSpec {
  std::vector<int> layer_sizes;
  std::vector<Activation> activations;

  /// Hidden layers share one activation, output is linear.
  static MlpSpec make(std::vector<int> sizes, Activation hidden) {
    if (sizes.size() < 2) throw InvalidInput("mlp needs at least an input and an output layer");
    MlpSpec s;
    s.layer_sizes = std::move(sizes);
    s.activations.assign(s.layer_sizes.size() - 1, hidden);
    s.activations.back() = Activation::kIdentity;
    s.validate();
    return s;
  }

  void validate() const {
    if (layer_sizes.size() < 2) throw InvalidInput("mlp needs at least an input and an output layer");
    if (activations.size() != layer_sizes.size() - 1) throw InvalidInput("one activation per weight layer");
    if (activations.back() != Activation::kIdentity) throw InvalidInput("final activation must be identity");
    for (int n : layer_sizes)
      if (n < 1) throw InvalidInput("layer sizes must be positive");
  }

  [[nodiscard]] int input_dim() const { return layer_sizes.front(); }
  [[nodiscard]] int output_dim() const { return layer_sizes.back(); }
  [[nodiscard]] int num_layers() const { return static_cast<int>(activations.size()); }

  friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

struct MlpParams {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  /// Bumped whenever the values change, so stale tapes can be detected.
  std::uint64_t generation = 0;

  static MlpParams zeros_like(const MlpParams& p) {
    MlpParams z;
    for (const auto& w : p.weights) z.weights.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));
    for (const auto& b : p.biases) z.biases.push_back(Eigen::VectorXd::Zero(b.size()));
    return z;
  }

  [[nodiscard]] bool all_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }

  [[nodiscard]] std::size_t size() const {
    std::size_t n = 0;
    for (const auto& w : weights) n += static_cast<std::size_t>(w.size());
    for (const auto& b : biases) n += static_cast<std::size_t>(b.size());
    return n;
  }

  void scale(double s) {
    for (auto& w : weights) w *= s;
    for (auto& b : biases) b *= s;
  }

  void add(const MlpParams& o, double s = 1.0) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += s * o.weights[l];
      biases[l] += s * o.biases[l];
    }
  }
};

/// Glorot-uniform weights, zero biases.
inline MlpParams init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  MlpParams p;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.layer_sizes[l];
    const int fan_out = spec.layer_sizes[l + 1];
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int j = 0; j < fan_in; ++j)
      for (int i = 0; i < fan_out; ++i) w(i, j) = rng.uniform(-a, a);
    p.weights.push_back(std::move(w));
    p.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return p;
}

/// Activations recorded by a forward pass; column b belongs to batch item b.
struct Tape {
  std::vector<Eigen::MatrixXd> activations;  // activations[0] is the input
  const MlpParams* params = nullptr;
  std::uint64_t generation = 0;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpSpec spec, MlpParams params) : spec_(std::move(spec)), params_(std::move(params)) { check_shapes(); }
  Mlp(MlpSpec spec, std::uint64_t seed) : spec_(std::move(spec)), params_(init_params(spec_, seed)) {}

  [[nodiscard]] const MlpSpec& spec() const { return spec_; }
  [[nodiscard]] const MlpParams& params() const { return params_; }
  MlpParams& mutable_params() { return params_; }

  /// Batched forward pass over the columns of `input`.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Tape* tape = nullptr) const {
    if (input.rows() != spec_.input_dim())
      throw InvalidInput("mlp input has " + std::to_string(input.rows()) + " rows, expected " +
                         std::to_string(spec_.input_dim()));
    if (tape) {
      tape->activations.clear();
      tape->activations.reserve(spec_.num_layers() + 1);
      tape->activations.push_back(input);
      tape->params = &params_;
      tape->generation = params_.generation;
    }
    Eigen::MatrixXd a = input;
    for (int l = 0; l < spec_.num_layers(); ++l) {
      Eigen::MatrixXd z = params_.weights[l] * a;
      z.colwise() += params_.biases[l];
      apply_activation(spec_.activations[l], z);
      a = std::move(z);
      if (tape) tape->activations.push_back(a);
    }
    return a;
  }

  Eigen::VectorXd forward_vector(const Eigen::VectorXd& input, Tape* tape = nullptr) const {
    return forward(Eigen::MatrixXd(input), tape).col(0);
  }

  struct Gradients {
    MlpParams params;         // summed over the batch
    Eigen::MatrixXd input;    // per batch column
  };

  /// Pulls `output_grad` (dL/d output, one column per batch item) back through
  /// the recorded pass. Parameter gradients are summed over the batch.
  Gradients backward(const Tape& tape, const Eigen::MatrixXd& output_grad, bool want_params = true) const {
    if (tape.params != &params_ || tape.generation != params_.generation)
      throw InvalidInput("tape does not belong to the current parameters");
    if (static_cast<int>(tape.activations.size()) != spec_.num_layers() + 1)
      throw InvalidInput("tape layer count mismatch");
    if (output_grad.rows() != spec_.output_dim() || output_grad.cols() != tape.activations.back().cols())
      throw InvalidInput("output gradient shape mismatch");

    Gradients g;
    if (want_params) g.params = MlpParams::zeros_like(params_);
    Eigen::MatrixXd delta = output_grad;
    for (int l = spec_.num_layers() - 1; l >= 0; --l) {
      const Eigen::MatrixXd& out = tape.activations[l + 1];
      switch (spec_.activations[l]) {
        case Activation::kTanh: delta.array() *= 1.0 - out.array().square(); break;
        case Activation::kRelu: delta.array() *= (out.array() > 0.0).cast<double>(); break;
        case Activation::kIdentity: break;
      }
      if (want_params) {
        g.params.weights[l].noalias() = delta * tape.activations[l].transpose();
        g.params.biases[l] = delta.rowwise().sum();
      }
      delta = params_.weights[l].transpose() * delta;
    }
    g.input = std::move(delta);
    return g;
  }

 private:
  static void apply_activation(Activation act, Eigen::MatrixXd& z) {
    switch (act) {
      case Activation::kTanh: z = z.array().tanh(); break;
      case Activation::kRelu: z = z.cwiseMax(0.0); break;
      case Activation::kIdentity: break;
    }
  }

  void check_shapes() const {
    spec_.validate();
    if (static_cast<int>(params_.weights.size()) != spec_.num_layers() ||
        params_.biases.size() != params_.weights.size())
      throw InvalidInput("parameter layer count does not match spec");
    for (int l = 0; l < spec_.num_layers(); ++l) {
      if (params_.weights[l].rows() != spec_.layer_sizes[l + 1] || params_.weights[l].cols() != spec_.layer_sizes[l] ||
          params_.biases[l].size() != spec_.layer_sizes[l + 1])
        throw InvalidInput("parameter shape mismatch at layer " + std::to_string(l));
    }
    if (!params_.all_finite()) throw InvalidInput("parameters contain non-finite values");
  }

  MlpSpec spec_;
  MlpParams params_;
};

struct AdamState {
  MlpParams m;
  MlpParams v;
  long long step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const MlpParams& p, double lr) {
    AdamState s;
    s.m = MlpParams::zeros_like(p);
    s.v = MlpParams::zeros_like(p);
    s.lr = lr;
    return s;
  }
};

/// Bias-corrected Adam update. Returns false, leaving params and state
/// untouched, when any gradient is non-finite.
[[nodiscard]] inline bool adam_step(MlpParams& params, const MlpParams& grads, AdamState& st) {
  if (grads.weights.size() != params.weights.size() || st.m.weights.size() != params.weights.size())
    throw InvalidInput("adam: parameter/gradient layer mismatch");
  for (std::size_t l = 0; l < params.weights.size(); ++l)
    if (grads.weights[l].rows() != params.weights[l].rows() || grads.weights[l].cols() != params.weights[l].cols() ||
        grads.biases[l].size() != params.biases[l].size())
      throw InvalidInput("adam: gradient shape mismatch");
  if (!grads.all_finite()) return false;

  st.step += 1;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = st.beta1 * m + (1.0 - st.beta1) * g;
    v = st.beta2 * v + (1.0 - st.beta2) * g.cwiseProduct(g);
    p.array() -= st.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + st.eps);
  };
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    update(params.weights[l], grads.weights[l], st.m.weights[l], st.v.weights[l]);
    update(params.biases[l], grads.biases[l], st.m.biases[l], st.v.biases[l]);
  }
  params.generation += 1;
  return true;
}

/// 16-dim (by default) sinusoidal embedding of a diffusion timestep.
inline Eigen::VectorXd timestep_embedding(int timestep, int dim = 16) {
  Eigen::VectorXd e(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e(2 * i) = std::sin(timestep * freq);
    e(2 * i + 1) = std::cos(timestep * freq);
  }
  return e;
}

}  // namespace dmpc
