#pragma once

// Fully connected networks with hand-written backpropagation, Adam/SGD and
// global-norm clipping.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pearl/linalg.hpp"
#include "pearl/rng.hpp"

namespace pearl {

enum class Activation { relu, sigmoid, identity };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);
double sigmoid(double x);

struct Layer {
  DenseMatrix w;  // out x in
  Vector b;
  Activation activation = Activation::identity;

  std::size_t inputs() const { return w.cols(); }
  std::size_t outputs() const { return w.rows(); }
};

struct LayerSpec {
  std::size_t outputs = 0;
  Activation activation = Activation::identity;
};

struct MlpSpec {
  std::size_t inputs = 0;
  std::vector<LayerSpec> layers;
};

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<Layer> layers);

  /// Kaiming-uniform weights for relu layers, Xavier-uniform otherwise; zero
  /// biases.
  static Mlp init(const MlpSpec& spec, Rng& rng);

  std::size_t inputs() const;
  std::size_t outputs() const;
  std::size_t num_params() const;
  MlpSpec spec() const;

  const std::vector<Layer>& layers() const { return layers_; }
  /// Mutable access invalidates the forward cache.
  std::vector<Layer>& mutable_layers();

  /// Runs the network and caches every layer's input and pre-activation.
  const Vector& forward(std::span<const double> input);
  /// Output of a forward pass without touching the cache.
  Vector predict(std::span<const double> input) const;

  /// Reverse pass for d(loss)/d(output) = output_grad. Parameter gradients
  /// are accumulated (+=) unless `accumulate` is false; returns d(loss)/d(input).
  Vector backward(std::span<const double> output_grad, bool accumulate = true);

  void zero_grad();
  bool cache_valid() const { return cache_valid_; }

  /// Parameters and gradients as spans in declaration order (w then b, per layer).
  std::vector<std::span<double>> param_spans();
  std::vector<std::span<double>> grad_spans();
  std::vector<std::span<const double>> param_spans() const;

  std::vector<double> flat_params() const;
  void set_flat_params(std::span<const double> values);
  std::vector<double> flat_grads() const;

 private:
  void allocate_grads();

  std::vector<Layer> layers_;
  std::vector<Layer> grads_;
  std::vector<Vector> inputs_;  // inputs_[l] feeds layer l
  std::vector<Vector> pre_;
  Vector output_;
  bool cache_valid_ = false;
};

double global_norm(const std::vector<std::span<double>>& grads);
/// Rescales so the global norm is at most max_norm. A norm within 1e-12
/// relative of max_norm counts as already clipped, so clipping is idempotent.
/// Returns the norm before clipping.
double clip_global_norm(const std::vector<std::span<double>>& grads, double max_norm);

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_norm = 1.0;  // <= 0 disables clipping
};

struct StepInfo {
  double grad_norm = 0.0;     // before clipping
  double applied_norm = 0.0;  // after clipping
};

/// Optimizer over the concatenated parameters of one or more networks.
class Optimizer {
 public:
  Optimizer() = default;
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  /// Clips the accumulated gradients, updates the parameters and zeroes the
  /// gradients. Throws NumericalError, leaving parameters untouched, if any
  /// gradient is non-finite.
  StepInfo step(std::span<Mlp* const> models);
  StepInfo step(Mlp& model) {
    Mlp* m[] = {&model};
    return step(m);
  }

  const OptimizerConfig& config() const { return config_; }
  OptimizerConfig& config() { return config_; }
  std::uint64_t steps() const { return steps_; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }
  void restore(std::uint64_t steps, std::vector<double> m, std::vector<double> v);

 private:
  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& s);

// ---- checkpoints ----------------------------------------------------------

struct Checkpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Mlp>> models;
  std::vector<std::pair<std::string, Optimizer>> optimizers;

  const Mlp& model(const std::string& name) const;
  const Optimizer& optimizer(const std::string& name) const;
  bool has_model(const std::string& name) const;
};

/// "PEARLCK1", u32 version, u64 descriptor length, JSON descriptor, then the
/// parameters of every model followed by the Adam moments of every optimizer,
/// all as little-endian f64.
std::string serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pearl
