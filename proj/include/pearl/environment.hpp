#pragma once

// Bandit environment: reward, critic, exploration, replay buffer, schedules.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "pearl/linalg.hpp"
#include "pearl/neural.hpp"
#include "pearl/rng.hpp"

namespace pearl {

// ---- reward ---------------------------------------------------------------

struct RewardWeights {
  double w1 = 1.0;    // 1/k
  double w2 = 0.25;   // sparsity
  double w3 = -0.05;  // final residual norm
};

struct RewardBreakdown {
  double iter_term = 0.0;
  double sparsity_term = 0.0;
  double residual_term = 0.0;
  RewardWeights weights;
  double scalar = 0.0;
  std::size_t iterations = 0;  // k: convergence iteration, or N
  bool converged = false;
  bool invalid_preconditioner = false;  // PCG aborted; k = N

  std::array<double, 3> components() const { return {iter_term, sparsity_term, residual_term}; }
};

/// Runs PCG with z = m r and scores it:
/// w1/k + w2 (n^2 - nnz(m))/n^2 + w3 ||r_k||.
RewardBreakdown compute_reward(const DenseMatrix& a, std::span<const double> b, const DenseMatrix& m,
                               const RewardWeights& weights, std::size_t max_iterations,
                               double tolerance);

// ---- critic ---------------------------------------------------------------

enum class CriticMode { single, multi };

struct CriticConfig {
  CriticMode mode = CriticMode::single;
  std::vector<std::size_t> hidden;  // empty: two layers of width 4n
};

/// Q(A, M) from the input [A/||A||_inf, M/n]. The trunk is shared; the head
/// emits 1 value (single) or the 3 reward components (multi).
class Critic {
 public:
  Critic() = default;
  Critic(CriticMode mode, std::size_t n, Mlp trunk, Mlp head);
  static Critic create(const CriticConfig& config, std::size_t n, Rng& rng);

  Vector encode(const DenseMatrix& a, const DenseMatrix& m) const;

  const Vector& forward(const DenseMatrix& a, const DenseMatrix& m);
  Vector predict(const DenseMatrix& a, const DenseMatrix& m) const;
  /// Trunk output of the last forward().
  const Vector& trunk_activations() const { return trunk_out_; }

  /// Gradient of d(loss)/d(output) back through the network. Parameter
  /// gradients accumulate only when `accumulate` is set. Returns d(loss)/dM.
  DenseMatrix backward(std::span<const double> output_grad, bool accumulate);

  /// Scalar value the actor maximizes: the output (single) or w . output.
  double q_value(std::span<const double> output, const RewardWeights& w) const;
  /// d q_value / d output
  Vector q_grad(const RewardWeights& w) const;

  std::vector<Mlp*> models() { return {&trunk_, &head_}; }
  void zero_grad();
  CriticMode mode() const { return mode_; }
  std::size_t n() const { return n_; }
  const Mlp& trunk() const { return trunk_; }
  Mlp& trunk() { return trunk_; }
  const Mlp& head() const { return head_; }
  Mlp& head() { return head_; }

 private:
  CriticMode mode_ = CriticMode::single;
  std::size_t n_ = 0;
  Mlp trunk_;
  Mlp head_;
  Vector trunk_out_;
};

struct CriticLoss {
  double value = 0.0;
  Vector grad;  // d value / d pred
};

/// single: (pred - scalar)^2.  multi: sum over the three components.
CriticLoss critic_loss(std::span<const double> pred, const RewardBreakdown& target, CriticMode mode);

// ---- exploration ----------------------------------------------------------

/// m + E + E^T, E_ij ~ N(0, sigma^2).
DenseMatrix explore_symmetric(const DenseMatrix& m, double sigma, Rng& rng);
/// Zeroes m where S = triu(R) + triu(R)^T is nonzero, R_ij ~ Bernoulli(p).
DenseMatrix explore_sparsify(const DenseMatrix& m, Rng& rng, double p = 0.5);
/// Same with an explicit R (only its upper triangle is read).
DenseMatrix explore_sparsify(const DenseMatrix& m, const DenseMatrix& r);

// ---- replay buffer --------------------------------------------------------

struct ReplayEntry {
  DenseMatrix a;
  Vector b;
  DenseMatrix m;
};

/// Bounded FIFO ring; sampling is uniform with replacement.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 512);

  void append(ReplayEntry entry);
  std::vector<std::size_t> sample_indices(std::size_t batch, Rng& rng) const;
  std::vector<const ReplayEntry*> sample(std::size_t batch, Rng& rng) const;

  /// i = 0 is the oldest entry.
  const ReplayEntry& at(std::size_t i) const;
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return entries_.size(); }
  bool empty() const { return size_ == 0; }
  void clear() { size_ = head_ = 0; }

 private:
  std::vector<ReplayEntry> entries_;
  std::size_t head_ = 0;  // slot of the oldest entry
  std::size_t size_ = 0;
};

// ---- schedules ------------------------------------------------------------

/// v(t) = v_min + (1 + cos(2 pi t / T + phase)) (v_max - v_min) / 2, or a
/// constant. t advances by step(). t is reduced modulo T before the cosine,
/// so v(t + T) == v(t) bit for bit.
struct SchedulerState {
  double v_min = 0.0;
  double v_max = 1.0;
  double period = 500.0;
  double phase = 0.0;
  std::uint64_t t = 0;
  bool constant = false;

  static SchedulerState cosine(double v_min, double v_max, double period, double phase = 0.0);
  static SchedulerState fixed(double value);

  double value() const { return value_at(static_cast<double>(t)); }
  double value_at(double time) const;
  void step() { ++t; }
  void validate() const;
};

}  // namespace pearl
