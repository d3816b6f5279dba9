#include "pearl/environment.hpp"

#include <cmath>
#include <numbers>

#include "pearl/error.hpp"

namespace pearl {

RewardBreakdown compute_reward(const DenseMatrix& a, std::span<const double> b, const DenseMatrix& m,
                               const RewardWeights& weights, std::size_t max_iterations,
                               double tolerance) {
  if (max_iterations == 0) throw UsageError("compute_reward: max_iterations must be >= 1");
  const std::size_t n = a.rows();
  if (m.rows() != n || m.cols() != n) throw DimensionError("compute_reward: m shape mismatch");
  const SolveResult res = pcg_run(
      a, b, [&m](const Vector& r) { return matvec(m, r); }, max_iterations, tolerance);

  RewardBreakdown out;
  out.weights = weights;
  out.converged = res.status == SolveStatus::converged;
  out.invalid_preconditioner = res.status == SolveStatus::invalid_preconditioner ||
                               res.status == SolveStatus::diverged;
  // A zero right-hand side converges at k = 0; count it as one iteration.
  out.iterations = out.converged ? std::max<std::size_t>(1, res.report.iterations) : max_iterations;
  out.iter_term = 1.0 / static_cast<double>(out.iterations);
  const double nn = static_cast<double>(n * n);
  out.sparsity_term = (nn - static_cast<double>(count_nonzeros(m))) / nn;
  out.residual_term = res.report.final_residual;
  if (!std::isfinite(out.residual_term)) out.residual_term = norm2(b);
  out.scalar = weights.w1 * out.iter_term + weights.w2 * out.sparsity_term +
               weights.w3 * out.residual_term;
  return out;
}

// ---- critic ---------------------------------------------------------------

Critic::Critic(CriticMode mode, std::size_t n, Mlp trunk, Mlp head)
    : mode_(mode), n_(n), trunk_(std::move(trunk)), head_(std::move(head)) {
  if (trunk_.inputs() != 2 * n * n) throw DimensionError("Critic: trunk fan-in must be 2 n^2");
  if (head_.inputs() != trunk_.outputs()) throw DimensionError("Critic: head fan-in mismatch");
  if (head_.outputs() != (mode_ == CriticMode::single ? 1u : 3u)) {
    throw DimensionError("Critic: head width does not match mode");
  }
}

Critic Critic::create(const CriticConfig& config, std::size_t n, Rng& rng) {
  if (n == 0) throw UsageError("Critic: n must be >= 1");
  std::vector<std::size_t> hidden = config.hidden;
  if (hidden.empty()) hidden = {4 * n, 4 * n};
  MlpSpec trunk{2 * n * n, {}};
  for (std::size_t h : hidden) trunk.layers.push_back({h, Activation::relu});
  MlpSpec head{hidden.back(), {{config.mode == CriticMode::single ? 1u : 3u, Activation::identity}}};
  Mlp t = Mlp::init(trunk, rng);
  Mlp h = Mlp::init(head, rng);
  return Critic(config.mode, n, std::move(t), std::move(h));
}

Vector Critic::encode(const DenseMatrix& a, const DenseMatrix& m) const {
  if (a.rows() != n_ || a.cols() != n_ || m.rows() != n_ || m.cols() != n_) {
    throw DimensionError("Critic: system size mismatch");
  }
  Vector x(2 * n_ * n_);
  const double sa = inf_norm(a);
  const double ia = sa > 0.0 ? 1.0 / sa : 1.0;
  const double im = 1.0 / static_cast<double>(n_);
  auto ad = a.data();
  auto md = m.data();
  for (std::size_t i = 0; i < n_ * n_; ++i) {
    x[i] = ad[i] * ia;
    x[n_ * n_ + i] = md[i] * im;
  }
  return x;
}

const Vector& Critic::forward(const DenseMatrix& a, const DenseMatrix& m) {
  trunk_out_ = trunk_.forward(encode(a, m));
  return head_.forward(trunk_out_);
}

Vector Critic::predict(const DenseMatrix& a, const DenseMatrix& m) const {
  return head_.predict(trunk_.predict(encode(a, m)));
}

DenseMatrix Critic::backward(std::span<const double> output_grad, bool accumulate) {
  const Vector gh = head_.backward(output_grad, accumulate);
  const Vector gx = trunk_.backward(gh, accumulate);
  DenseMatrix gm(n_, n_);
  const double im = 1.0 / static_cast<double>(n_);
  auto d = gm.data();
  for (std::size_t i = 0; i < n_ * n_; ++i) d[i] = gx[n_ * n_ + i] * im;
  return gm;
}

double Critic::q_value(std::span<const double> output, const RewardWeights& w) const {
  if (mode_ == CriticMode::single) return output[0];
  return w.w1 * output[0] + w.w2 * output[1] + w.w3 * output[2];
}

Vector Critic::q_grad(const RewardWeights& w) const {
  if (mode_ == CriticMode::single) return {1.0};
  return {w.w1, w.w2, w.w3};
}

void Critic::zero_grad() {
  trunk_.zero_grad();
  head_.zero_grad();
}

CriticLoss critic_loss(std::span<const double> pred, const RewardBreakdown& target, CriticMode mode) {
  CriticLoss out;
  if (mode == CriticMode::single) {
    if (pred.size() != 1) throw DimensionError("critic_loss: single mode expects one prediction");
    const double d = pred[0] - target.scalar;
    out.value = d * d;
    out.grad = {2.0 * d};
    return out;
  }
  if (pred.size() != 3) throw DimensionError("critic_loss: multi mode expects three predictions");
  const auto t = target.components();
  out.grad.resize(3);
  for (std::size_t i = 0; i < 3; ++i) {
    const double d = pred[i] - t[i];
    out.value += d * d;
    out.grad[i] = 2.0 * d;
  }
  return out;
}

// ---- exploration ----------------------------------------------------------

DenseMatrix explore_symmetric(const DenseMatrix& m, double sigma, Rng& rng) {
  if (!m.square()) throw DimensionError("explore_symmetric: expected a square matrix");
  if (!(sigma >= 0.0)) throw UsageError("explore_symmetric: sigma must be >= 0");
  if (sigma == 0.0) return m;
  const std::size_t n = m.rows();
  std::normal_distribution<double> gauss(0.0, sigma);
  DenseMatrix e(n, n);
  for (double& x : e.data()) x = gauss(rng);
  DenseMatrix out = m;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) += e(i, j) + e(j, i);
  return out;
}

DenseMatrix explore_sparsify(const DenseMatrix& m, const DenseMatrix& r) {
  if (!m.square() || r.rows() != m.rows() || r.cols() != m.cols()) {
    throw DimensionError("explore_sparsify: shape mismatch");
  }
  const std::size_t n = m.rows();
  DenseMatrix out = m;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      if (r(i, j) != 0.0) out(i, j) = out(j, i) = 0.0;
    }
  return out;
}

DenseMatrix explore_sparsify(const DenseMatrix& m, Rng& rng, double p) {
  if (!m.square()) throw DimensionError("explore_sparsify: expected a square matrix");
  const std::size_t n = m.rows();
  std::bernoulli_distribution coin(p);
  DenseMatrix r(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) r(i, j) = coin(rng) ? 1.0 : 0.0;
  return explore_sparsify(m, r);
}

// ---- replay buffer --------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : entries_(capacity) {
  if (capacity == 0) throw UsageError("ReplayBuffer: capacity must be >= 1");
}

void ReplayBuffer::append(ReplayEntry entry) {
  const std::size_t cap = entries_.size();
  if (size_ < cap) {
    entries_[(head_ + size_) % cap] = std::move(entry);
    ++size_;
  } else {
    entries_[head_] = std::move(entry);
    head_ = (head_ + 1) % cap;
  }
}

const ReplayEntry& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw UsageError("ReplayBuffer::at: index out of range");
  return entries_[(head_ + i) % entries_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t batch, Rng& rng) const {
  if (size_ == 0) throw UsageError("ReplayBuffer::sample: buffer is empty");
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<std::size_t> out(batch);
  for (std::size_t& i : out) i = pick(rng);
  return out;
}

std::vector<const ReplayEntry*> ReplayBuffer::sample(std::size_t batch, Rng& rng) const {
  std::vector<const ReplayEntry*> out;
  for (std::size_t i : sample_indices(batch, rng)) out.push_back(&at(i));
  return out;
}

// ---- schedules ------------------------------------------------------------

SchedulerState SchedulerState::cosine(double v_min, double v_max, double period, double phase) {
  SchedulerState s;
  s.v_min = v_min;
  s.v_max = v_max;
  s.period = period;
  s.phase = phase;
  s.validate();
  return s;
}

SchedulerState SchedulerState::fixed(double value) {
  SchedulerState s;
  s.v_min = s.v_max = value;
  s.constant = true;
  return s;
}

double SchedulerState::value_at(double time) const {
  if (constant) return v_max;
  const double tau = std::fmod(time, period);
  const double c = std::cos(2.0 * std::numbers::pi * tau / period + phase);
  const double v = v_min + 0.5 * (1.0 + c) * (v_max - v_min);
  return std::clamp(v, v_min, v_max);
}

void SchedulerState::validate() const {
  if (!(period > 0.0)) throw UsageError("scheduler: period must be > 0");
  if (!(v_min <= v_max)) throw UsageError("scheduler: v_min must be <= v_max");
}

}  // namespace pearl
