#pragma once

// Actors map a system matrix A to an inverse preconditioner M.
//
// Every kind builds a pre-bias matrix B from sigmoid outputs, zeroes the
// entries of B below eps_tol, and adds alpha*I:
//   ic        B = L L^T
//   ilu       B = L U                (two heads)
//   additive  B = L + L^T - diag(L)
//   full      B = S                  (n x n, unconstrained)
// The threshold mask is treated as a constant when differentiating.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "pearl/linalg.hpp"
#include "pearl/neural.hpp"
#include "pearl/rng.hpp"

namespace pearl {

enum class ActorKind { ic, ilu, additive, full };

std::string to_string(ActorKind k);
ActorKind parse_actor_kind(const std::string& s);

struct ActorConfig {
  ActorKind kind = ActorKind::ic;
  std::vector<std::size_t> hidden;  // empty: two layers of width 4n
  double alpha = 0.1;
  double eps_tol = 0.01;
  bool scale_input = true;  // feed A / ||A||_inf
};

struct PreconditionerFactor {
  ActorKind kind = ActorKind::ic;
  DenseMatrix l;  // lower factor (ic, ilu, additive); n x n sigmoid matrix for full
  DenseMatrix u;  // upper factor, ilu only
  double alpha = 0.1;
  double eps_tol = 0.01;
};

struct ActorOutput {
  PreconditionerFactor factor;
  DenseMatrix m;
};

/// Head output length for one factor of the given kind.
std::size_t head_size(ActorKind kind, std::size_t n);

/// Scatter a head vector into the lower (row-major over i >= j) or upper
/// (row-major over j >= i) triangle.
DenseMatrix scatter_lower(std::span<const double> v, std::size_t n);
DenseMatrix scatter_upper(std::span<const double> v, std::size_t n);

/// Assembly from explicit factors; `mask` receives 1 where B survived the
/// threshold.
DenseMatrix assemble(const PreconditionerFactor& f, DenseMatrix* mask = nullptr);

class Actor {
 public:
  Actor() = default;
  Actor(ActorConfig config, std::size_t n, Mlp trunk, std::vector<Mlp> heads);

  static Actor create(const ActorConfig& config, std::size_t n, Rng& rng);

  /// Forward pass with caches for backward().
  ActorOutput forward(const DenseMatrix& a);
  /// Forward pass that leaves the caches alone.
  ActorOutput predict(const DenseMatrix& a) const;

  /// Accumulates parameter gradients for d(loss)/dM = grad_m through the last
  /// forward().
  void backward(const DenseMatrix& grad_m);

  std::vector<Mlp*> models();
  void zero_grad();

  const ActorConfig& config() const { return config_; }
  ActorConfig& config() { return config_; }
  std::size_t n() const { return n_; }
  const Mlp& trunk() const { return trunk_; }
  Mlp& trunk() { return trunk_; }
  const std::vector<Mlp>& heads() const { return heads_; }
  std::vector<Mlp>& heads() { return heads_; }

 private:
  Vector encode(const DenseMatrix& a) const;
  PreconditionerFactor factors_from(const std::vector<Vector>& head_out) const;

  ActorConfig config_;
  std::size_t n_ = 0;
  Mlp trunk_;
  std::vector<Mlp> heads_;
  // caches
  PreconditionerFactor last_;
  DenseMatrix last_mask_;
  bool cached_ = false;
};

// ---- condition objective ----------------------------------------------------

enum class LossMode { pretrain, actor };

struct ConditionLoss {
  double value = 0.0;
  DenseMatrix grad_m;
  double sigma_max = 0.0;
  double sigma_min = 0.0;
  bool clamped = false;  // actor mode hit the lower clamp; grad_m is zero
};

/// pretrain: sigma_max/sigma_min of P = A M.
/// actor:    gamma * log(max(log sigma_max - log sigma_min, clamp)).
/// dsigma/dM = A^T u v^T for each extreme triplet of P.
ConditionLoss condition_loss(const DenseMatrix& a, const DenseMatrix& m, double gamma,
                             LossMode mode, double clamp = 1e-8);

}  // namespace pearl
