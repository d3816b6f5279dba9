#pragma once

// Pretraining, the actor-critic training loop, and evaluation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pearl/actors.hpp"
#include "pearl/baselines.hpp"
#include "pearl/environment.hpp"
#include "pearl/neural.hpp"
#include "pearl/problem.hpp"

namespace pearl {

enum class TrainMode { cond, critic, dual_fixed, dual_cosine };

std::string to_string(TrainMode m);
TrainMode parse_train_mode(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::dual_cosine;
  std::size_t epochs = 2000;
  std::size_t steps_per_epoch = 1;
  std::size_t wait = 1;  // update every `wait` steps
  std::size_t batch_size = 4;
  std::size_t buffer_capacity = 512;

  SchedulerState gamma;  // condition-loss weight
  SchedulerState eps;    // exploration probability

  std::size_t max_iterations = 100;  // N
  double tolerance = 1e-6;
  RewardWeights weights;

  OptimizerConfig actor_opt;
  OptimizerConfig critic_opt;
  double explore_sigma = 0.02;
  double sparsify_p = 0.5;
  double log_clamp = 1e-8;

  std::uint64_t seed = 0;
  ProblemConfig problem;
  std::shared_ptr<const Dataset> dataset;  // null: generate systems on the fly

  std::filesystem::path checkpoint_path;  // empty: no checkpoints
  std::size_t checkpoint_every = 0;       // epochs; 0 means only at the end
  std::filesystem::path telemetry_path;   // empty: no CSV

  void validate() const;
};

/// Schedules and loss weights implied by the mode: cond (gamma 1, eps 0),
/// critic (gamma 0, cosine eps), dual_fixed (gamma 1, eps 0.1) and
/// dual_cosine (gamma in [0.1, 1], eps in [0.05, 0.6], period 500, eps phase
/// pi/5).
void apply_mode_defaults(TrainConfig& config);

struct TraceRecord {
  std::uint64_t step = 0;
  TrainMode mode = TrainMode::cond;
  double gamma = 0.0;
  double eps = 0.0;
  double actor_loss = 0.0;
  std::optional<double> critic_loss;  // absent in cond mode
  double reward_scalar = 0.0;
  std::optional<double> cond_current;  // absent in critic mode
  double wallclock_ms = 0.0;
  double actor_grad_norm = 0.0;   // applied (post-clip) norm
  double critic_grad_norm = 0.0;  // applied (post-clip) norm
};

struct TrainTrace {
  std::vector<TraceRecord> records;
  std::size_t critic_evaluations = 0;  // critic forward passes
  std::size_t condition_evaluations = 0;  // singular-triplet solves in the actor loss
  std::size_t steps = 0;
  std::size_t updates = 0;
  std::size_t buffer_appends = 0;
  std::size_t explored = 0;  // appended entries that received any exploration
};

/// Fields compared, wall clock excluded.
bool same_trace(const TrainTrace& x, const TrainTrace& y);

std::string telemetry_header();
std::string telemetry_row(const TraceRecord& r);
void write_telemetry(const std::filesystem::path& path, const TrainTrace& trace);

struct PretrainConfig {
  std::size_t steps = 200;
  std::size_t batch_size = 4;
  OptimizerConfig opt;
  std::uint64_t seed = 0;
};

/// Minimizes sigma_max/sigma_min of A pi(A) over `systems`. Records one trace
/// row per step (actor_loss = batch-mean condition number). When `fill` is
/// given, every produced (A, b, M) is appended to it.
TrainTrace pretrain_actor(Actor& actor, const std::vector<LinearSystem>& systems,
                          const PretrainConfig& config, ReplayBuffer* fill = nullptr);

/// Fits the critic to rewards of the buffer entries.
TrainTrace pretrain_critic(Critic& critic, const ReplayBuffer& buffer, std::size_t steps,
                           const TrainConfig& config);

struct TrainState {
  Actor actor;
  Critic critic;
  Optimizer actor_opt;
  Optimizer critic_opt;
  std::size_t epoch = 0;  // epochs completed
  std::uint64_t step = 0;  // environment steps completed
  std::uint64_t updates = 0;
};

/// Fresh actor/critic/optimizers from the seed.
TrainState make_train_state(const TrainConfig& config, const ActorConfig& actor_config,
                            const CriticConfig& critic_config);

/// Observation points inside an update, for instrumentation.
struct TrainHooks {
  std::function<void(const TrainState&)> before_actor_step;
  std::function<void(const TrainState&)> after_actor_step;
};

/// Runs the training loop from state.epoch up to config.epochs. A caller
/// supplied `buffer` replaces the internal one and outlives the call.
TrainTrace train(const TrainConfig& config, TrainState& state, ReplayBuffer* buffer = nullptr,
                 const TrainHooks& hooks = {});

Checkpoint to_checkpoint(const TrainConfig& config, const TrainState& state);
/// Restores a state saved by to_checkpoint; the replay buffer starts empty.
TrainState from_checkpoint(const Checkpoint& ck);
Actor actor_from_checkpoint(const Checkpoint& ck);

// ---- evaluation -----------------------------------------------------------

/// A preconditioner as an operator and/or an explicit matrix. Missing pieces
/// are derived; both empty means no preconditioning.
struct Preconditioner {
  LinearOperator op;
  DenseMatrix m;
};

using EvalPolicy = std::function<Preconditioner(const LinearSystem&)>;

EvalPolicy identity_policy();
EvalPolicy oracle_inverse_policy();
EvalPolicy actor_policy(const Actor& actor);
EvalPolicy baseline_policy(BaselineKind kind);

struct EvalRow {
  std::size_t index = 0;
  double cond = 0.0;  // kappa(A M)
  std::size_t iterations = 0;
  bool converged = false;
  bool invalid = false;  // PCG aborted on a non-SPD preconditioner
  double final_residual = 0.0;
  std::vector<double> residual_norms;  // filled when traces are requested
};

struct EvalStats {
  std::vector<EvalRow> rows;
  double cond_mean = 0.0, cond_std = 0.0;
  double iter_mean = 0.0, iter_std = 0.0;
  double converged_fraction = 0.0;
};

struct EvalOptions {
  std::size_t max_iterations = 100;
  double tolerance = 1e-6;
  bool keep_traces = false;
  bool compute_cond = true;
};

/// Unconverged or aborted solves count as N iterations.
EvalStats evaluate(const EvalPolicy& policy, const std::vector<LinearSystem>& systems,
                   const EvalOptions& options);

}  // namespace pearl
