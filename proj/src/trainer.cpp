#include "pearl/trainer.hpp"

#include <chrono>
#include <cstring>
#include <cmath>
#include <fstream>
#include <numbers>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pearl/error.hpp"

namespace pearl {

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::cond: return "cond";
    case TrainMode::critic: return "critic";
    case TrainMode::dual_fixed: return "dual_fixed";
    case TrainMode::dual_cosine: return "dual_cosine";
  }
  return "cond";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "cond") return TrainMode::cond;
  if (s == "critic") return TrainMode::critic;
  if (s == "dual_fixed") return TrainMode::dual_fixed;
  if (s == "dual_cosine") return TrainMode::dual_cosine;
  throw UsageError("unknown training mode '" + s + "' (cond, critic, dual_fixed, dual_cosine)");
}

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) throw UsageError("train config: " + what);
  };
  check(steps_per_epoch >= 1, "steps_per_epoch must be >= 1");
  check(wait >= 1, "wait must be >= 1");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(buffer_capacity >= 1, "buffer_capacity must be >= 1");
  check(max_iterations >= 1, "max_iterations must be >= 1");
  check(tolerance > 0.0, "tolerance must be > 0");
  check(actor_opt.lr > 0.0, "actor learning rate must be > 0");
  check(critic_opt.lr > 0.0, "critic learning rate must be > 0");
  check(explore_sigma >= 0.0, "explore_sigma must be >= 0");
  check(sparsify_p >= 0.0 && sparsify_p <= 1.0, "sparsify_p must be in [0, 1]");
  check(log_clamp > 0.0, "log_clamp must be > 0");
  gamma.validate();
  eps.validate();
  check(eps.v_min >= 0.0 && eps.v_max <= 1.0, "exploration probability must lie in [0, 1]");
  if (!dataset) problem.validate();
  if (dataset) check(!dataset->systems.empty(), "dataset is empty");
}

void apply_mode_defaults(TrainConfig& config) {
  switch (config.mode) {
    case TrainMode::cond:
      config.gamma = SchedulerState::fixed(1.0);
      config.eps = SchedulerState::fixed(0.0);
      break;
    case TrainMode::critic:
      config.gamma = SchedulerState::fixed(0.0);
      config.eps = SchedulerState::cosine(0.05, 0.6, 500.0, std::numbers::pi / 5.0);
      break;
    case TrainMode::dual_fixed:
      config.gamma = SchedulerState::fixed(1.0);
      config.eps = SchedulerState::fixed(0.1);
      break;
    case TrainMode::dual_cosine:
      config.gamma = SchedulerState::cosine(0.1, 1.0, 500.0, 0.0);
      config.eps = SchedulerState::cosine(0.05, 0.6, 500.0, std::numbers::pi / 5.0);
      break;
  }
}

// ---- telemetry ------------------------------------------------------------

namespace {

std::string num(double v) { return fmt::format("{:.17g}", v); }

bool same_opt(const std::optional<double>& a, const std::optional<double>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return std::memcmp(&*a, &*b, sizeof(double)) == 0;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

bool same_trace(const TrainTrace& x, const TrainTrace& y) {
  if (x.records.size() != y.records.size()) return false;
  for (std::size_t i = 0; i < x.records.size(); ++i) {
    const TraceRecord& a = x.records[i];
    const TraceRecord& b = y.records[i];
    if (a.step != b.step || a.mode != b.mode || !same_bits(a.gamma, b.gamma) ||
        !same_bits(a.eps, b.eps) || !same_bits(a.actor_loss, b.actor_loss) ||
        !same_opt(a.critic_loss, b.critic_loss) || !same_bits(a.reward_scalar, b.reward_scalar) ||
        !same_opt(a.cond_current, b.cond_current) ||
        !same_bits(a.actor_grad_norm, b.actor_grad_norm) ||
        !same_bits(a.critic_grad_norm, b.critic_grad_norm)) {
      return false;
    }
  }
  return x.critic_evaluations == y.critic_evaluations &&
         x.condition_evaluations == y.condition_evaluations && x.steps == y.steps &&
         x.updates == y.updates;
}

std::string telemetry_header() {
  return "step,mode,gamma,eps,actor_loss,critic_loss,reward_scalar,cond_current,wallclock_ms";
}

std::string telemetry_row(const TraceRecord& r) {
  return fmt::format("{},{},{},{},{},{},{},{},{:.3f}", r.step, to_string(r.mode), num(r.gamma),
                     num(r.eps), num(r.actor_loss), r.critic_loss ? num(*r.critic_loss) : "",
                     num(r.reward_scalar), r.cond_current ? num(*r.cond_current) : "",
                     r.wallclock_ms);
}

void write_telemetry(const std::filesystem::path& path, const TrainTrace& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << telemetry_header() << "\r\n";
  for (const TraceRecord& r : trace.records) out << telemetry_row(r) << "\r\n";
}

// ---- pretraining ----------------------------------------------------------

TrainTrace pretrain_actor(Actor& actor, const std::vector<LinearSystem>& systems,
                          const PretrainConfig& config, ReplayBuffer* fill) {
  if (systems.empty()) throw UsageError("pretrain_actor: no systems");
  Optimizer opt(config.opt);
  TrainTrace trace;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t step = 0; step < config.steps; ++step) {
    Rng rng = stream_rng(config.seed, Stream::sample, step);
    std::uniform_int_distribution<std::size_t> pick(0, systems.size() - 1);
    const double scale = 1.0 / static_cast<double>(config.batch_size);
    double loss = 0.0;
    for (std::size_t k = 0; k < config.batch_size; ++k) {
      const LinearSystem& sys = systems[pick(rng)];
      const ActorOutput out = actor.forward(sys.a);
      const ConditionLoss cl = condition_loss(sys.a, out.m, 1.0, LossMode::pretrain);
      ++trace.condition_evaluations;
      loss += cl.value * scale;
      actor.backward(scaled(cl.grad_m, scale));
      if (fill) fill->append({sys.a, sys.b, out.m});
    }
    if (!std::isfinite(loss)) throw NumericalError("pretrain_actor: non-finite loss at step " + std::to_string(step));
    const auto models = actor.models();
    const StepInfo info = opt.step(models);
    TraceRecord r;
    r.step = step;
    r.mode = TrainMode::cond;
    r.gamma = 1.0;
    r.actor_loss = loss;
    r.cond_current = loss;
    r.actor_grad_norm = info.applied_norm;
    r.wallclock_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    trace.records.push_back(r);
    ++trace.updates;
  }
  trace.steps = config.steps;
  return trace;
}

namespace {

struct UpdateResult {
  double actor_loss = 0.0;
  std::optional<double> critic_loss;
  double reward = 0.0;
  std::optional<double> cond;
  double actor_norm = 0.0;
  double critic_norm = 0.0;
};

double critic_update(Critic& critic, Optimizer& opt, const std::vector<const ReplayEntry*>& batch,
                     const std::vector<RewardBreakdown>& rewards, TrainTrace& trace,
                     double* applied_norm) {
  const double scale = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Vector& pred = critic.forward(batch[k]->a, batch[k]->m);
    ++trace.critic_evaluations;
    CriticLoss cl = critic_loss(pred, rewards[k], critic.mode());
    loss += cl.value * scale;
    for (double& g : cl.grad) g *= scale;
    critic.backward(cl.grad, true);
  }
  if (!std::isfinite(loss)) throw NumericalError("critic loss is not finite");
  const auto models = critic.models();
  const StepInfo info = opt.step(models);
  if (applied_norm) *applied_norm = info.applied_norm;
  return loss;
}

}  // namespace

TrainTrace pretrain_critic(Critic& critic, const ReplayBuffer& buffer, std::size_t steps,
                           const TrainConfig& config) {
  if (buffer.empty()) throw UsageError("pretrain_critic: empty buffer");
  Optimizer opt(config.critic_opt);
  TrainTrace trace;
  for (std::size_t step = 0; step < steps; ++step) {
    Rng rng = stream_rng(config.seed, Stream::sample, 0x10000000ULL + step);
    const auto batch = buffer.sample(config.batch_size, rng);
    std::vector<RewardBreakdown> rewards;
    double mean_reward = 0.0;
    for (const ReplayEntry* e : batch) {
      rewards.push_back(compute_reward(e->a, e->b, e->m, config.weights, config.max_iterations,
                                       config.tolerance));
      mean_reward += rewards.back().scalar / static_cast<double>(batch.size());
    }
    TraceRecord r;
    r.step = step;
    r.mode = TrainMode::critic;
    r.critic_loss = critic_update(critic, opt, batch, rewards, trace, &r.critic_grad_norm);
    r.reward_scalar = mean_reward;
    trace.records.push_back(r);
    ++trace.updates;
  }
  trace.steps = steps;
  return trace;
}

// ---- training -------------------------------------------------------------

TrainState make_train_state(const TrainConfig& config, const ActorConfig& actor_config,
                            const CriticConfig& critic_config) {
  const std::size_t n = config.dataset ? config.dataset->systems.front().n()
                                       : config.problem.grid * config.problem.grid;
  Rng actor_rng = stream_rng(config.seed, Stream::init, 0);
  Rng critic_rng = stream_rng(config.seed, Stream::init, 1);
  TrainState s;
  s.actor = Actor::create(actor_config, n, actor_rng);
  s.critic = Critic::create(critic_config, n, critic_rng);
  s.actor_opt = Optimizer(config.actor_opt);
  s.critic_opt = Optimizer(config.critic_opt);
  return s;
}

namespace {

LinearSystem next_system(const TrainConfig& config, std::uint64_t step) {
  if (config.dataset) return config.dataset->systems[step % config.dataset->systems.size()];
  return generate_system(config.problem, derive_seed(config.seed, Stream::system, step));
}

UpdateResult run_update(const TrainConfig& config, TrainState& state, const ReplayBuffer& buffer,
                        double gamma, TrainTrace& trace, const TrainHooks& hooks) {
  UpdateResult res;
  Rng rng = stream_rng(config.seed, Stream::sample, state.updates);
  const auto batch = buffer.sample(config.batch_size, rng);
  const double scale = 1.0 / static_cast<double>(batch.size());

  // Rewards are recomputed for the sampled entries at update time.
  std::vector<RewardBreakdown> rewards;
  for (const ReplayEntry* e : batch) {
    rewards.push_back(compute_reward(e->a, e->b, e->m, config.weights, config.max_iterations,
                                     config.tolerance));
    res.reward += rewards.back().scalar * scale;
  }

  const bool use_critic = config.mode != TrainMode::cond;
  const bool use_cond = config.mode != TrainMode::critic;

  if (use_critic) {
    res.critic_loss =
        critic_update(state.critic, state.critic_opt, batch, rewards, trace, &res.critic_norm);
  }

  if (hooks.before_actor_step) hooks.before_actor_step(state);
  // Actor step. The critic is frozen: its parameter gradients are not
  // accumulated and it is not passed to the optimizer.
  double cond_sum = 0.0;
  for (const ReplayEntry* e : batch) {
    const ActorOutput out = state.actor.forward(e->a);
    DenseMatrix grad(out.m.rows(), out.m.cols());
    double loss = 0.0;
    if (use_cond) {
      const ConditionLoss cl = condition_loss(e->a, out.m, gamma, LossMode::actor, config.log_clamp);
      ++trace.condition_evaluations;
      loss += cl.value;
      grad = cl.grad_m;
      cond_sum += cl.sigma_max / cl.sigma_min;
    }
    if (use_critic) {
      const Vector q_out = state.critic.forward(e->a, out.m);
      ++trace.critic_evaluations;
      loss -= state.critic.q_value(q_out, config.weights);
      const DenseMatrix dq = state.critic.backward(state.critic.q_grad(config.weights), false);
      auto g = grad.data();
      auto d = dq.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= d[i];
    }
    res.actor_loss += loss * scale;
    state.actor.backward(scaled(grad, scale));
  }
  if (!std::isfinite(res.actor_loss)) throw NumericalError("actor loss is not finite");
  const auto models = state.actor.models();
  res.actor_norm = state.actor_opt.step(models).applied_norm;
  if (use_cond) res.cond = cond_sum * scale;
  if (hooks.after_actor_step) hooks.after_actor_step(state);
  ++state.updates;
  return res;
}

void save_state(const TrainConfig& config, const TrainState& state) {
  if (config.checkpoint_path.empty()) return;
  save_checkpoint(config.checkpoint_path, to_checkpoint(config, state));
}

}  // namespace

TrainTrace train(const TrainConfig& config, TrainState& state, ReplayBuffer* external,
                 const TrainHooks& hooks) {
  config.validate();
  TrainTrace trace;
  ReplayBuffer own(external ? 1 : config.buffer_capacity);
  ReplayBuffer& buffer = external ? *external : own;
  SchedulerState gamma_s = config.gamma;
  SchedulerState eps_s = config.eps;
  gamma_s.t = state.epoch;
  eps_s.t = state.epoch;

  std::ofstream telemetry;
  if (!config.telemetry_path.empty()) {
    const bool fresh = !std::filesystem::exists(config.telemetry_path) ||
                       std::filesystem::file_size(config.telemetry_path) == 0;
    telemetry.open(config.telemetry_path, std::ios::app);
    if (!telemetry) throw DataError("cannot open telemetry file " + config.telemetry_path.string());
    if (fresh) telemetry << telemetry_header() << "\r\n";
  }

  const auto t0 = std::chrono::steady_clock::now();
  try {
    for (std::size_t epoch = state.epoch; epoch < config.epochs; ++epoch) {
      const double gamma = gamma_s.value();
      const double eps = eps_s.value();
      for (std::size_t s = 0; s < config.steps_per_epoch; ++s) {
        const std::uint64_t step = state.step;
        const LinearSystem sys = next_system(config, step);
        DenseMatrix m = state.actor.predict(sys.a).m;

        Rng er = stream_rng(config.seed, Stream::explore, step);
        std::bernoulli_distribution coin(eps);
        bool explored = false;
        if (coin(er)) {
          m = explore_symmetric(m, config.explore_sigma, er);
          explored = true;
        }
        if (coin(er)) {
          m = explore_sparsify(m, er, config.sparsify_p);
          explored = true;
        }
        buffer.append({sys.a, sys.b, std::move(m)});
        ++trace.buffer_appends;
        if (explored) ++trace.explored;
        ++state.step;
        ++trace.steps;

        if (state.step % config.wait != 0) continue;
        const UpdateResult u = run_update(config, state, buffer, gamma, trace, hooks);
        ++trace.updates;
        TraceRecord r;
        r.step = state.updates - 1;
        r.mode = config.mode;
        r.gamma = gamma;
        r.eps = eps;
        r.actor_loss = u.actor_loss;
        r.critic_loss = u.critic_loss;
        r.reward_scalar = u.reward;
        r.cond_current = u.cond;
        r.actor_grad_norm = u.actor_norm;
        r.critic_grad_norm = u.critic_norm;
        r.wallclock_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        trace.records.push_back(r);
        if (telemetry) telemetry << telemetry_row(r) << "\r\n";
      }
      gamma_s.step();
      eps_s.step();
      ++state.epoch;
      if (config.checkpoint_every > 0 && state.epoch % config.checkpoint_every == 0) {
        save_state(config, state);
      }
    }
  } catch (const NumericalError& e) {
    spdlog::error("training aborted at step {}: {}", state.step, e.what());
    // Optimizer steps reject non-finite gradients before touching parameters,
    // so the current state is still the last good one.
    save_state(config, state);
    throw;
  }
  save_state(config, state);
  return trace;
}

// ---- checkpoints ----------------------------------------------------------

Checkpoint to_checkpoint(const TrainConfig& config, const TrainState& state) {
  Checkpoint ck;
  const ActorConfig& ac = state.actor.config();
  ck.meta = {{"kind", "pearl-train"},
             {"mode", to_string(config.mode)},
             {"epoch", state.epoch},
             {"step", state.step},
             {"updates", state.updates},
             {"seed", config.seed},
             {"n", state.actor.n()},
             {"actor",
              {{"kind", to_string(ac.kind)},
               {"alpha", ac.alpha},
               {"eps_tol", ac.eps_tol},
               {"scale_input", ac.scale_input}}},
             {"critic", {{"mode", state.critic.mode() == CriticMode::single ? "single" : "multi"}}}};
  ck.models.emplace_back("actor.trunk", state.actor.trunk());
  for (std::size_t k = 0; k < state.actor.heads().size(); ++k) {
    ck.models.emplace_back("actor.head" + std::to_string(k), state.actor.heads()[k]);
  }
  ck.models.emplace_back("critic.trunk", state.critic.trunk());
  ck.models.emplace_back("critic.head", state.critic.head());
  ck.optimizers.emplace_back("actor", state.actor_opt);
  ck.optimizers.emplace_back("critic", state.critic_opt);
  return ck;
}

Actor actor_from_checkpoint(const Checkpoint& ck) {
  try {
    const auto& ja = ck.meta.at("actor");
    ActorConfig ac;
    ac.kind = parse_actor_kind(ja.at("kind").get<std::string>());
    ac.alpha = ja.at("alpha").get<double>();
    ac.eps_tol = ja.at("eps_tol").get<double>();
    ac.scale_input = ja.at("scale_input").get<bool>();
    const auto n = ck.meta.at("n").get<std::size_t>();
    std::vector<Mlp> heads;
    for (std::size_t k = 0; ck.has_model("actor.head" + std::to_string(k)); ++k) {
      heads.push_back(ck.model("actor.head" + std::to_string(k)));
    }
    return Actor(ac, n, ck.model("actor.trunk"), std::move(heads));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
}

TrainState from_checkpoint(const Checkpoint& ck) {
  TrainState s;
  try {
    s.actor = actor_from_checkpoint(ck);
    const auto n = ck.meta.at("n").get<std::size_t>();
    const CriticMode cm = ck.meta.at("critic").at("mode").get<std::string>() == "multi"
                              ? CriticMode::multi
                              : CriticMode::single;
    s.critic = Critic(cm, n, ck.model("critic.trunk"), ck.model("critic.head"));
    s.actor_opt = ck.optimizer("actor");
    s.critic_opt = ck.optimizer("critic");
    s.epoch = ck.meta.at("epoch").get<std::size_t>();
    s.step = ck.meta.at("step").get<std::uint64_t>();
    s.updates = ck.meta.at("updates").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint metadata: ") + e.what());
  }
  return s;
}

// ---- evaluation -----------------------------------------------------------

EvalPolicy identity_policy() {
  return [](const LinearSystem&) { return Preconditioner{}; };
}

EvalPolicy oracle_inverse_policy() {
  return [](const LinearSystem& s) {
    Preconditioner p;
    p.m = inverse(s.a);
    return p;
  };
}

EvalPolicy actor_policy(const Actor& actor) {
  return [&actor](const LinearSystem& s) {
    Preconditioner p;
    p.m = actor.predict(s.a).m;
    return p;
  };
}

EvalPolicy baseline_policy(BaselineKind kind) {
  return [kind](const LinearSystem& s) {
    Preconditioner p;
    p.op = build_baseline(kind, s.a).op();
    return p;
  };
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size())) : 0.0;
}

}  // namespace

EvalStats evaluate(const EvalPolicy& policy, const std::vector<LinearSystem>& systems,
                   const EvalOptions& options) {
  if (systems.empty()) throw UsageError("evaluate: no systems");
  EvalStats stats;
  stats.rows.resize(systems.size());
  std::exception_ptr failure;
  const auto total = static_cast<std::ptrdiff_t>(systems.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t ii = 0; ii < total; ++ii) {
    try {
      const auto i = static_cast<std::size_t>(ii);
      const LinearSystem& sys = systems[i];
      Preconditioner p = policy(sys);
      if (!p.op && !p.m.empty()) p.op = matrix_operator(p.m);
      const SolveResult res = pcg_run(sys.a, sys.b, p.op, options.max_iterations, options.tolerance);
      EvalRow& row = stats.rows[i];
      row.index = i;
      row.converged = res.status == SolveStatus::converged;
      row.invalid = res.status == SolveStatus::invalid_preconditioner ||
                    res.status == SolveStatus::diverged;
      row.iterations = row.converged ? res.report.iterations : options.max_iterations;
      row.final_residual = res.report.final_residual;
      if (options.keep_traces) row.residual_norms = res.report.residual_norms;
      if (options.compute_cond) {
        if (p.m.empty() && p.op) p.m = operator_matrix(p.op, sys.n());
        row.cond = p.m.empty() ? condition_number(sys.a) : condition_number(matmul(sys.a, p.m));
      }
    } catch (...) {
#pragma omp critical(pearl_evaluate_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  std::vector<double> conds, iters;
  std::size_t converged = 0;
  for (const EvalRow& r : stats.rows) {
    conds.push_back(r.cond);
    iters.push_back(static_cast<double>(r.iterations));
    if (r.converged) ++converged;
  }
  mean_std(conds, stats.cond_mean, stats.cond_std);
  mean_std(iters, stats.iter_mean, stats.iter_std);
  stats.converged_fraction = static_cast<double>(converged) / static_cast<double>(systems.size());
  return stats;
}

}  // namespace pearl
