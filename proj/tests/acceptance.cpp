// Acceptance run: one PASS/FAIL line per criterion, printed and also written
// to acceptance_report.txt in the working directory. Pass criterion numbers as
// arguments to run a subset. Exits 0 whenever the run itself completes; the
// verdicts are in the output.

#include <fmt/core.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "pearl/actors.hpp"
#include "pearl/baselines.hpp"
#include "pearl/environment.hpp"
#include "pearl/error.hpp"
#include "pearl/linalg.hpp"
#include "pearl/neural.hpp"
#include "pearl/problem.hpp"
#include "pearl/trainer.hpp"
#include "support.hpp"

using namespace pearl;
using namespace pearl::testing;

namespace {

// ---- pinned tolerances and budgets ------------------------------------------

constexpr double kBoundSlack = 1e-6;          // criterion 1
constexpr double kGradRelTol = 1e-4;          // criterion 2
constexpr double kKappaLo = 3000.0;           // criterion 3
constexpr double kKappaHi = 12000.0;
constexpr double kUnconvergedFrac = 0.95;
constexpr double kCondRatio = 0.10;           // criterion 4
constexpr double kIterRatio = 0.60;
constexpr std::size_t kMaxUpdates = 2000;
constexpr std::size_t kHeldOut = 32;
constexpr std::size_t kModeGrid = 8;          // criterion 5
constexpr std::size_t kModeEpochs = 300;
constexpr double kModeSlack = 1.0;
constexpr double kSchedTol = 1e-12;           // criterion 6
constexpr double kIc0WinFrac = 0.90;          // criterion 8

constexpr double kLimit1 = 30.0, kLimit2 = 60.0, kLimit3 = 300.0, kLimit4 = 1200.0;

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Verdict within_time(Verdict v, double elapsed, double limit) {
  if (elapsed > limit) {
    v.pass = false;
    v.detail += fmt::format("; runtime {:.1f}s over {:.0f}s", elapsed, limit);
  }
  return v;
}

double a_norm(const DenseMatrix& a, const std::vector<double>& e) {
  double s = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = 0; j < e.size(); ++j) s += e[i] * a(i, j) * e[j];
  return std::sqrt(std::max(s, 0.0));
}

double rel_l2(std::span<const double> analytic, std::span<const double> numeric) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    num += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    den += numeric[i] * numeric[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// Plain Cholesky, used as an SPD oracle.
bool oracle_spd(const DenseMatrix& m) {
  const std::size_t n = m.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (std::abs(m(i, j) - m(j, i)) > 1e-12 * (1.0 + std::abs(m(i, j)))) return false;
  DenseMatrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0)) return false;
    l(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / l(j, j);
    }
  }
  return true;
}

// ---- 1 ----------------------------------------------------------------------

Verdict criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr std::size_t systems = 50, n = 50;
  std::size_t checked = 0, violations = 0;
  double worst = 0.0;
  for (std::size_t s = 0; s < systems; ++s) {
    const double kappa = std::pow(10.0, 1.0 + 3.0 * static_cast<double>(s) / (systems - 1));
    Rng rng = stream_rng(1001, Stream::system, s);
    const DenseMatrix a = random_spd(n, kappa, rng);
    const std::vector<double> x_star = random_vector(n, rng);
    const DenseMatrix ax = naive_matmul(a, DenseMatrix(n, 1, x_star));
    const Vector b(ax.data().begin(), ax.data().end());
    const double rho = (std::sqrt(kappa) - 1.0) / (std::sqrt(kappa) + 1.0);
    double e0 = 0.0;
    cg_solve(a, b, 4 * n, 1e-12, [&](std::size_t k, const Vector& x) {
      std::vector<double> e(n);
      for (std::size_t i = 0; i < n; ++i) e[i] = x[i] - x_star[i];
      const double ek = a_norm(a, e);
      if (k == 0) e0 = ek;
      const double bound = 2.0 * std::pow(rho, static_cast<double>(k)) * e0 * (1.0 + kBoundSlack);
      ++checked;
      if (ek > bound) ++violations;
      if (bound > 0.0) worst = std::max(worst, ek / bound);
    });
  }
  Verdict v{violations == 0, fmt::format("{} iterates over {} systems, {} violations, max ratio {:.3g}",
                                         checked, systems, violations, worst)};
  return within_time(v, seconds_since(t0), kLimit1);
}

// ---- 2 ----------------------------------------------------------------------

double mlp_loss(const Mlp& net, const std::vector<double>& x, const std::vector<double>& c) {
  const Vector y = net.predict(x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
  return s;
}

double mlp_grad_error(std::uint64_t seed) {
  static const std::vector<std::vector<LayerSpec>> shapes{
      {{8, Activation::relu}, {8, Activation::relu}, {3, Activation::identity}},
      {{6, Activation::sigmoid}, {4, Activation::sigmoid}},
      {{10, Activation::relu}, {5, Activation::sigmoid}},
      {{7, Activation::identity}, {7, Activation::relu}, {2, Activation::sigmoid}},
      {{12, Activation::relu}, {1, Activation::identity}},
  };
  Rng rng = stream_rng(seed, Stream::init, 0);
  Mlp net = Mlp::init({6, shapes[seed % shapes.size()]}, rng);
  // Nonzero biases keep relu pre-activations off the kink.
  for (Layer& l : net.mutable_layers())
    for (double& b : l.b) b = 0.1 + 0.05 * random_vector(1, rng)[0];
  const std::vector<double> x = random_vector(6, rng);
  const std::vector<double> c = random_vector(net.outputs(), rng);
  net.zero_grad();
  net.forward(x);
  net.backward(c);
  const std::vector<double> analytic = net.flat_grads();
  std::vector<double> p = net.flat_params(), numeric(p.size());
  const double h = 1e-5;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double keep = p[i];
    p[i] = keep + h;
    net.set_flat_params(p);
    const double up = mlp_loss(net, x, c);
    p[i] = keep - h;
    net.set_flat_params(p);
    const double down = mlp_loss(net, x, c);
    p[i] = keep;
    numeric[i] = (up - down) / (2 * h);
  }
  return rel_l2(analytic, numeric);
}

// Returns a negative value when the instance has near-degenerate extreme
// singular values and should be skipped.
double condition_grad_error(LossMode mode, Rng& rng) {
  constexpr std::size_t n = 8;
  const DenseMatrix a = random_spd(n, 50.0, rng);
  const DenseMatrix m = add(DenseMatrix::identity(n), scaled(random_matrix(n, n, rng), 0.2));
  const std::vector<double> sv = oracle_singular_values(naive_matmul(a, m));
  if (sv[0] - sv[1] < 1e-2 * sv[0] || sv[n - 2] - sv[n - 1] < 1e-2 * sv[n - 1]) return -1.0;
  const double gamma = 0.7;
  const ConditionLoss cl = condition_loss(a, m, gamma, mode);
  // The finite differences evaluate the loss through the oracle singular values.
  auto value = [&](const DenseMatrix& mm) {
    const std::vector<double> s = oracle_singular_values(naive_matmul(a, mm));
    const double ratio = s.front() / s.back();
    return mode == LossMode::pretrain ? ratio : gamma * std::log(std::max(std::log(ratio), 1e-8));
  };
  std::vector<double> numeric(m.size());
  const double h = 1e-6;
  for (std::size_t k = 0; k < m.size(); ++k) {
    DenseMatrix mp = m, mm = m;
    mp.data()[k] += h;
    mm.data()[k] -= h;
    numeric[k] = (value(mp) - value(mm)) / (2 * h);
  }
  return rel_l2(cl.grad_m.data(), numeric);
}

Verdict criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int instances = 5;
  double worst_mlp = 0.0, worst_actor = 0.0, worst_pre = 0.0;
  for (int i = 0; i < instances; ++i) worst_mlp = std::max(worst_mlp, mlp_grad_error(200 + i));
  Rng rng = stream_rng(2002, Stream::system, 0);
  for (LossMode mode : {LossMode::actor, LossMode::pretrain}) {
    double& worst = mode == LossMode::actor ? worst_actor : worst_pre;
    for (int done = 0; done < instances;) {
      const double e = condition_grad_error(mode, rng);
      if (e < 0.0) continue;
      worst = std::max(worst, e);
      ++done;
    }
  }
  const bool ok = worst_mlp < kGradRelTol && worst_actor < kGradRelTol && worst_pre < kGradRelTol;
  Verdict v{ok, fmt::format("max rel error over {} instances each: mlp {:.2e}, cond term {:.2e}, "
                            "pretrain loss {:.2e} (limit {:.0e})",
                            instances, worst_mlp, worst_actor, worst_pre, kGradRelTol)};
  return within_time(v, seconds_since(t0), kLimit2);
}

// ---- 3 ----------------------------------------------------------------------

Verdict criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  ProblemConfig pc;
  pc.grid = 25;
  const Dataset d = generate_dataset(pc, 100, 3003);
  std::vector<double> kappas;
  std::size_t unconverged = 0;
  for (const LinearSystem& s : d.systems) {
    kappas.push_back(condition_number(s.a));
    unconverged += !cg_solve(s.a, s.b, 25, 1e-6).report.converged;
  }
  const double med = median(kappas);
  const double frac = static_cast<double>(unconverged) / static_cast<double>(d.systems.size());
  const bool kappa_ok = med >= kKappaLo && med <= kKappaHi;
  const bool cg_ok = frac >= kUnconvergedFrac;
  Verdict v{kappa_ok && cg_ok,
            fmt::format("median kappa {:.1f} (band [{:.0f}, {:.0f}] {}), CG N=25 unconverged {:.2f} "
                        "(need {:.2f} {})",
                        med, kKappaLo, kKappaHi, kappa_ok ? "ok" : "missed", frac, kUnconvergedFrac,
                        cg_ok ? "ok" : "missed")};
  return within_time(v, seconds_since(t0), kLimit3);
}

// ---- 4 ----------------------------------------------------------------------

TrainConfig desk_config(TrainMode mode, std::size_t grid, std::size_t epochs, std::uint64_t seed) {
  TrainConfig c;
  c.mode = mode;
  apply_mode_defaults(c);
  c.epochs = epochs;
  c.seed = seed;
  c.problem.grid = grid;
  c.max_iterations = grid * grid;
  return c;
}

CriticConfig desk_critic() {
  CriticConfig cc;
  cc.hidden = {100, 100};
  return cc;
}

Verdict criterion4() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr std::size_t grid = 10, epochs = 500, pretrain_steps = 300;
  TrainConfig c = desk_config(TrainMode::dual_cosine, grid, epochs, 4004);
  c.max_iterations = 100;
  TrainState st = make_train_state(c, ActorConfig{}, desk_critic());

  PretrainConfig pc;
  pc.steps = pretrain_steps;
  pc.seed = c.seed;
  const Dataset pre = generate_dataset(c.problem, 64, derive_seed(c.seed, Stream::pretrain, 0));
  const Dataset held = generate_dataset(c.problem, kHeldOut, derive_seed(c.seed, Stream::dataset, 1));
  EvalOptions eo;
  eo.max_iterations = 100;
  const EvalStats base = evaluate(identity_policy(), held.systems, eo);

  const TrainTrace pt = pretrain_actor(st.actor, pre.systems, pc);
  const EvalStats warm = evaluate(actor_policy(st.actor), held.systems, eo);
  const TrainTrace tr = train(c, st);
  const std::size_t updates = pt.updates + tr.updates;
  const EvalStats ours = evaluate(actor_policy(st.actor), held.systems, eo);
  const double cr = ours.cond_mean / base.cond_mean, ir = ours.iter_mean / base.iter_mean;
  const bool ok = cr <= kCondRatio && ir <= kIterRatio && updates <= kMaxUpdates;
  Verdict v{ok, fmt::format("{} updates; kappa {:.2f} -> {:.2f} (ratio {:.3f}, need <= {:.2f}); "
                            "iterations {:.2f} -> {:.2f} (ratio {:.3f}, need <= {:.2f}); "
                            "after pretraining only: kappa {:.2f}, iterations {:.2f}",
                            updates, base.cond_mean, ours.cond_mean, cr, kCondRatio, base.iter_mean,
                            ours.iter_mean, ir, kIterRatio, warm.cond_mean, warm.iter_mean)};
  return within_time(v, seconds_since(t0), kLimit4);
}

// ---- 5 ----------------------------------------------------------------------

Verdict criterion5() {
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const std::vector<TrainMode> modes{TrainMode::cond, TrainMode::critic, TrainMode::dual_fixed,
                                     TrainMode::dual_cosine};
  int holding = 0;
  std::string detail;
  for (std::uint64_t seed : seeds) {
    ProblemConfig pc;
    pc.grid = kModeGrid;
    const Dataset held = generate_dataset(pc, kHeldOut, derive_seed(seed, Stream::dataset, 1));
    EvalOptions eo;
    eo.max_iterations = kModeGrid * kModeGrid;
    eo.compute_cond = false;
    const double none = evaluate(identity_policy(), held.systems, eo).iter_mean;
    std::map<TrainMode, double> it;
    for (TrainMode m : modes) {
      const TrainConfig c = desk_config(m, kModeGrid, kModeEpochs, seed);
      TrainState st = make_train_state(c, ActorConfig{}, desk_critic());
      train(c, st);
      it[m] = evaluate(actor_policy(st.actor), held.systems, eo).iter_mean;
    }
    const bool ok = it[TrainMode::critic] >= none && it[TrainMode::cond] < none &&
                    it[TrainMode::dual_fixed] < none && it[TrainMode::dual_cosine] < none &&
                    it[TrainMode::dual_cosine] <= it[TrainMode::dual_fixed] + kModeSlack;
    holding += ok;
    detail += fmt::format("{}seed {}: none {:.2f} cond {:.2f} critic {:.2f} dual_fixed {:.2f} "
                          "dual_cosine {:.2f} {}",
                          detail.empty() ? "" : "; ", seed, none, it[TrainMode::cond],
                          it[TrainMode::critic], it[TrainMode::dual_fixed],
                          it[TrainMode::dual_cosine], ok ? "holds" : "broken");
  }
  return {holding >= 2, fmt::format("ranking holds on {}/3 seeds ({})", holding, detail)};
}

// ---- 6 ----------------------------------------------------------------------

Verdict criterion6() {
  struct Case {
    double lo, hi, period;
  };
  const std::vector<Case> cases{{0.0, 1.0, 500.0}, {0.05, 0.6, 500.0}, {0.1, 1.0, 100.0}, {-2.0, 3.0, 7.0}};
  Rng rng = stream_rng(6006, Stream::sample, 0);
  std::uniform_real_distribution<double> u(0.0, 1e5);
  double worst_end = 0.0, worst_period = 0.0;
  for (const Case& k : cases) {
    const SchedulerState s = SchedulerState::cosine(k.lo, k.hi, k.period, 0.0);
    worst_end = std::max({worst_end, std::abs(s.value_at(0.0) - k.hi),
                          std::abs(s.value_at(k.period / 2.0) - k.lo)});
    for (int i = 0; i < 10000; ++i) {
      const double t = i % 2 ? std::floor(u(rng)) : u(rng);
      worst_period = std::max(worst_period, std::abs(s.value_at(t + k.period) - s.value_at(t)));
    }
  }
  return {worst_end <= kSchedTol && worst_period <= kSchedTol,
          fmt::format("max endpoint error {:.2e}, max periodicity error {:.2e} over {} samples (limit {:.0e})",
                      worst_end, worst_period, 10000 * cases.size(), kSchedTol)};
}

// ---- 7 ----------------------------------------------------------------------

Verdict criterion7() {
  std::vector<std::string> broken;
  auto check = [&](const std::string& name, const std::function<bool()>& f) {
    try {
      if (!f()) broken.push_back(name);
    } catch (const std::exception& e) {
      broken.push_back(name + " (" + e.what() + ")");
    }
  };
  ProblemConfig pc;
  pc.grid = 5;
  const Dataset d = generate_dataset(pc, 20, 7007);

  check("exploration symmetry", [&] {
    Rng rng = stream_rng(7007, Stream::explore, 0);
    for (const LinearSystem& s : d.systems) {
      const DenseMatrix m = explore_symmetric(s.a, 0.05, rng);
      for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < i; ++j)
          if (m(i, j) != m(j, i)) return false;
    }
    return true;
  });
  check("IC assembly SPD", [&] {
    ActorConfig ac;
    ac.alpha = 0.1;
    for (std::size_t t = 0; t < d.systems.size(); ++t) {
      Rng rng = stream_rng(7007, Stream::init, t);
      const Actor actor = Actor::create(ac, 25, rng);
      if (!oracle_spd(actor.predict(d.systems[t].a).m)) return false;
    }
    return true;
  });
  check("zero-fill pattern", [&] {
    for (const LinearSystem& s : d.systems) {
      const DenseMatrix l = ic0(s.a), w = ilu0(s.a);
      for (std::size_t i = 0; i < s.n(); ++i)
        for (std::size_t j = 0; j < s.n(); ++j) {
          if (s.a(i, j) != 0.0) continue;
          if (w(i, j) != 0.0 || (i >= j && l(i, j) != 0.0)) return false;
        }
    }
    return true;
  });
  check("sparsify pattern", [&] {
    Rng rng = stream_rng(7007, Stream::explore, 1);
    for (const LinearSystem& s : d.systems) {
      const DenseMatrix m = explore_sparsify(s.a, rng);
      for (std::size_t k = 0; k < m.size(); ++k)
        if (s.a.data()[k] == 0.0 && m.data()[k] != 0.0) return false;
    }
    return true;
  });
  check("buffer uniformity", [&] {
    constexpr std::size_t cap = 20, draws = 100000;
    ReplayBuffer buf(cap);
    for (std::size_t i = 0; i < cap + 7; ++i) buf.append({d.systems[0].a, d.systems[0].b, d.systems[0].a});
    Rng rng = stream_rng(7007, Stream::sample, 0);
    std::vector<double> counts(cap, 0.0);
    for (std::size_t idx : buf.sample_indices(draws, rng)) counts.at(idx) += 1.0;
    const double e = static_cast<double>(draws) / cap;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - e) * (c - e) / e;
    return chi2 < 43.82;  // chi-square, 19 dof, p = 0.001
  });
  check("reward determinism", [&] {
    for (const LinearSystem& s : d.systems) {
      const DenseMatrix m = DenseMatrix::identity(s.n());
      const RewardBreakdown r1 = compute_reward(s.a, s.b, m, RewardWeights{}, 25, 1e-6);
      const RewardBreakdown r2 = compute_reward(s.a, s.b, m, RewardWeights{}, 25, 1e-6);
      if (r1.scalar != r2.scalar || r1.iterations != r2.iterations) return false;
    }
    return true;
  });
  check("reproducible trace", [&] {
    TrainConfig c = desk_config(TrainMode::dual_cosine, 3, 8, 7007);
    c.batch_size = 2;
    CriticConfig cc;
    cc.hidden = {16, 16};
    TrainState s1 = make_train_state(c, ActorConfig{}, cc);
    TrainState s2 = make_train_state(c, ActorConfig{}, cc);
    const TrainTrace t1 = train(c, s1), t2 = train(c, s2);
    return same_trace(t1, t2) && s1.actor.models()[0]->flat_params() == s2.actor.models()[0]->flat_params();
  });
  std::string detail = broken.empty() ? "all 7 invariant checks hold" : "broken:";
  for (const std::string& b : broken) detail += " " + b + ";";
  return {broken.empty(), detail};
}

// ---- 8 ----------------------------------------------------------------------

Verdict criterion8() {
  ProblemConfig pc;
  pc.grid = 10;
  const Dataset d = generate_dataset(pc, 100, 8008);
  std::size_t wins = 0;
  for (const LinearSystem& s : d.systems) {
    const SolveResult cg = cg_solve(s.a, s.b, 100, 1e-6);
    const SolveResult pcg = pcg_run(s.a, s.b, build_baseline(BaselineKind::ic0, s.a).op(), 100, 1e-6);
    wins += pcg.report.iterations < cg.report.iterations;
  }
  const double frac = static_cast<double>(wins) / static_cast<double>(d.systems.size());
  return {frac >= kIc0WinFrac, fmt::format("IC(0) fewer iterations on {}/{} systems (need {:.0f}%)", wins,
                                           d.systems.size(), 100 * kIc0WinFrac)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Verdict()>> criteria{criterion1, criterion2, criterion3, criterion4,
                                                      criterion5, criterion6, criterion7, criterion8};
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  std::ofstream report("acceptance_report.txt");
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i]();
    } catch (const std::exception& e) {
      v = {false, fmt::format("error: {}", e.what())};
    }
    failed += !v.pass;
    const std::string line =
        fmt::format("criterion {}: {} [{:.1f}s] {}\n", id, v.pass ? "PASS" : "FAIL", seconds_since(t0), v.detail);
    fmt::print("{}", line);
    std::fflush(stdout);
    report << line << std::flush;
  }
  fmt::print("{} criteria failed\n", failed);
  report << failed << " criteria failed\n";
  return 0;
}
