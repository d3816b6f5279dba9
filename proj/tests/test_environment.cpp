#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "pearl/environment.hpp"
#include "pearl/error.hpp"
#include "pearl/problem.hpp"
#include "support.hpp"

using namespace pearl;
using namespace pearl::testing;

namespace {

// Plain loops over the stored layers; shares nothing with Mlp::predict.
Vector oracle_forward(const Mlp& net, Vector x) {
  for (const Layer& ly : net.layers()) {
    Vector y(ly.outputs());
    for (std::size_t i = 0; i < ly.outputs(); ++i) {
      double s = ly.b[i];
      for (std::size_t j = 0; j < ly.inputs(); ++j) s += ly.w(i, j) * x[j];
      switch (ly.activation) {
        case Activation::relu: s = s > 0.0 ? s : 0.0; break;
        case Activation::sigmoid: s = 1.0 / (1.0 + std::exp(-s)); break;
        default: break;
      }
      y[i] = s;
    }
    x = std::move(y);
  }
  return x;
}

Vector oracle_encode(const DenseMatrix& a, const DenseMatrix& m) {
  double row_max = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += std::fabs(a(i, j));
    row_max = std::max(row_max, s);
  }
  Vector x;
  for (double v : a.data()) x.push_back(v / row_max);
  for (double v : m.data()) x.push_back(v / static_cast<double>(a.rows()));
  return x;
}

LinearSystem grid_system(std::size_t grid, std::uint64_t seed) {
  ProblemConfig c;
  c.grid = grid;
  return generate_dataset(c, 1, seed).systems[0];
}

}  // namespace

// ---- reward ---------------------------------------------------------------

TEST(Reward, ExactInverseConvergesInOne) {
  const LinearSystem s = grid_system(4, 1);
  const RewardBreakdown r = compute_reward(s.a, s.b, inverse(s.a), RewardWeights{}, 16, 1e-8);
  EXPECT_TRUE(r.converged);
  EXPECT_EQ(r.iterations, 1u);
  EXPECT_EQ(r.iter_term, 1.0);
}

TEST(Reward, DenseOnesHasNoSparsity) {
  const LinearSystem s = grid_system(3, 2);
  const RewardBreakdown r = compute_reward(s.a, s.b, DenseMatrix(9, 9, 1.0), RewardWeights{}, 9, 1e-6);
  EXPECT_EQ(r.sparsity_term, 0.0);
}

TEST(Reward, IdentityOnGridTenMatchesSolverTrace) {
  const LinearSystem s = grid_system(10, 3);
  const RewardWeights w;
  const std::size_t n_max = 100;
  const RewardBreakdown r = compute_reward(s.a, s.b, DenseMatrix::identity(100), w, n_max, 1e-6);
  const std::vector<double> norms = textbook_pcg(s.a, s.b, DenseMatrix::identity(100), n_max, 1e-6);
  const std::size_t k = norms.size() - 1;
  const bool conv = norms.back() <= 1e-6 * norm2(s.b);
  ASSERT_EQ(r.converged, conv);
  EXPECT_EQ(r.iterations, conv ? k : n_max);
  EXPECT_LT(rel_err(r.residual_term, norms.back()), 1e-6);
  const double sparsity = (100.0 * 100.0 - 100.0) / (100.0 * 100.0);
  EXPECT_DOUBLE_EQ(r.sparsity_term, sparsity);
  const double want = w.w1 / static_cast<double>(r.iterations) + w.w2 * sparsity + w.w3 * r.residual_term;
  EXPECT_NEAR(r.scalar, want, 1e-15);
}

TEST(Reward, UnconvergedUsesN) {
  const LinearSystem s = grid_system(10, 4);
  const RewardBreakdown r = compute_reward(s.a, s.b, DenseMatrix::identity(100), RewardWeights{}, 5, 1e-6);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 5u);
  EXPECT_DOUBLE_EQ(r.iter_term, 0.2);
}

TEST(Reward, IndefinitePreconditionerFlagged) {
  const LinearSystem s = grid_system(3, 5);
  const RewardBreakdown r =
      compute_reward(s.a, s.b, scaled(DenseMatrix::identity(9), -1.0), RewardWeights{}, 9, 1e-6);
  EXPECT_TRUE(r.invalid_preconditioner);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.iterations, 9u);
  EXPECT_TRUE(std::isfinite(r.scalar));
}

TEST(Reward, DeterministicAndComponentInvariants) {
  Rng rng(6);
  ProblemConfig c;
  c.grid = 5;
  const Dataset d = generate_dataset(c, 20, 6);
  for (const LinearSystem& s : d.systems) {
    DenseMatrix m = explore_symmetric(DenseMatrix::identity(25), 0.05, rng);
    m = explore_sparsify(m, rng, 0.3);
    const RewardBreakdown r1 = compute_reward(s.a, s.b, m, RewardWeights{}, 25, 1e-6);
    const RewardBreakdown r2 = compute_reward(s.a, s.b, m, RewardWeights{}, 25, 1e-6);
    ASSERT_EQ(r1.scalar, r2.scalar);
    ASSERT_EQ(r1.iterations, r2.iterations);
    ASSERT_EQ(r1.residual_term, r2.residual_term);
    ASSERT_GE(r1.sparsity_term, 0.0);
    ASSERT_LE(r1.sparsity_term, 1.0);
    ASSERT_GT(r1.iter_term, 0.0);
    ASSERT_LE(r1.iter_term, 1.0);
    ASSERT_GE(r1.residual_term, 0.0);
    const auto& w = r1.weights;
    ASSERT_EQ(r1.scalar, w.w1 * r1.iter_term + w.w2 * r1.sparsity_term + w.w3 * r1.residual_term);
  }
}

// ---- critic ---------------------------------------------------------------

TEST(Critic, ZeroParametersGiveZero) {
  Rng rng(7);
  for (CriticMode mode : {CriticMode::single, CriticMode::multi}) {
    Critic c = Critic::create(CriticConfig{mode, {8}}, 3, rng);
    for (Mlp* m : c.models()) m->set_flat_params(std::vector<double>(m->num_params(), 0.0));
    const Vector out = c.forward(DenseMatrix::identity(3), DenseMatrix::identity(3));
    ASSERT_EQ(out.size(), mode == CriticMode::single ? 1u : 3u);
    for (double v : out) EXPECT_EQ(v, 0.0);
  }
}

TEST(Critic, ForwardMatchesOracle) {
  Rng rng(8);
  for (CriticMode mode : {CriticMode::single, CriticMode::multi}) {
    for (int t = 0; t < 10; ++t) {
      const std::size_t n = 2 + t % 4;
      Critic c = Critic::create(CriticConfig{mode, {}}, n, rng);
      const DenseMatrix a = random_spd(n, 20.0, rng);
      const DenseMatrix m = random_matrix(n, n, rng);
      const Vector got = c.forward(a, m);
      const Vector want = oracle_forward(c.head(), oracle_forward(c.trunk(), oracle_encode(a, m)));
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
  }
}

TEST(Critic, SingleAndMultiShareTrunkActivations) {
  Rng r1(9), r2(9);
  Critic single = Critic::create(CriticConfig{CriticMode::single, {}}, 4, r1);
  Critic multi = Critic::create(CriticConfig{CriticMode::multi, {}}, 4, r2);
  multi.trunk() = single.trunk();
  Rng rng(10);
  const DenseMatrix a = random_spd(4, 10.0, rng), m = random_matrix(4, 4, rng);
  single.forward(a, m);
  multi.forward(a, m);
  EXPECT_EQ(single.trunk_activations(), multi.trunk_activations());
}

TEST(Critic, InputGradientMatchesFiniteDifferences) {
  Rng rng(11);
  for (CriticMode mode : {CriticMode::single, CriticMode::multi}) {
    const std::size_t n = 3;
    Critic c = Critic::create(CriticConfig{mode, {10, 10}}, n, rng);
    for (Mlp* model : c.models())
      for (Layer& ly : model->mutable_layers())
        for (double& b : ly.b) b = 0.05;
    const DenseMatrix a = random_spd(n, 10.0, rng);
    const DenseMatrix m = random_matrix(n, n, rng);
    const RewardWeights w;
    c.forward(a, m);
    const DenseMatrix g = c.backward(c.q_grad(w), false);
    for (std::size_t k = 0; k < m.size(); ++k) {
      DenseMatrix mp = m, mm = m;
      mp.data()[k] += 1e-6;
      mm.data()[k] -= 1e-6;
      const double fd = (c.q_value(c.predict(a, mp), w) - c.q_value(c.predict(a, mm), w)) / 2e-6;
      EXPECT_NEAR(g.data()[k], fd, 1e-7 + 1e-5 * std::fabs(fd));
    }
    // accumulate = false leaves parameter gradients untouched
    for (Mlp* model : c.models())
      for (double v : model->flat_grads()) ASSERT_EQ(v, 0.0);
  }
}

TEST(Critic, DimensionErrors) {
  Rng rng(12);
  Critic c = Critic::create(CriticConfig{}, 3, rng);
  EXPECT_THROW(c.forward(DenseMatrix::identity(3), DenseMatrix::identity(4)), DimensionError);
  EXPECT_THROW(c.forward(DenseMatrix::identity(2), DenseMatrix::identity(2)), DimensionError);
}

TEST(CriticLoss, Examples) {
  RewardBreakdown t;
  t.scalar = 0.5;
  const CriticLoss zero = critic_loss(Vector{0.5}, t, CriticMode::single);
  EXPECT_EQ(zero.value, 0.0);
  const CriticLoss l = critic_loss(Vector{0.0}, t, CriticMode::single);
  EXPECT_DOUBLE_EQ(l.value, 0.25);
  EXPECT_DOUBLE_EQ(l.grad[0], -1.0);
  EXPECT_THROW(critic_loss(Vector{0.0, 1.0}, t, CriticMode::single), DimensionError);
}

TEST(CriticLoss, MultiIsSumOfSquares) {
  Rng rng(13);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int k = 0; k < 20; ++k) {
    RewardBreakdown t;
    t.iter_term = u(rng);
    t.sparsity_term = u(rng);
    t.residual_term = u(rng);
    const Vector p{u(rng), u(rng), u(rng)};
    const double d0 = p[0] - t.iter_term, d1 = p[1] - t.sparsity_term, d2 = p[2] - t.residual_term;
    const CriticLoss l = critic_loss(p, t, CriticMode::multi);
    EXPECT_NEAR(l.value, d0 * d0 + d1 * d1 + d2 * d2, 1e-14);
    EXPECT_NEAR(l.grad[1], 2 * d1, 1e-14);
  }
}

// ---- exploration ----------------------------------------------------------

TEST(Explore, SymmetricNoise) {
  Rng rng(14);
  const DenseMatrix m = random_spd(5, 10.0, rng);
  EXPECT_EQ(explore_symmetric(m, 0.0, rng), m);
  for (int t = 0; t < 50; ++t) ASSERT_EQ(symmetry_defect(explore_symmetric(m, 0.3, rng)), 0.0);
  EXPECT_THROW(explore_symmetric(m, -1.0, rng), UsageError);
}

TEST(Explore, SymmetricNoiseVariance) {
  Rng rng(15);
  const double sigma = 0.2;
  const DenseMatrix zero(4, 4);
  double off = 0.0, diag = 0.0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    const DenseMatrix e = explore_symmetric(zero, sigma, rng);
    off += e(0, 2) * e(0, 2);
    diag += e(1, 1) * e(1, 1);
  }
  // E_ij + E_ji has variance 2 sigma^2; the diagonal is 2 E_ii with 4 sigma^2
  EXPECT_NEAR(off / trials, 2 * sigma * sigma, 0.1 * 2 * sigma * sigma);
  EXPECT_NEAR(diag / trials, 4 * sigma * sigma, 0.1 * 4 * sigma * sigma);
}

TEST(Explore, SparsifyForcedMasks) {
  Rng rng(16);
  const DenseMatrix m = random_spd(4, 10.0, rng);
  EXPECT_EQ(explore_sparsify(m, DenseMatrix(4, 4)), m);
  EXPECT_EQ(explore_sparsify(m, DenseMatrix(4, 4, 1.0)), DenseMatrix(4, 4));
  // only the upper triangle of R is read
  DenseMatrix r(4, 4);
  r(2, 0) = 1.0;
  EXPECT_EQ(explore_sparsify(m, r), m);
  r(0, 2) = 1.0;
  const DenseMatrix out = explore_sparsify(m, r);
  EXPECT_EQ(out(0, 2), 0.0);
  EXPECT_EQ(out(2, 0), 0.0);
  EXPECT_EQ(out(1, 1), m(1, 1));
}

TEST(Explore, SparsifyStatisticsAndSymmetry) {
  Rng rng(17);
  const std::size_t n = 4;
  const DenseMatrix ones(n, n, 1.0);
  DenseMatrix kept(n, n);
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) {
    const DenseMatrix out = explore_sparsify(ones, rng, 0.5);
    ASSERT_EQ(symmetry_defect(out), 0.0);
    for (std::size_t k = 0; k < out.size(); ++k) kept.data()[k] += out.data()[k];
  }
  const double bound = 3.0 * std::sqrt(trials * 0.25);
  for (double v : kept.data()) EXPECT_NEAR(v, 0.5 * trials, bound);
}

// ---- replay buffer --------------------------------------------------------

TEST(Buffer, FifoEviction) {
  ReplayBuffer buf(2);
  for (int i = 0; i < 3; ++i) buf.append({DenseMatrix(1, 1, i), {}, DenseMatrix()});
  ASSERT_EQ(buf.size(), 2u);
  EXPECT_EQ(buf.at(0).a(0, 0), 1.0);
  EXPECT_EQ(buf.at(1).a(0, 0), 2.0);
  EXPECT_THROW(buf.at(2), UsageError);
  EXPECT_THROW(ReplayBuffer(0), UsageError);
}

TEST(Buffer, SizeNeverExceedsCapacity) {
  ReplayBuffer buf(7);
  for (int i = 0; i < 50; ++i) {
    buf.append({DenseMatrix(1, 1, i), {}, DenseMatrix()});
    ASSERT_LE(buf.size(), 7u);
    // oldest surviving entry is i - size + 1
    ASSERT_EQ(buf.at(0).a(0, 0), static_cast<double>(i + 1 - static_cast<int>(buf.size())));
  }
}

TEST(Buffer, SingleEntryAndEmpty) {
  Rng rng(18);
  ReplayBuffer buf(4);
  EXPECT_THROW(buf.sample(1, rng), UsageError);
  buf.append({DenseMatrix(1, 1, 9.0), {}, DenseMatrix()});
  const auto batch = buf.sample(4, rng);
  ASSERT_EQ(batch.size(), 4u);
  for (const ReplayEntry* e : batch) EXPECT_EQ(e->a(0, 0), 9.0);
}

TEST(Buffer, UniformSampling) {
  Rng rng(19);
  ReplayBuffer buf(10);
  for (int i = 0; i < 15; ++i) buf.append({DenseMatrix(1, 1, i), {}, DenseMatrix()});
  std::vector<int> counts(10, 0);
  const int draws = 100000;
  for (std::size_t i : buf.sample_indices(draws, rng)) ++counts[i];
  const double p = 0.1, bound = 3.0 * std::sqrt(draws * p * (1 - p));
  for (int c : counts) EXPECT_NEAR(c, draws * p, bound);
}

// ---- schedules ------------------------------------------------------------

TEST(Scheduler, Examples) {
  const SchedulerState s = SchedulerState::cosine(0.0, 1.0, 500.0);
  EXPECT_NEAR(s.value_at(0), 1.0, 1e-12);
  EXPECT_NEAR(s.value_at(250), 0.0, 1e-12);
  EXPECT_NEAR(s.value_at(125), 0.5, 1e-12);
  const SchedulerState f = SchedulerState::fixed(0.3);
  EXPECT_EQ(f.value_at(17), 0.3);
  EXPECT_THROW(SchedulerState::cosine(0, 1, 0), UsageError);
  EXPECT_THROW(SchedulerState::cosine(2, 1, 10), UsageError);
}

TEST(Scheduler, StepAdvancesTime) {
  SchedulerState s = SchedulerState::cosine(0.1, 1.0, 4.0);
  EXPECT_NEAR(s.value(), 1.0, 1e-15);
  s.step();
  EXPECT_EQ(s.t, 1u);
  EXPECT_NEAR(s.value(), 0.55, 1e-12);
  s.step();
  EXPECT_NEAR(s.value(), 0.1, 1e-12);
}

TEST(Scheduler, PhaseShift) {
  const SchedulerState s = SchedulerState::cosine(0.0, 2.0, 100.0, std::numbers::pi);
  EXPECT_NEAR(s.value_at(0), 0.0, 1e-12);
  EXPECT_NEAR(s.value_at(50), 2.0, 1e-12);
}

TEST(Scheduler, PeriodicAndBounded) {
  Rng rng(20);
  std::uniform_int_distribution<std::uint64_t> pick(0, 1000000);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 10000; ++k) {
    const double lo = u(rng), hi = lo + u(rng);
    const double period = static_cast<double>(1 + pick(rng) % 1000);
    const SchedulerState s = SchedulerState::cosine(lo, hi, period, 2 * std::numbers::pi * u(rng));
    const double t = static_cast<double>(pick(rng));
    const double v = s.value_at(t);
    ASSERT_EQ(v, s.value_at(t + period));
    ASSERT_GE(v, lo);
    ASSERT_LE(v, hi);
  }
}
