#include "pearl/actors.hpp"

#include <cmath>

#include "pearl/error.hpp"

namespace pearl {

std::string to_string(ActorKind k) {
  switch (k) {
    case ActorKind::ic: return "ic";
    case ActorKind::ilu: return "ilu";
    case ActorKind::additive: return "additive";
    case ActorKind::full: return "full";
  }
  return "ic";
}

ActorKind parse_actor_kind(const std::string& s) {
  if (s == "ic") return ActorKind::ic;
  if (s == "ilu") return ActorKind::ilu;
  if (s == "additive" || s == "additive_symmetric") return ActorKind::additive;
  if (s == "full") return ActorKind::full;
  throw DataError("unknown actor kind '" + s + "'");
}

std::size_t head_size(ActorKind kind, std::size_t n) {
  return kind == ActorKind::full ? n * n : n * (n + 1) / 2;
}

DenseMatrix scatter_lower(std::span<const double> v, std::size_t n) {
  if (v.size() != n * (n + 1) / 2) throw DimensionError("scatter_lower: length mismatch");
  DenseMatrix l(n, n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) l(i, j) = v[k++];
  return l;
}

DenseMatrix scatter_upper(std::span<const double> v, std::size_t n) {
  if (v.size() != n * (n + 1) / 2) throw DimensionError("scatter_upper: length mismatch");
  DenseMatrix u(n, n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) u(i, j) = v[k++];
  return u;
}

namespace {

Vector gather_lower(const DenseMatrix& g) {
  const std::size_t n = g.rows();
  Vector v;
  v.reserve(n * (n + 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) v.push_back(g(i, j));
  return v;
}

Vector gather_upper(const DenseMatrix& g) {
  const std::size_t n = g.rows();
  Vector v;
  v.reserve(n * (n + 1) / 2);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) v.push_back(g(i, j));
  return v;
}

DenseMatrix pre_bias(const PreconditionerFactor& f) {
  const std::size_t n = f.l.rows();
  switch (f.kind) {
    case ActorKind::ic: return matmul(f.l, f.l.transposed());
    case ActorKind::ilu: return matmul(f.l, f.u);
    case ActorKind::additive: {
      DenseMatrix b(n, n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j <= i; ++j) b(i, j) = b(j, i) = f.l(i, j);
      return b;
    }
    case ActorKind::full: return f.l;
  }
  return f.l;
}

}  // namespace

DenseMatrix assemble(const PreconditionerFactor& f, DenseMatrix* mask) {
  DenseMatrix m = pre_bias(f);
  const std::size_t n = m.rows();
  if (mask) *mask = DenseMatrix(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(m(i, j)) < f.eps_tol) {
        m(i, j) = 0.0;
        if (mask) (*mask)(i, j) = 0.0;
      }
    }
    m(i, i) += f.alpha;
  }
  return m;
}

// ---- Actor ----------------------------------------------------------------

Actor::Actor(ActorConfig config, std::size_t n, Mlp trunk, std::vector<Mlp> heads)
    : config_(std::move(config)), n_(n), trunk_(std::move(trunk)), heads_(std::move(heads)) {
  const std::size_t want_heads = config_.kind == ActorKind::ilu ? 2 : 1;
  if (heads_.size() != want_heads) throw DimensionError("Actor: wrong number of heads");
  if (trunk_.inputs() != n * n) throw DimensionError("Actor: trunk fan-in must be n^2");
  for (const Mlp& h : heads_) {
    if (h.inputs() != trunk_.outputs()) throw DimensionError("Actor: head fan-in mismatch");
    if (h.outputs() != head_size(config_.kind, n)) throw DimensionError("Actor: head size mismatch");
  }
}

Actor Actor::create(const ActorConfig& config, std::size_t n, Rng& rng) {
  if (n == 0) throw UsageError("Actor: n must be >= 1");
  std::vector<std::size_t> hidden = config.hidden;
  if (hidden.empty()) hidden = {4 * n, 4 * n};
  // ilu splits the hidden stack: the first half is shared, the rest is
  // duplicated per head.
  const std::size_t shared = config.kind == ActorKind::ilu ? (hidden.size() + 1) / 2 : hidden.size();
  MlpSpec trunk{n * n, {}};
  for (std::size_t i = 0; i < shared; ++i) trunk.layers.push_back({hidden[i], Activation::relu});
  MlpSpec head{hidden[shared - 1], {}};
  for (std::size_t i = shared; i < hidden.size(); ++i) head.layers.push_back({hidden[i], Activation::relu});
  head.layers.push_back({head_size(config.kind, n), Activation::sigmoid});

  Mlp t = Mlp::init(trunk, rng);
  std::vector<Mlp> heads;
  const std::size_t count = config.kind == ActorKind::ilu ? 2 : 1;
  for (std::size_t k = 0; k < count; ++k) heads.push_back(Mlp::init(head, rng));
  return Actor(config, n, std::move(t), std::move(heads));
}

Vector Actor::encode(const DenseMatrix& a) const {
  if (a.rows() != n_ || a.cols() != n_) throw DimensionError("Actor: system size mismatch");
  Vector x(a.data().begin(), a.data().end());
  if (config_.scale_input) {
    const double s = inf_norm(a);
    if (s > 0.0)
      for (double& v : x) v /= s;
  }
  return x;
}

PreconditionerFactor Actor::factors_from(const std::vector<Vector>& out) const {
  PreconditionerFactor f;
  f.kind = config_.kind;
  f.alpha = config_.alpha;
  f.eps_tol = config_.eps_tol;
  switch (config_.kind) {
    case ActorKind::ic:
    case ActorKind::additive: f.l = scatter_lower(out[0], n_); break;
    case ActorKind::ilu:
      f.l = scatter_lower(out[0], n_);
      f.u = scatter_upper(out[1], n_);
      break;
    case ActorKind::full: f.l = DenseMatrix(n_, n_, out[0]); break;
  }
  return f;
}

ActorOutput Actor::forward(const DenseMatrix& a) {
  const Vector& h = trunk_.forward(encode(a));
  std::vector<Vector> out;
  for (Mlp& head : heads_) out.push_back(head.forward(h));
  ActorOutput res;
  res.factor = factors_from(out);
  res.m = assemble(res.factor, &last_mask_);
  last_ = res.factor;
  cached_ = true;
  return res;
}

ActorOutput Actor::predict(const DenseMatrix& a) const {
  const Vector h = trunk_.predict(encode(a));
  std::vector<Vector> out;
  for (const Mlp& head : heads_) out.push_back(head.predict(h));
  ActorOutput res;
  res.factor = factors_from(out);
  res.m = assemble(res.factor);
  return res;
}

void Actor::backward(const DenseMatrix& grad_m) {
  if (!cached_) throw UsageError("Actor::backward: no valid forward cache");
  if (grad_m.rows() != n_ || grad_m.cols() != n_) throw DimensionError("Actor::backward: shape");
  DenseMatrix gm = grad_m;
  {
    auto g = gm.data();
    auto mk = last_mask_.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mk[i];
  }

  std::vector<Vector> head_grads;
  switch (config_.kind) {
    case ActorKind::ic: {
      // d(L L^T) = dL L^T + L dL^T  =>  grad_L = tril((G + G^T) L)
      head_grads.push_back(gather_lower(matmul(add(gm, gm.transposed()), last_.l)));
      break;
    }
    case ActorKind::ilu: {
      head_grads.push_back(gather_lower(matmul(gm, last_.u.transposed())));
      head_grads.push_back(gather_upper(matmul(last_.l.transposed(), gm)));
      break;
    }
    case ActorKind::additive: {
      DenseMatrix g(n_, n_);
      for (std::size_t i = 0; i < n_; ++i) {
        for (std::size_t j = 0; j < i; ++j) g(i, j) = gm(i, j) + gm(j, i);
        g(i, i) = gm(i, i);
      }
      head_grads.push_back(gather_lower(g));
      break;
    }
    case ActorKind::full: head_grads.push_back(Vector(gm.data().begin(), gm.data().end())); break;
  }

  Vector trunk_grad(trunk_.outputs(), 0.0);
  for (std::size_t k = 0; k < heads_.size(); ++k) {
    const Vector g = heads_[k].backward(head_grads[k]);
    for (std::size_t i = 0; i < g.size(); ++i) trunk_grad[i] += g[i];
  }
  trunk_.backward(trunk_grad);
}

std::vector<Mlp*> Actor::models() {
  std::vector<Mlp*> out{&trunk_};
  for (Mlp& h : heads_) out.push_back(&h);
  return out;
}

void Actor::zero_grad() {
  for (Mlp* m : models()) m->zero_grad();
}

// ---- condition objective ----------------------------------------------------

ConditionLoss condition_loss(const DenseMatrix& a, const DenseMatrix& m, double gamma,
                             LossMode mode, double clamp) {
  if (a.rows() != m.rows() || a.cols() != m.cols() || !a.square()) {
    throw DimensionError("condition_loss: a and m must be square and the same size");
  }
  const ExtremeTriplets t = extreme_singular_triplets(matmul(a, m));
  ConditionLoss out;
  out.sigma_max = t.max.sigma;
  out.sigma_min = t.min.sigma;
  const std::size_t n = a.rows();
  out.grad_m = DenseMatrix(n, n);
  if (!(t.min.sigma > 0.0)) throw NumericalError("condition_loss: A M is singular");

  // coefficients of u_max v_max^T and u_min v_min^T in dLoss/dP
  double c_max = 0.0, c_min = 0.0;
  if (mode == LossMode::pretrain) {
    out.value = t.max.sigma / t.min.sigma;
    c_max = 1.0 / t.min.sigma;
    c_min = -t.max.sigma / (t.min.sigma * t.min.sigma);
  } else {
    const double d = std::log(t.max.sigma) - std::log(t.min.sigma);
    if (d <= clamp) {
      out.value = gamma * std::log(clamp);
      out.clamped = true;
      return out;
    }
    out.value = gamma * std::log(d);
    c_max = gamma / (d * t.max.sigma);
    c_min = -gamma / (d * t.min.sigma);
  }
  // dLoss/dM = A^T (c_max u1 v1^T + c_min un vn^T)
  const Vector au_max = matvec_transposed(a, t.max.u);
  const Vector au_min = matvec_transposed(a, t.min.u);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = out.grad_m.row(i);
    const double x = c_max * au_max[i], y = c_min * au_min[i];
    for (std::size_t j = 0; j < n; ++j) row[j] = x * t.max.v[j] + y * t.min.v[j];
  }
  return out;
}

}  // namespace pearl
