#include "pearl/neural.hpp"

#include <cmath>
#include <filesystem>

#include "binio.hpp"
#include "pearl/error.hpp"
#include "pearl/kernels.hpp"

namespace pearl {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "identity";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw DataError("unknown activation '" + s + "'");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::sigmoid: return sigmoid(x);
    case Activation::identity: return x;
  }
  return x;
}

// Derivative from the pre-activation x and the output y.
double activate_grad(Activation a, double x, double y) {
  switch (a) {
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: return y * (1.0 - y);
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

}  // namespace

Mlp::Mlp(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw UsageError("Mlp: at least one layer required");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& ly = layers_[l];
    if (ly.b.size() != ly.outputs()) throw DimensionError("Mlp: bias length mismatch");
    if (l > 0 && ly.inputs() != layers_[l - 1].outputs()) {
      throw DimensionError("Mlp: layer " + std::to_string(l) + " fan-in mismatch");
    }
  }
  allocate_grads();
}

Mlp Mlp::init(const MlpSpec& spec, Rng& rng) {
  if (spec.layers.empty()) throw UsageError("Mlp::init: zero-layer spec");
  if (spec.inputs == 0) throw UsageError("Mlp::init: zero inputs");
  std::vector<Layer> layers;
  std::size_t fan_in = spec.inputs;
  for (const LayerSpec& ls : spec.layers) {
    if (ls.outputs == 0) throw UsageError("Mlp::init: zero-width layer");
    const double fi = static_cast<double>(fan_in), fo = static_cast<double>(ls.outputs);
    const double bound = ls.activation == Activation::relu ? std::sqrt(6.0 / fi)
                                                           : std::sqrt(6.0 / (fi + fo));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer layer{DenseMatrix(ls.outputs, fan_in), Vector(ls.outputs, 0.0), ls.activation};
    for (double& w : layer.w.data()) w = dist(rng);
    layers.push_back(std::move(layer));
    fan_in = ls.outputs;
  }
  return Mlp(std::move(layers));
}

void Mlp::allocate_grads() {
  grads_.clear();
  for (const Layer& l : layers_) {
    grads_.push_back({DenseMatrix(l.outputs(), l.inputs()), Vector(l.outputs(), 0.0), l.activation});
  }
  cache_valid_ = false;
}

std::size_t Mlp::inputs() const { return layers_.empty() ? 0 : layers_.front().inputs(); }
std::size_t Mlp::outputs() const { return layers_.empty() ? 0 : layers_.back().outputs(); }

std::size_t Mlp::num_params() const {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += l.w.size() + l.b.size();
  return n;
}

MlpSpec Mlp::spec() const {
  MlpSpec s{inputs(), {}};
  for (const Layer& l : layers_) s.layers.push_back({l.outputs(), l.activation});
  return s;
}

std::vector<Layer>& Mlp::mutable_layers() {
  cache_valid_ = false;
  return layers_;
}

const Vector& Mlp::forward(std::span<const double> input) {
  if (input.size() != inputs()) {
    throw DimensionError("Mlp::forward: input length " + std::to_string(input.size()) +
                         ", expected " + std::to_string(inputs()));
  }
  inputs_.resize(layers_.size());
  pre_.resize(layers_.size());
  inputs_[0].assign(input.begin(), input.end());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& ly = layers_[l];
    Vector& z = pre_[l];
    z.resize(ly.outputs());
    kernels::gemv(ly.outputs(), ly.inputs(), ly.w.data(), inputs_[l], z);
    Vector& y = l + 1 < layers_.size() ? inputs_[l + 1] : output_;
    y.resize(ly.outputs());
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] += ly.b[i];
      y[i] = activate(ly.activation, z[i]);
    }
  }
  cache_valid_ = true;
  return output_;
}

Vector Mlp::predict(std::span<const double> input) const {
  if (input.size() != inputs()) throw DimensionError("Mlp::predict: input length mismatch");
  Vector x(input.begin(), input.end());
  for (const Layer& ly : layers_) {
    Vector z(ly.outputs());
    kernels::gemv(ly.outputs(), ly.inputs(), ly.w.data(), x, z);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = activate(ly.activation, z[i] + ly.b[i]);
    x = std::move(z);
  }
  return x;
}

Vector Mlp::backward(std::span<const double> output_grad, bool accumulate) {
  if (!cache_valid_) throw UsageError("Mlp::backward: no valid forward cache");
  if (output_grad.size() != outputs()) throw DimensionError("Mlp::backward: gradient length mismatch");
  Vector delta(output_grad.begin(), output_grad.end());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Layer& ly = layers_[l];
    const Vector& y = l + 1 < layers_.size() ? inputs_[l + 1] : output_;
    for (std::size_t i = 0; i < delta.size(); ++i) {
      delta[i] *= activate_grad(ly.activation, pre_[l][i], y[i]);
    }
    if (accumulate) {
      Layer& g = grads_[l];
      kernels::ger(ly.outputs(), ly.inputs(), 1.0, delta, inputs_[l], g.w.data());
      for (std::size_t i = 0; i < delta.size(); ++i) g.b[i] += delta[i];
    }
    Vector prev(ly.inputs());
    kernels::gemv_t(ly.outputs(), ly.inputs(), ly.w.data(), delta, prev);
    delta = std::move(prev);
  }
  return delta;
}

void Mlp::zero_grad() {
  for (Layer& g : grads_) {
    std::fill(g.w.data().begin(), g.w.data().end(), 0.0);
    std::fill(g.b.begin(), g.b.end(), 0.0);
  }
}

std::vector<std::span<double>> Mlp::param_spans() {
  cache_valid_ = false;
  std::vector<std::span<double>> out;
  for (Layer& l : layers_) {
    out.push_back(l.w.data());
    out.push_back(l.b);
  }
  return out;
}

std::vector<std::span<const double>> Mlp::param_spans() const {
  std::vector<std::span<const double>> out;
  for (const Layer& l : layers_) {
    out.push_back(l.w.data());
    out.push_back(l.b);
  }
  return out;
}

std::vector<std::span<double>> Mlp::grad_spans() {
  std::vector<std::span<double>> out;
  for (Layer& g : grads_) {
    out.push_back(g.w.data());
    out.push_back(g.b);
  }
  return out;
}

std::vector<double> Mlp::flat_params() const {
  std::vector<double> out;
  out.reserve(num_params());
  for (auto s : param_spans()) out.insert(out.end(), s.begin(), s.end());
  return out;
}

void Mlp::set_flat_params(std::span<const double> values) {
  if (values.size() != num_params()) throw DimensionError("Mlp::set_flat_params: size mismatch");
  std::size_t k = 0;
  for (auto s : param_spans()) {
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(k),
              values.begin() + static_cast<std::ptrdiff_t>(k + s.size()), s.begin());
    k += s.size();
  }
}

std::vector<double> Mlp::flat_grads() const {
  std::vector<double> out;
  out.reserve(num_params());
  for (const Layer& g : grads_) {
    out.insert(out.end(), g.w.data().begin(), g.w.data().end());
    out.insert(out.end(), g.b.begin(), g.b.end());
  }
  return out;
}

// ---- optimization ---------------------------------------------------------

double global_norm(const std::vector<std::span<double>>& grads) {
  double s = 0.0;
  for (auto g : grads)
    for (double x : g) s += x * x;
  return std::sqrt(s);
}

double clip_global_norm(const std::vector<std::span<double>>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm * (1.0 + 1e-12)) {
    const double scale = max_norm / norm;
    for (auto g : grads)
      for (double& x : g) x *= scale;
  }
  return norm;
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw DataError("unknown optimizer '" + s + "'");
}

StepInfo Optimizer::step(std::span<Mlp* const> models) {
  std::vector<std::span<double>> grads, params;
  for (Mlp* m : models) {
    for (auto g : m->grad_spans()) grads.push_back(g);
    for (auto p : m->param_spans()) params.push_back(p);
  }
  std::size_t total = 0;
  for (auto g : grads) {
    if (!all_finite(g)) throw NumericalError("optimizer: non-finite gradient, step rejected");
    total += g.size();
  }
  StepInfo info;
  info.grad_norm = clip_global_norm(grads, config_.max_norm);
  info.applied_norm = global_norm(grads);

  if (config_.kind == OptimizerKind::adam) {
    if (m_.empty()) {
      m_.assign(total, 0.0);
      v_.assign(total, 0.0);
    }
    if (m_.size() != total) throw DimensionError("optimizer: parameter count changed");
    ++steps_;
    const double t = static_cast<double>(steps_);
    const kernels::AdamParams ap{config_.lr, config_.beta1, config_.beta2, config_.eps,
                                 1.0 - std::pow(config_.beta1, t), 1.0 - std::pow(config_.beta2, t)};
    std::size_t off = 0;
    for (std::size_t k = 0; k < params.size(); ++k) {
      const std::size_t len = params[k].size();
      kernels::adam(ap, grads[k], std::span<double>(m_).subspan(off, len),
                    std::span<double>(v_).subspan(off, len), params[k]);
      off += len;
    }
  } else {
    ++steps_;
    for (std::size_t k = 0; k < params.size(); ++k)
      for (std::size_t i = 0; i < params[k].size(); ++i) params[k][i] -= config_.lr * grads[k][i];
  }
  for (Mlp* m : models) m->zero_grad();
  return info;
}

void Optimizer::restore(std::uint64_t steps, std::vector<double> m, std::vector<double> v) {
  if (m.size() != v.size()) throw DataError("optimizer: moment size mismatch");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

// ---- checkpoints ----------------------------------------------------------

namespace {
constexpr char kCheckpointMagic[8] = {'P', 'E', 'A', 'R', 'L', 'C', 'K', '1'};
}

const Mlp& Checkpoint::model(const std::string& name) const {
  for (const auto& [n, m] : models)
    if (n == name) return m;
  throw DataError("checkpoint has no model '" + name + "'");
}

bool Checkpoint::has_model(const std::string& name) const {
  for (const auto& entry : models)
    if (entry.first == name) return true;
  return false;
}

const Optimizer& Checkpoint::optimizer(const std::string& name) const {
  for (const auto& [n, o] : optimizers)
    if (n == name) return o;
  throw DataError("checkpoint has no optimizer '" + name + "'");
}

std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json desc;
  desc["meta"] = ck.meta;
  desc["models"] = nlohmann::json::array();
  for (const auto& [name, m] : ck.models) {
    nlohmann::json jm{{"name", name}, {"inputs", m.inputs()}};
    jm["layers"] = nlohmann::json::array();
    for (const Layer& l : m.layers()) {
      jm["layers"].push_back({{"outputs", l.outputs()}, {"activation", to_string(l.activation)}});
    }
    desc["models"].push_back(jm);
  }
  desc["optimizers"] = nlohmann::json::array();
  for (const auto& [name, o] : ck.optimizers) {
    const OptimizerConfig& c = o.config();
    desc["optimizers"].push_back({{"name", name},
                                  {"kind", to_string(c.kind)},
                                  {"lr", c.lr},
                                  {"beta1", c.beta1},
                                  {"beta2", c.beta2},
                                  {"eps", c.eps},
                                  {"max_norm", c.max_norm},
                                  {"steps", o.steps()},
                                  {"moments", o.first_moment().size()}});
  }
  const std::string text = desc.dump();

  binio::Writer w;
  w.put_bytes({kCheckpointMagic, 8});
  w.put<std::uint32_t>(Checkpoint::kFormatVersion);
  w.put<std::uint64_t>(text.size());
  w.put_bytes(text);
  for (const auto& entry : ck.models)
    for (auto s : entry.second.param_spans()) w.put_doubles(s);
  for (const auto& entry : ck.optimizers) {
    w.put_doubles(entry.second.first_moment());
    w.put_doubles(entry.second.second_moment());
  }
  return std::move(w.str());
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  binio::Reader r(bytes);
  if (r.get_bytes(8) != std::string_view(kCheckpointMagic, 8)) throw DataError("not a PEARLCK1 checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kFormatVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = r.get<std::uint64_t>();
  nlohmann::json desc;
  try {
    desc = nlohmann::json::parse(r.get_bytes(len));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint descriptor: ") + e.what());
  }

  Checkpoint ck;
  try {
    ck.meta = desc.at("meta");
    for (const auto& jm : desc.at("models")) {
      std::vector<Layer> layers;
      std::size_t fan_in = jm.at("inputs").get<std::size_t>();
      for (const auto& jl : jm.at("layers")) {
        const auto out = jl.at("outputs").get<std::size_t>();
        layers.push_back({DenseMatrix(out, fan_in), Vector(out, 0.0),
                          parse_activation(jl.at("activation").get<std::string>())});
        fan_in = out;
      }
      ck.models.emplace_back(jm.at("name").get<std::string>(), Mlp(std::move(layers)));
    }
    for (auto& entry : ck.models)
      for (auto s : entry.second.param_spans()) r.get_doubles(s);
    for (const auto& jo : desc.at("optimizers")) {
      OptimizerConfig c;
      c.kind = parse_optimizer(jo.at("kind").get<std::string>());
      c.lr = jo.at("lr").get<double>();
      c.beta1 = jo.at("beta1").get<double>();
      c.beta2 = jo.at("beta2").get<double>();
      c.eps = jo.at("eps").get<double>();
      c.max_norm = jo.at("max_norm").get<double>();
      Optimizer o(c);
      const auto count = jo.at("moments").get<std::size_t>();
      std::vector<double> m(count), v(count);
      r.get_doubles(m);
      r.get_doubles(v);
      o.restore(jo.at("steps").get<std::uint64_t>(), std::move(m), std::move(v));
      ck.optimizers.emplace_back(jo.at("name").get<std::string>(), std::move(o));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint descriptor: ") + e.what());
  }
  if (r.remaining() != 0) throw DataError("trailing bytes after checkpoint");
  for (const auto& entry : ck.models) {
    for (auto s : entry.second.param_spans()) {
      if (!all_finite(s)) throw DataError("checkpoint model '" + entry.first + "' has non-finite parameters");
    }
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  // Write-then-rename so an interrupted run never leaves a torn file.
  const std::filesystem::path tmp = path.string() + ".tmp";
  binio::write_file(tmp.string(), serialize_checkpoint(ck));
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(binio::read_file(path.string()));
}

}  // namespace pearl
