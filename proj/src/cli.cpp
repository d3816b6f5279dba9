#include "pearl/cli.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "pearl/baselines.hpp"
#include "pearl/config.hpp"
#include "pearl/error.hpp"
#include "pearl/problem.hpp"
#include "pearl/trainer.hpp"

namespace pearl {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

namespace {

namespace fs = std::filesystem;

class CsvWriter {
 public:
  explicit CsvWriter(const fs::path& path) : path_(path) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw DataError("cannot write " + path.string());
  }

  void row(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ << ',';
      out_ << csv_field(fields[i]);
    }
    out_ << "\r\n";
    if (!out_) throw DataError("write failed: " + path_.string());
  }

 private:
  fs::path path_;
  std::ofstream out_;
};

std::string num(double v) { return fmt::format("{:.17g}", v); }

void setup_logging(const std::string& level) {
  auto logger = spdlog::get("pearl");
  if (!logger) {
    logger = spdlog::stderr_color_mt("pearl");
    spdlog::set_default_logger(logger);
  }
  const auto lv = spdlog::level::from_str(level);
  if (lv == spdlog::level::off && level != "off") throw UsageError("unknown log level '" + level + "'");
  spdlog::set_level(lv);
}

std::uint64_t seed_override(std::uint64_t seed) {
  const char* env = std::getenv("PEARL_SEED");
  if (!env || !*env) return seed;
  try {
    std::size_t pos = 0;
    const std::string s = env;
    if (s.front() == '-') throw std::invalid_argument("negative");
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw UsageError(std::string("PEARL_SEED is not a non-negative integer: '") + env + "'");
  }
}

// ---- shared option groups ---------------------------------------------------

struct SystemSource {
  std::string dataset;
  long long grid = 10;
  long long count = 32;
  std::uint64_t seed = 0;
  double perturb_mag = 1.0;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--dataset", dataset, "Dataset file written by `gen`");
    cmd->add_option("--grid", grid, "Grid size when generating systems")->capture_default_str();
    cmd->add_option("--count", count, "Number of systems when generating")->capture_default_str();
    cmd->add_option("--seed", seed, "Seed when generating")->capture_default_str();
    cmd->add_option("--perturb-mag", perturb_mag, "Perturbation bound when generating")
        ->capture_default_str();
  }

  std::vector<LinearSystem> load() const {
    if (!dataset.empty()) return read_dataset(dataset).systems;
    if (grid < 1) throw UsageError("--grid must be >= 1");
    if (count < 1) throw UsageError("--count must be >= 1");
    if (perturb_mag < 0) throw UsageError("--perturb-mag must be >= 0");
    ProblemConfig pc;
    pc.grid = static_cast<std::size_t>(grid);
    pc.perturb_mag = perturb_mag;
    return generate_dataset(pc, static_cast<std::size_t>(count), seed).systems;
  }
};

RunConfig load_config(const std::string& path, const std::string& log_level) {
  RunConfig cfg = load_run_config(path);
  setup_logging(log_level.empty() ? cfg.log_level : log_level);
  cfg.train.seed = seed_override(cfg.train.seed);
  cfg.pretrain.seed = cfg.train.seed;
  if (!cfg.dataset.empty()) {
    auto ds = std::make_shared<Dataset>(read_dataset(cfg.dataset));
    if (ds->systems.empty()) throw DataError("dataset " + cfg.dataset.string() + " is empty");
    cfg.train.problem.grid = ds->systems.front().grid;
    cfg.train.dataset = std::move(ds);
  }
  cfg.train.validate();
  return cfg;
}

void require_meta(const Checkpoint& ck, const std::string& key, const nlohmann::json& want,
                  const std::string& source) {
  const auto it = ck.meta.find(key);
  if (it == ck.meta.end() || *it != want) {
    throw DataError(fmt::format("checkpoint/config mismatch on '{}': checkpoint has {}, {} has {}", key,
                                it == ck.meta.end() ? "nothing" : it->dump(), source, want.dump()));
  }
}

// ---- gen ----------------------------------------------------------------------

struct GenArgs {
  long long grid = 10;
  long long count = 0;
  std::uint64_t seed = 0;
  std::string out;
  double perturb_mag = 1.0;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  if (a.grid < 1) throw UsageError("--grid must be >= 1");
  if (a.count < 1) throw UsageError("--count must be >= 1");
  if (a.perturb_mag < 0) throw UsageError("--perturb-mag must be >= 0");
  ProblemConfig pc;
  pc.grid = static_cast<std::size_t>(a.grid);
  pc.perturb_mag = a.perturb_mag;
  const Dataset ds = generate_dataset(pc, static_cast<std::size_t>(a.count), a.seed);
  write_dataset(a.out, ds);

  std::vector<double> kappa(ds.systems.size());
  const auto total = static_cast<std::ptrdiff_t>(kappa.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < total; ++i) {
    kappa[static_cast<std::size_t>(i)] = condition_number(ds.systems[static_cast<std::size_t>(i)].a);
  }
  std::sort(kappa.begin(), kappa.end());
  const std::size_t c = kappa.size();
  const double median = c % 2 ? kappa[c / 2] : 0.5 * (kappa[c / 2 - 1] + kappa[c / 2]);
  out << fmt::format("wrote {} systems (n = {}) to {}\n", c, pc.grid * pc.grid, a.out);
  out << fmt::format("kappa min {:.3f} median {:.3f} max {:.3f}\n", kappa.front(), median, kappa.back());
  return 0;
}

// ---- pretrain -----------------------------------------------------------------

struct PretrainArgs {
  std::string config;
  std::string out;
  std::optional<long long> steps;
};

int cmd_pretrain(const PretrainArgs& a, const std::string& log_level, std::ostream& out) {
  RunConfig cfg = load_config(a.config, log_level);
  if (a.steps) {
    if (*a.steps < 0) throw UsageError("--steps must be >= 0");
    cfg.pretrain.steps = static_cast<std::size_t>(*a.steps);
  }
  const fs::path ck_path = a.out.empty() ? cfg.checkpoint : fs::path(a.out);
  if (ck_path.empty()) throw UsageError("no checkpoint path: set [run] checkpoint or pass --out");
  if (cfg.pretrain_systems == 0) throw UsageError("[pretrain] systems must be >= 1");

  std::vector<LinearSystem> systems;
  if (cfg.train.dataset) {
    const auto& all = cfg.train.dataset->systems;
    systems.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(
                                                  std::min(all.size(), cfg.pretrain_systems)));
  } else {
    systems = generate_dataset(cfg.train.problem, cfg.pretrain_systems,
                               derive_seed(cfg.train.seed, Stream::pretrain, 0))
                  .systems;
  }

  TrainState state = make_train_state(cfg.train, cfg.actor, cfg.critic);
  ReplayBuffer buffer(cfg.train.buffer_capacity);
  const bool fill = cfg.pretrain_critic_steps > 0;
  spdlog::info("pretraining actor: {} steps on {} systems", cfg.pretrain.steps, systems.size());
  const TrainTrace actor_trace = pretrain_actor(state.actor, systems, cfg.pretrain, fill ? &buffer : nullptr);
  if (fill) {
    spdlog::info("pretraining critic: {} steps", cfg.pretrain_critic_steps);
    pretrain_critic(state.critic, buffer, cfg.pretrain_critic_steps, cfg.train);
  }
  save_checkpoint(ck_path, to_checkpoint(cfg.train, state));
  if (!cfg.output_dir.empty()) {
    fs::create_directories(cfg.output_dir);
    write_telemetry(cfg.output_dir / "pretrain_telemetry.csv", actor_trace);
  }
  if (!actor_trace.records.empty()) {
    out << fmt::format("pretrain: {} steps, batch condition {:.3f} -> {:.3f}\n", actor_trace.records.size(),
                       actor_trace.records.front().actor_loss, actor_trace.records.back().actor_loss);
  }
  out << "checkpoint: " << ck_path.string() << "\n";
  return 0;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  bool resume = false;
  std::string init;
  std::optional<long long> epochs;
};

int cmd_train(const TrainArgs& a, const std::string& log_level, std::ostream& out) {
  RunConfig cfg = load_config(a.config, log_level);
  if (a.epochs) {
    if (*a.epochs < 0) throw UsageError("--epochs must be >= 0");
    cfg.train.epochs = static_cast<std::size_t>(*a.epochs);
  }
  if (a.resume && !a.init.empty()) throw UsageError("--resume and --init are exclusive");
  const std::size_t n = cfg.train.problem.grid * cfg.train.problem.grid;

  TrainState state;
  if (a.resume) {
    if (cfg.checkpoint.empty()) throw UsageError("--resume needs [run] checkpoint");
    const Checkpoint ck = load_checkpoint(cfg.checkpoint);
    const std::string src = "config " + a.config;
    require_meta(ck, "mode", to_string(cfg.train.mode), src);
    require_meta(ck, "seed", cfg.train.seed, src);
    require_meta(ck, "n", n, src);
    if (ck.meta.contains("actor")) {
      const auto& ja = ck.meta["actor"];
      if (ja.value("kind", "") != to_string(cfg.actor.kind)) {
        throw DataError("checkpoint/config mismatch on 'actor.kind': checkpoint has " +
                        ja.value("kind", std::string("nothing")) + ", " + src + " has " +
                        to_string(cfg.actor.kind));
      }
    }
    state = from_checkpoint(ck);
    if (state.epoch >= cfg.train.epochs) {
      out << fmt::format("nothing to do: checkpoint is at epoch {} of {}\n", state.epoch, cfg.train.epochs);
      return 0;
    }
    spdlog::info("resuming at epoch {}, step {}", state.epoch, state.step);
  } else {
    state = make_train_state(cfg.train, cfg.actor, cfg.critic);
    if (!a.init.empty()) {
      Actor actor = actor_from_checkpoint(load_checkpoint(a.init));
      if (actor.n() != n) {
        throw DataError(fmt::format("--init actor has n = {}, config needs n = {}", actor.n(), n));
      }
      if (actor.config().kind != cfg.actor.kind) {
        throw DataError("--init actor kind " + to_string(actor.config().kind) + " differs from config kind " +
                        to_string(cfg.actor.kind));
      }
      state.actor = std::move(actor);
    }
    if (!cfg.telemetry.empty()) fs::remove(cfg.telemetry);
  }
  if (!cfg.telemetry.empty() && cfg.telemetry.has_parent_path()) {
    fs::create_directories(cfg.telemetry.parent_path());
  }

  const std::size_t first_epoch = state.epoch;
  const TrainTrace trace = train(cfg.train, state);
  out << fmt::format("trained {} mode: epochs {} -> {}, {} steps, {} updates\n", to_string(cfg.train.mode),
                     first_epoch, state.epoch, trace.steps, trace.updates);
  if (!trace.records.empty()) {
    const TraceRecord& r = trace.records.back();
    out << fmt::format("last update: actor_loss {:.6g}, reward {:.6g}", r.actor_loss, r.reward_scalar);
    if (r.cond_current) out << fmt::format(", cond {:.3f}", *r.cond_current);
    out << "\n";
  }
  if (!cfg.checkpoint.empty()) out << "checkpoint: " << cfg.checkpoint.string() << "\n";
  return 0;
}

// ---- eval / baseline ----------------------------------------------------------

struct EvalArgs {
  SystemSource source;
  std::string checkpoint;
  std::string methods;
  long long max_iterations = 100;
  double tolerance = 1e-6;
  bool no_cond = false;
  std::string csv;
  std::vector<long long> trace_systems;
  std::string trace_out;
  std::vector<long long> dump_precond;
  std::string dump_dir = ".";
  std::string dump_latents;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::size_t system_index(long long i, std::size_t count, const char* flag) {
  if (i < 0 || static_cast<std::size_t>(i) >= count) {
    throw UsageError(fmt::format("{} {} out of range [0, {})", flag, i, count));
  }
  return static_cast<std::size_t>(i);
}

void write_matrix_csv(const fs::path& path, const DenseMatrix& m) {
  CsvWriter w(path);
  std::vector<std::string> header;
  for (std::size_t j = 0; j < m.cols(); ++j) header.push_back("c" + std::to_string(j));
  w.row(header);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::vector<std::string> row;
    for (std::size_t j = 0; j < m.cols(); ++j) row.push_back(num(m(i, j)));
    w.row(row);
  }
}

int cmd_eval(const EvalArgs& a, bool baseline_only, std::ostream& out) {
  if (a.max_iterations < 1) throw UsageError("--max-iterations must be >= 1");
  if (!(a.tolerance > 0)) throw UsageError("--tol must be > 0");
  const std::vector<LinearSystem> systems = a.source.load();
  if (systems.empty()) throw DataError("no systems to evaluate");
  const std::size_t n = systems.front().n();
  for (const LinearSystem& s : systems) {
    if (s.n() != n) throw DataError("systems of mixed size in one evaluation set");
  }

  std::optional<Actor> actor;
  if (!a.checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    if (ck.meta.value("kind", std::string()) != "pearl-train") {
      throw DataError("checkpoint " + a.checkpoint + " does not hold an actor/critic pair");
    }
    actor = actor_from_checkpoint(ck);
    if (actor->n() != n) {
      throw DataError(fmt::format("actor/system size mismatch: actor n = {}, systems n = {}", actor->n(), n));
    }
  }

  std::vector<std::string> methods = split_list(a.methods);
  if (methods.empty()) {
    if (baseline_only) methods = {"none", "jacobi", "ilu0", "ic0"};
    else methods = actor ? std::vector<std::string>{"none", "ic0", "actor"} : std::vector<std::string>{"none"};
  }
  std::vector<std::pair<std::string, EvalPolicy>> policies;
  for (const std::string& m : methods) {
    if (m == "actor") {
      if (baseline_only) throw UsageError("`baseline` does not evaluate the actor; use `eval`");
      if (!actor) throw UsageError("method 'actor' needs --checkpoint");
      policies.emplace_back(m, actor_policy(*actor));
    } else if (m == "oracle") {
      policies.emplace_back(m, oracle_inverse_policy());
    } else {
      const BaselineKind k = parse_baseline(m);
      policies.emplace_back(m, k == BaselineKind::none ? identity_policy() : baseline_policy(k));
    }
  }

  std::vector<std::size_t> traced;
  for (long long i : a.trace_systems) traced.push_back(system_index(i, systems.size(), "--trace-system"));
  if (!traced.empty() && a.trace_out.empty()) throw UsageError("--trace-system needs --trace-out");

  EvalOptions opts;
  opts.max_iterations = static_cast<std::size_t>(a.max_iterations);
  opts.tolerance = a.tolerance;
  opts.keep_traces = !traced.empty();
  opts.compute_cond = !a.no_cond;

  std::optional<CsvWriter> per_system;
  if (!a.csv.empty()) {
    per_system.emplace(a.csv);
    per_system->row({"method", "system", "condition", "iterations", "converged", "invalid", "final_residual"});
  }
  std::optional<CsvWriter> traces;
  if (!traced.empty()) {
    traces.emplace(a.trace_out);
    traces->row({"method", "system", "iteration", "residual_norm"});
  }

  out << fmt::format("{} systems, n = {}, N = {}, tol = {:g}\n", systems.size(), n, opts.max_iterations,
                     opts.tolerance);
  out << fmt::format("{:<10} {:>28} {:>20} {:>10}\n", "method", "Condition", "Iteration", "converged");
  for (const auto& [name, policy] : policies) {
    spdlog::info("evaluating {}", name);
    const EvalStats st = evaluate(policy, systems, opts);
    const std::string cond =
        opts.compute_cond ? fmt::format("{:.3f} ± {:.3f}", st.cond_mean, st.cond_std) : std::string("-");
    out << fmt::format("{:<10} {:>28} {:>20} {:>10.3f}\n", name, cond,
                       fmt::format("{:.3f} ± {:.3f}", st.iter_mean, st.iter_std), st.converged_fraction);
    for (const EvalRow& r : st.rows) {
      if (per_system) {
        per_system->row({name, std::to_string(r.index), opts.compute_cond ? num(r.cond) : "",
                         std::to_string(r.iterations), r.converged ? "1" : "0", r.invalid ? "1" : "0",
                         num(r.final_residual)});
      }
    }
    for (std::size_t i : traced) {
      const auto& norms = st.rows[i].residual_norms;
      for (std::size_t k = 0; k < norms.size(); ++k) {
        traces->row({name, std::to_string(i), std::to_string(k), num(norms[k])});
      }
    }
  }

  if (!a.dump_precond.empty() || !a.dump_latents.empty()) {
    if (!actor) throw UsageError("--dump-precond and --dump-latents need --checkpoint");
  }
  for (long long idx : a.dump_precond) {
    const std::size_t i = system_index(idx, systems.size(), "--dump-precond");
    const fs::path path = fs::path(a.dump_dir) / fmt::format("precond_{}.csv", i);
    write_matrix_csv(path, actor->predict(systems[i].a).m);
    out << "wrote " << path.string() << "\n";
  }
  if (!a.dump_latents.empty()) {
    CsvWriter w(a.dump_latents);
    std::vector<std::string> header{"system"};
    for (std::size_t k = 0; k < n * n; ++k) header.push_back("m" + std::to_string(k));
    w.row(header);
    for (std::size_t i = 0; i < systems.size(); ++i) {
      const DenseMatrix m = actor->predict(systems[i].a).m;
      std::vector<std::string> row{std::to_string(i)};
      for (double v : m.data()) row.push_back(num(v));
      w.row(row);
    }
    out << "wrote " << a.dump_latents << "\n";
  }
  return 0;
}

void add_eval_options(CLI::App* cmd, EvalArgs& a, bool baseline_only) {
  a.source.add_to(cmd);
  if (!baseline_only) {
    cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint holding the actor");
    cmd->add_option("--dump-precond", a.dump_precond, "Write the actor's M for these systems")->delimiter(',');
    cmd->add_option("--dump-dir", a.dump_dir, "Directory for --dump-precond files")->capture_default_str();
    cmd->add_option("--dump-latents", a.dump_latents, "CSV of flattened M, one row per system");
  }
  cmd->add_option("--methods", a.methods,
                  baseline_only ? "Comma list of none,jacobi,ilu0,ic0,oracle"
                                : "Comma list of none,jacobi,ilu0,ic0,oracle,actor");
  cmd->add_option("--max-iterations", a.max_iterations, "PCG iteration cap N")->capture_default_str();
  cmd->add_option("--tol", a.tolerance, "Relative residual tolerance")->capture_default_str();
  cmd->add_flag("--no-cond", a.no_cond, "Skip condition numbers");
  cmd->add_option("--csv", a.csv, "Per-system results CSV");
  cmd->add_option("--trace-system", a.trace_systems, "Systems whose residual norms are written")->delimiter(',');
  cmd->add_option("--trace-out", a.trace_out, "Residual trace CSV");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Learned preconditioners for conjugate gradients", "pearl"};
  app.require_subcommand(1);
  std::string log_level;
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  GenArgs gen;
  CLI::App* c_gen = app.add_subcommand("gen", "Generate a dataset of linear systems");
  c_gen->add_option("--grid", gen.grid, "Interior grid size (n = grid^2)")->capture_default_str();
  c_gen->add_option("--count", gen.count, "Number of systems")->required();
  c_gen->add_option("--seed", gen.seed, "Dataset seed")->capture_default_str();
  c_gen->add_option("--out", gen.out, "Output file")->required();
  c_gen->add_option("--perturb-mag", gen.perturb_mag, "Perturbation bound")->capture_default_str();

  PretrainArgs pre;
  CLI::App* c_pre = app.add_subcommand("pretrain", "Pretrain the actor on the condition objective");
  c_pre->add_option("--config", pre.config, "Run config file")->required();
  c_pre->add_option("--out", pre.out, "Checkpoint path (default: [run] checkpoint)");
  c_pre->add_option("--steps", pre.steps, "Override [pretrain] steps");

  TrainArgs tr;
  CLI::App* c_train = app.add_subcommand("train", "Run actor-critic training");
  c_train->add_option("--config", tr.config, "Run config file")->required();
  c_train->add_flag("--resume", tr.resume, "Continue from [run] checkpoint");
  c_train->add_option("--init", tr.init, "Start the actor from this checkpoint");
  c_train->add_option("--epochs", tr.epochs, "Override [train] epochs");

  EvalArgs ev;
  CLI::App* c_eval = app.add_subcommand("eval", "Evaluate preconditioners with PCG");
  add_eval_options(c_eval, ev, false);

  EvalArgs bl;
  CLI::App* c_base = app.add_subcommand("baseline", "Evaluate the classical preconditioners");
  add_eval_options(c_base, bl, true);

  CLI::App* c_cfg = app.add_subcommand("config", "Print a config file with every default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (*c_cfg) {
      out << default_config_text();
      return 0;
    }
    if (*c_gen || *c_eval || *c_base) setup_logging(log_level.empty() ? "warn" : log_level);
    if (*c_gen) return cmd_gen(gen, out);
    if (*c_pre) return cmd_pretrain(pre, log_level, out);
    if (*c_train) return cmd_train(tr, log_level, out);
    if (*c_eval) return cmd_eval(ev, false, out);
    if (*c_base) return cmd_eval(bl, true, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed checkpoint metadata: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::data);
  }
  return static_cast<int>(ErrorKind::usage);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("pearl");
  for (const std::string& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace pearl
