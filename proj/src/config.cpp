#include "pearl/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <vector>

#include "pearl/error.hpp"

namespace pearl {

namespace {

struct Entry {
  std::string section;
  std::string key;
  std::string value;
  int line = 0;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(int line, const std::string& what) {
  throw UsageError("config line " + std::to_string(line) + ": " + what);
}

std::vector<Entry> tokenize(const std::string& text) {
  std::vector<Entry> out;
  std::istringstream in(text);
  std::string raw, section;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::string s = raw;
    const auto c = s.find_first_of("#;");
    if (c != std::string::npos) s.erase(c);
    s = trim(s);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') fail(line, "malformed section header");
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail(line, "expected 'key = value'");
    Entry e{section, trim(s.substr(0, eq)), trim(s.substr(eq + 1)), line};
    if (e.key.empty()) fail(line, "empty key");
    if (section.empty()) fail(line, "key '" + e.key + "' outside any section");
    out.push_back(std::move(e));
  }
  return out;
}

std::size_t to_count(const Entry& e) {
  try {
    std::size_t pos = 0;
    if (!e.value.empty() && e.value.front() == '-') throw std::invalid_argument("negative");
    const auto v = std::stoull(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("trailing");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    fail(e.line, "[" + e.section + "] " + e.key + ": expected a non-negative integer, got '" +
                     e.value + "'");
  }
}

double to_double(const Entry& e) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(e.value, &pos);
    if (pos != e.value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    // "pi/5"-style phases are common enough to accept.
    const std::string v = e.value;
    if (v.rfind("pi", 0) == 0) {
      if (v == "pi") return std::numbers::pi;
      if (v.size() > 3 && v[2] == '/') {
        Entry d = e;
        d.value = v.substr(3);
        return std::numbers::pi / to_double(d);
      }
    }
    fail(e.line, "[" + e.section + "] " + e.key + ": expected a number, got '" + e.value + "'");
  }
}

bool to_bool(const Entry& e) {
  std::string v = e.value;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  fail(e.line, "[" + e.section + "] " + e.key + ": expected a boolean, got '" + e.value + "'");
}

std::vector<std::size_t> to_list(const Entry& e) {
  std::vector<std::size_t> out;
  if (e.value.empty()) return out;
  std::istringstream in(e.value);
  std::string item;
  while (std::getline(in, item, ',')) {
    Entry one = e;
    one.value = trim(item);
    const std::size_t v = to_count(one);
    if (v == 0) fail(e.line, "[" + e.section + "] " + e.key + ": layer widths must be >= 1");
    out.push_back(v);
  }
  return out;
}

template <class F>
auto wrap(const Entry& e, F&& f) {
  try {
    return f();
  } catch (const UsageError& ex) {
    const std::string what = ex.what();
    if (what.rfind("config line", 0) == 0) throw;
    fail(e.line, what);
  } catch (const DataError& ex) {
    fail(e.line, ex.what());
  }
}

using Setter = std::function<void(RunConfig&, const Entry&)>;

std::map<std::string, std::map<std::string, Setter>> setters() {
  std::map<std::string, std::map<std::string, Setter>> s;
  auto path = [](std::filesystem::path RunConfig::*member) {
    return [member](RunConfig& c, const Entry& e) { c.*member = e.value; };
  };

  s["run"] = {
      {"schema", [](RunConfig& c, const Entry& e) { c.schema = static_cast<int>(to_count(e)); }},
      {"seed", [](RunConfig& c, const Entry& e) { c.train.seed = to_count(e); }},
      {"log_level", [](RunConfig& c, const Entry& e) { c.log_level = e.value; }},
      {"dataset", path(&RunConfig::dataset)},
      {"checkpoint", path(&RunConfig::checkpoint)},
      {"telemetry", path(&RunConfig::telemetry)},
      {"output_dir", path(&RunConfig::output_dir)},
      {"checkpoint_every", [](RunConfig& c, const Entry& e) { c.train.checkpoint_every = to_count(e); }},
  };
  s["problem"] = {
      {"grid", [](RunConfig& c, const Entry& e) { c.train.problem.grid = to_count(e); }},
      {"bumps_min", [](RunConfig& c, const Entry& e) { c.train.problem.bumps_min = static_cast<int>(to_count(e)); }},
      {"bumps_max", [](RunConfig& c, const Entry& e) { c.train.problem.bumps_max = static_cast<int>(to_count(e)); }},
      {"amplitude_min", [](RunConfig& c, const Entry& e) { c.train.problem.amplitude_min = to_double(e); }},
      {"amplitude_max", [](RunConfig& c, const Entry& e) { c.train.problem.amplitude_max = to_double(e); }},
      {"width_min", [](RunConfig& c, const Entry& e) { c.train.problem.width_min = to_double(e); }},
      {"width_max", [](RunConfig& c, const Entry& e) { c.train.problem.width_max = to_double(e); }},
      {"perturb_mag", [](RunConfig& c, const Entry& e) { c.train.problem.perturb_mag = to_double(e); }},
      {"spd_retries", [](RunConfig& c, const Entry& e) { c.train.problem.spd_retries = static_cast<int>(to_count(e)); }},
  };
  s["train"] = {
      {"mode", [](RunConfig& c, const Entry& e) { c.train.mode = wrap(e, [&] { return parse_train_mode(e.value); }); }},
      {"epochs", [](RunConfig& c, const Entry& e) { c.train.epochs = to_count(e); }},
      {"steps_per_epoch", [](RunConfig& c, const Entry& e) { c.train.steps_per_epoch = to_count(e); }},
      {"wait", [](RunConfig& c, const Entry& e) { c.train.wait = to_count(e); }},
      {"batch_size", [](RunConfig& c, const Entry& e) { c.train.batch_size = to_count(e); }},
      {"buffer_capacity", [](RunConfig& c, const Entry& e) { c.train.buffer_capacity = to_count(e); }},
      {"optimizer", [](RunConfig& c, const Entry& e) {
         const OptimizerKind k = wrap(e, [&] { return parse_optimizer(e.value); });
         c.train.actor_opt.kind = c.train.critic_opt.kind = k;
       }},
      {"actor_lr", [](RunConfig& c, const Entry& e) { c.train.actor_opt.lr = to_double(e); }},
      {"critic_lr", [](RunConfig& c, const Entry& e) { c.train.critic_opt.lr = to_double(e); }},
      {"clip_norm", [](RunConfig& c, const Entry& e) {
         c.train.actor_opt.max_norm = c.train.critic_opt.max_norm = to_double(e);
       }},
      {"explore_sigma", [](RunConfig& c, const Entry& e) { c.train.explore_sigma = to_double(e); }},
      {"sparsify_p", [](RunConfig& c, const Entry& e) { c.train.sparsify_p = to_double(e); }},
      {"log_clamp", [](RunConfig& c, const Entry& e) { c.train.log_clamp = to_double(e); }},
  };
  s["solver"] = {
      {"max_iterations", [](RunConfig& c, const Entry& e) { c.train.max_iterations = to_count(e); }},
      {"tolerance", [](RunConfig& c, const Entry& e) { c.train.tolerance = to_double(e); }},
  };
  s["reward"] = {
      {"w1", [](RunConfig& c, const Entry& e) { c.train.weights.w1 = to_double(e); }},
      {"w2", [](RunConfig& c, const Entry& e) { c.train.weights.w2 = to_double(e); }},
      {"w3", [](RunConfig& c, const Entry& e) { c.train.weights.w3 = to_double(e); }},
  };
  s["actor"] = {
      {"kind", [](RunConfig& c, const Entry& e) { c.actor.kind = wrap(e, [&] { return parse_actor_kind(e.value); }); }},
      {"hidden", [](RunConfig& c, const Entry& e) { c.actor.hidden = to_list(e); }},
      {"alpha", [](RunConfig& c, const Entry& e) { c.actor.alpha = to_double(e); }},
      {"eps_tol", [](RunConfig& c, const Entry& e) { c.actor.eps_tol = to_double(e); }},
      {"scale_input", [](RunConfig& c, const Entry& e) { c.actor.scale_input = to_bool(e); }},
  };
  s["critic"] = {
      {"mode", [](RunConfig& c, const Entry& e) {
         if (e.value == "single") c.critic.mode = CriticMode::single;
         else if (e.value == "multi") c.critic.mode = CriticMode::multi;
         else fail(e.line, "[critic] mode: expected single or multi, got '" + e.value + "'");
       }},
      {"hidden", [](RunConfig& c, const Entry& e) { c.critic.hidden = to_list(e); }},
  };
  s["pretrain"] = {
      {"steps", [](RunConfig& c, const Entry& e) { c.pretrain.steps = to_count(e); }},
      {"batch_size", [](RunConfig& c, const Entry& e) { c.pretrain.batch_size = to_count(e); }},
      {"lr", [](RunConfig& c, const Entry& e) { c.pretrain.opt.lr = to_double(e); }},
      {"systems", [](RunConfig& c, const Entry& e) { c.pretrain_systems = to_count(e); }},
      {"critic_steps", [](RunConfig& c, const Entry& e) { c.pretrain_critic_steps = to_count(e); }},
  };
  for (const char* which : {"schedule.gamma", "schedule.eps"}) {
    const bool gamma = std::string(which) == "schedule.gamma";
    auto sched = [gamma](RunConfig& c) -> SchedulerState& { return gamma ? c.train.gamma : c.train.eps; };
    s[which] = {
        {"type", [sched](RunConfig& c, const Entry& e) {
           if (e.value == "cosine") sched(c).constant = false;
           else if (e.value == "constant") sched(c).constant = true;
           else fail(e.line, "schedule type: expected cosine or constant, got '" + e.value + "'");
         }},
        {"min", [sched](RunConfig& c, const Entry& e) { sched(c).v_min = to_double(e); }},
        {"max", [sched](RunConfig& c, const Entry& e) { sched(c).v_max = to_double(e); }},
        {"value", [sched](RunConfig& c, const Entry& e) { sched(c).v_min = sched(c).v_max = to_double(e); }},
        {"period", [sched](RunConfig& c, const Entry& e) { sched(c).period = to_double(e); }},
        {"phase", [sched](RunConfig& c, const Entry& e) { sched(c).phase = to_double(e); }},
    };
  }
  return s;
}

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return std::filesystem::absolute(base / p).lexically_normal();
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir) {
  const std::vector<Entry> entries = tokenize(text);
  const auto table = setters();

  RunConfig cfg;
  // The mode fixes the default schedules, which explicit schedule keys then
  // override, so it is applied first.
  bool have_schema = false;
  std::map<std::pair<std::string, std::string>, int> seen;
  for (const Entry& e : entries) {
    const auto sec = table.find(e.section);
    if (sec == table.end()) fail(e.line, "unknown section [" + e.section + "]");
    if (!sec->second.count(e.key)) fail(e.line, "unknown key '" + e.key + "' in [" + e.section + "]");
    const auto [it, inserted] = seen.emplace(std::make_pair(e.section, e.key), e.line);
    if (!inserted) {
      fail(e.line, "duplicate key '" + e.key + "' (first set on line " + std::to_string(it->second) + ")");
    }
    if (e.section == "train" && e.key == "mode") table.at("train").at("mode")(cfg, e);
    if (e.section == "run" && e.key == "schema") have_schema = true;
  }
  if (!have_schema) throw UsageError("config: missing [run] schema");
  apply_mode_defaults(cfg.train);
  for (const Entry& e : entries) table.at(e.section).at(e.key)(cfg, e);

  if (cfg.schema != kConfigSchema) {
    throw UsageError("config: unsupported schema " + std::to_string(cfg.schema) + " (expected " +
                     std::to_string(kConfigSchema) + ")");
  }
  cfg.dataset = resolve(cfg.dataset, base_dir);
  cfg.checkpoint = resolve(cfg.checkpoint, base_dir);
  cfg.telemetry = resolve(cfg.telemetry, base_dir);
  cfg.output_dir = resolve(cfg.output_dir, base_dir);
  cfg.train.checkpoint_path = cfg.checkpoint;
  cfg.train.telemetry_path = cfg.telemetry;
  cfg.pretrain.seed = cfg.train.seed;
  cfg.pretrain.opt.max_norm = cfg.train.actor_opt.max_norm;
  cfg.pretrain.opt.kind = cfg.train.actor_opt.kind;
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), std::filesystem::absolute(path).parent_path());
}

std::string default_config_text() {
  return R"([run]
schema = 1
seed = 0
log_level = info
dataset =
checkpoint = pearl.ckpt
checkpoint_every = 0
telemetry = telemetry.csv
output_dir = .

[problem]
grid = 10
bumps_min = 3
bumps_max = 10
amplitude_min = 0.1
amplitude_max = 5
width_min = 0.05
width_max = 0.25
perturb_mag = 1.0
spd_retries = 16

[train]
mode = dual_cosine
epochs = 2000
steps_per_epoch = 1
wait = 1
batch_size = 4
buffer_capacity = 512
optimizer = adam
actor_lr = 0.001
critic_lr = 0.001
clip_norm = 1.0
explore_sigma = 0.02
sparsify_p = 0.5
log_clamp = 1e-8

[solver]
max_iterations = 100
tolerance = 1e-6

[reward]
w1 = 1.0
w2 = 0.25
w3 = -0.05

[actor]
kind = ic
hidden =
alpha = 0.1
eps_tol = 0.01
scale_input = true

[critic]
mode = single
hidden =

[pretrain]
steps = 200
batch_size = 4
lr = 0.001
systems = 16
critic_steps = 0

# The mode picks the gamma and eps schedules. Uncomment to override.
# [schedule.gamma]
# type = cosine
# min = 0.1
# max = 1.0
# period = 500
# phase = 0
#
# [schedule.eps]
# type = cosine
# min = 0.05
# max = 0.6
# period = 500
# phase = pi/5
)";
}

}  // namespace pearl
