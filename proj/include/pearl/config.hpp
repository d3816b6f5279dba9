#pragma once

// Run configuration: INI-style "key = value" lines grouped in [sections].
// '#' and ';' start comments. Unknown sections or keys are rejected with the
// offending line number. See README.md for the key reference.

#include <filesystem>
#include <string>

#include "pearl/actors.hpp"
#include "pearl/environment.hpp"
#include "pearl/trainer.hpp"

namespace pearl {

inline constexpr int kConfigSchema = 1;

struct RunConfig {
  int schema = kConfigSchema;
  std::string log_level = "info";
  std::filesystem::path dataset;     // empty: generate on the fly
  std::filesystem::path checkpoint;  // train/pretrain output
  std::filesystem::path telemetry;
  std::filesystem::path output_dir = ".";

  TrainConfig train;
  ActorConfig actor;
  CriticConfig critic;
  PretrainConfig pretrain;
  std::size_t pretrain_systems = 16;
  std::size_t pretrain_critic_steps = 0;
};

/// Parses config text. Relative paths are resolved against base_dir.
RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// A complete config with every key at its default value.
std::string default_config_text();

}  // namespace pearl
