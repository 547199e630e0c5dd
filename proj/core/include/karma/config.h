#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "karma/corpus.h"
#include "karma/ingest.h"
#include "karma/policy.h"
#include "karma/ppo.h"
#include "karma/reward.h"
#include "karma/synth.h"

namespace karma {

struct EvalConfig {
  std::size_t heldout_prompts = 200;
  std::size_t train_prompts = 1000;
  // Candidate responses used to pretrain the reference policy.
  std::size_t pretrain_sequences = 2000;
  double shortcut_rho = 0.9;
  std::size_t shortcut_seeds = 5;
  std::size_t transfer_posts = 0;
  double alpha = 0.01;
};

// One flat file with a section per module. Seeds are not configurable per
// section: every component seed is derived from the global `seed`.
struct RunConfig {
  FilterConfig ingest;
  CorpusConfig corpus;
  SerializationMode mode = SerializationMode::kGeneralized;
  SynthConfig synth;
  RMConfig rm;
  PolicyConfig policy;
  PPOConfig ppo;
  EvalConfig eval;
  uint64_t seed = 1;
  std::string run_dir = "runs/default";

  // Unknown keys anywhere throw Error(kInvalidConfig).
  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  // "section.key=value" or "key=value" for top-level keys. The value is
  // parsed as JSON when possible, otherwise taken as a string.
  void apply_override(std::string_view assignment);

  // Recomputes every component seed (and the reward model mode) from the
  // global settings.
  void derive();

  void validate() const;

  uint64_t split_seed() const;
  uint64_t eval_seed() const;
};

RunConfig load_run_config(const std::string& path);

}  // namespace karma
