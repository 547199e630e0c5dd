#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "karma/optim.h"
#include "karma/policy.h"
#include "karma/reward.h"

namespace karma {

enum class PromptKind { kBenign, kReddit };

std::string_view to_string(PromptKind kind);
PromptKind parse_prompt_kind(std::string_view s);

struct PPOConfig {
  // Desk default; billion-parameter runs use steps around 1e-5.
  double lr = 1e-4;
  double weight_decay = 0.0;
  std::size_t batch_size = 10;
  double kl_coef = 0.5;
  double clip_epsilon = 0.2;
  double baseline_decay = 0.9;
  std::size_t updates_per_batch = 4;
  std::size_t total_steps = 200;
  std::size_t checkpoint_every = 50;
  uint64_t seed = 1;
  PromptKind prompt_source = PromptKind::kBenign;

  void validate() const;
};

nlohmann::json to_json(const PPOConfig& cfg);
PPOConfig ppo_config_from_json(const nlohmann::json& j);

// Prompts without candidate turns.
struct PromptSource {
  PromptKind kind = PromptKind::kBenign;
  std::vector<ChatSequence> prompts;
};

PromptSource benign_prompt_source(std::size_t n, std::size_t n_topics, uint64_t seed);
// Contexts of pipeline-built instances with their candidate removed.
PromptSource reddit_prompt_source(std::span<const LabeledSequence> data);

struct Rollout {
  std::size_t prompt_index = 0;
  std::vector<int> prompt;
  std::vector<int> response;
  std::vector<float> logprobs;      // acting policy
  std::vector<float> ref_logprobs;  // frozen reference
  double reward = 0.0;              // reward-model probability
  std::vector<double> shaped;       // per-token shaped rewards
  double total = 0.0;
  double advantage = 0.0;
  double kl_to_ref = 0.0;  // exact, summed over the response
};

// Exponential moving average of total shaped reward. The first batch
// initializes it to that batch's mean.
struct Baseline {
  bool initialized = false;
  double value = 0.0;
};

// Samples one response per prompt with per-rollout seeds derived from
// (cfg.seed, step, index), scores it, shapes the reward with the KL penalty
// and assigns advantages against `baseline`, which is then updated.
std::vector<Rollout> collect_rollouts(const PolicyModel& policy, const PolicyModel& ref,
                                      const RewardModel& rm, const Vocabulary& vocab,
                                      std::span<const ChatSequence> prompts,
                                      std::span<const std::size_t> prompt_indices,
                                      const PPOConfig& cfg, std::size_t step, Baseline& baseline);

struct UpdateStats {
  double loss = 0.0;           // negated surrogate of the last epoch
  double clip_fraction = 0.0;  // mean over epochs
  double first_epoch_clip_fraction = 0.0;
  double approx_kl = 0.0;  // mean(old - new) after the update
};

// updates_per_batch AdamW epochs on the clipped surrogate over the whole
// batch. Throws Error(kAbortTraining) naming `step` on non-finite values.
UpdateStats ppo_update(PolicyModel& policy, AdamWState& opt, std::span<const Rollout> rollouts,
                       const PPOConfig& cfg, std::size_t step);

struct PPOStats {
  std::size_t step = 0;
  double mean_rm_reward = 0.0;
  double mean_kl_to_ref = 0.0;  // nats per token
  double clip_fraction = 0.0;
  double baseline_value = 0.0;
  double loss = 0.0;
  double approx_kl = 0.0;
  double mean_response_len = 0.0;
};

nlohmann::json to_json(const PPOStats& s);
PPOStats ppo_stats_from_json(const nlohmann::json& j);

// Prompt indices used at `step`; a pure function so runs can resume.
std::vector<std::size_t> prompt_batch(const PPOConfig& cfg, std::size_t step, std::size_t n_prompts);

struct PPOResult {
  PolicyModel policy;
  std::vector<PPOStats> history;
};

// Alternates rollout collection and updates for cfg.total_steps. With a run
// directory, stats stream to stats.jsonl and state is checkpointed every
// cfg.checkpoint_every steps; an existing checkpoint there is resumed.
PPOResult train_ppo(const PolicyModel& policy, const PolicyModel& ref, const RewardModel& rm,
                    const Vocabulary& vocab, const PromptSource& source, const PPOConfig& cfg,
                    const std::optional<std::string>& run_dir = std::nullopt);

}  // namespace karma
