#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "karma/policy.h"
#include "karma/reward.h"
#include "karma/synth.h"

namespace karma {

enum class WilcoxonMethod { kExact, kNormalApproximation };

std::string_view to_string(WilcoxonMethod m);

struct WilcoxonResult {
  std::size_t n_effective = 0;  // nonzero differences
  double w = 0.0;               // sum of ranks of positive differences
  double p_value = 1.0;         // two-sided
  WilcoxonMethod method = WilcoxonMethod::kExact;
  double alpha = 0.01;

  bool significant() const { return p_value < alpha; }
};

nlohmann::json to_json(const WilcoxonResult& r);

inline constexpr std::size_t kWilcoxonExactMax = 25;

// Paired signed-rank test on differences a - b. Zero differences are
// dropped and tied magnitudes get midranks. Up to kWilcoxonExactMax pairs
// the null distribution of W is counted exactly over all sign patterns;
// beyond that a tie-corrected normal approximation with continuity
// correction is used. Throws Error(kDegenerate) when every difference is
// zero and Error(kTooFewPairs) with fewer than five nonzero differences.
WilcoxonResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs,
                                    double alpha = 0.01);

struct PolicyEval {
  double mean_rm_reward = 0.0;
  double mean_kl = 0.0;  // nats per token against the reference
  double distinct_2 = 0.0;
  std::vector<double> rewards;  // one per prompt, in prompt order
};

nlohmann::json to_json(const PolicyEval& e);

// Unique response bigrams over all bigrams, EOS excluded; 0 when no
// response has two tokens.
double distinct_2(std::span<const std::vector<int>> responses);

// One sampled response per held-out prompt. Throws Error(kEmptyCorpus) for
// an empty prompt set.
PolicyEval eval_policy(const PolicyModel& policy, const PolicyModel& ref, const RewardModel& rm,
                       const Vocabulary& vocab, std::span<const ChatSequence> prompts,
                       uint64_t seed);

struct ShortcutSeedRecord {
  uint64_t seed = 0;
  double in_domain_generalized = 0.0;
  double in_domain_conditioned = 0.0;
  double transfer_generalized = 0.0;
  double transfer_conditioned = 0.0;
  std::size_t train_instances = 0;
  std::size_t test_instances = 0;
  std::size_t transfer_instances = 0;
};

struct ShortcutReport {
  double rho_train = 0.0;
  std::vector<ShortcutSeedRecord> seeds;
  // Means over seeds.
  double in_domain_generalized = 0.0;
  double in_domain_conditioned = 0.0;
  double transfer_generalized = 0.0;
  double transfer_conditioned = 0.0;
  double in_domain_delta = 0.0;  // conditioned - generalized
  double transfer_delta = 0.0;   // generalized - conditioned
  std::size_t transfer_reversals = 0;  // seeds with generalized >= conditioned on transfer
};

nlohmann::json to_json(const ShortcutReport& r);

struct ShortcutOptions {
  double rho_train = 0.9;
  std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
  RMConfig rm;
  SynthConfig synth;
  CorpusConfig corpus;
  std::size_t transfer_posts = 0;  // 0: same as synth.n_posts
  // Strip the metadata turn from the conditioned model's data too; the two
  // arms should then agree.
  bool scrub_meta = false;
};

// Per seed: an in-domain corpus with subreddit/label correlation rho_train
// and a rho=0 transfer corpus; generalized and conditioned reward models
// trained on the same threads are scored on both. Throws
// Error(kInvalidConfig) for fewer than five seeds.
ShortcutReport shortcut_experiment(const ShortcutOptions& opts);

}  // namespace karma
