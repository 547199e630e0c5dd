#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "karma/error.h"
#include "karma/ppo.h"
#include "karma/random.h"
#include "test_util.h"

namespace karma {
namespace {

const Vocabulary& vocab() { return testing::small_data().vocab; }

PolicyConfig small_policy() {
  PolicyConfig c;
  c.embed_dim = 16;
  c.hidden_dim = 32;
  c.context_window = 4;
  c.max_response_len = 8;
  c.seed = 2;
  return c;
}

RMConfig small_rm() {
  RMConfig c;
  c.embed_dim = 16;
  c.hidden_dim = 16;
  c.seed = 4;
  return c;
}

// Scores every sequence `p`.
RewardModel constant_rm(double p) {
  auto rm = RewardModel::zeros(vocab(), small_rm());
  rm.params().at("b2").value[0] = static_cast<float>(std::log(p / (1.0 - p)));
  return rm;
}

PolicyModel perturbed_policy(uint64_t seed) {
  PolicyModel p(vocab(), small_policy());
  std::mt19937_64 rng(seed);
  for (auto& v : p.params().at("w2").value.values) {
    v = static_cast<float>(static_cast<double>(rng() % 2001) / 2000.0 - 0.5);
  }
  return p;
}

const PromptSource& prompts() {
  static const PromptSource src = reddit_prompt_source(testing::small_data().test);
  return src;
}

PPOConfig small_ppo() {
  PPOConfig c;
  c.batch_size = 4;
  c.total_steps = 4;
  c.checkpoint_every = 2;
  c.seed = 9;
  c.lr = 1e-3;
  return c;
}

std::vector<Rollout> rollouts_for(const PolicyModel& policy, const PolicyModel& ref,
                                  const RewardModel& rm, const PPOConfig& cfg, Baseline& b) {
  const auto idx = prompt_batch(cfg, 0, prompts().prompts.size());
  return collect_rollouts(policy, ref, rm, vocab(), prompts().prompts, idx, cfg, 0, b);
}

TEST(Rollouts, ZeroBetaWithConstantRewardModel) {
  PPOConfig cfg = small_ppo();
  cfg.kl_coef = 0.0;
  const auto policy = perturbed_policy(1);
  const PolicyModel ref(vocab(), small_policy());
  Baseline b;
  for (const auto& r : rollouts_for(policy, ref, constant_rm(0.7), cfg, b)) {
    EXPECT_NEAR(r.reward, 0.7, 1e-6);
    EXPECT_NEAR(r.total, 0.7, 1e-6);
  }
}

TEST(Rollouts, PolicyEqualToReferenceHasNoKlTerm) {
  const auto policy = perturbed_policy(2);
  Baseline b;
  for (const auto& r : rollouts_for(policy, policy, constant_rm(0.3), small_ppo(), b)) {
    ASSERT_EQ(r.shaped.size(), r.response.size());
    ASSERT_EQ(r.ref_logprobs.size(), r.response.size());
    for (std::size_t t = 0; t + 1 < r.shaped.size(); ++t) EXPECT_EQ(r.shaped[t], 0.0);
    EXPECT_NEAR(r.shaped.back(), r.reward, 1e-12);
    EXPECT_EQ(r.kl_to_ref, 0.0);
  }
}

TEST(Rollouts, ShapingAdvantageAndBaseline) {
  const auto policy = perturbed_policy(3);
  const PolicyModel ref(vocab(), small_policy());
  const RewardModel rm(vocab(), small_rm());
  const PPOConfig cfg = small_ppo();
  Baseline b;
  const auto rs = rollouts_for(policy, ref, rm, cfg, b);
  double mean = 0;
  for (const auto& r : rs) {
    double total = 0;
    for (std::size_t t = 0; t < r.response.size(); ++t) {
      const double want = -cfg.kl_coef * (static_cast<double>(r.logprobs[t]) - r.ref_logprobs[t]) +
                          (t + 1 == r.response.size() ? r.reward : 0.0);
      EXPECT_NEAR(r.shaped[t], want, 1e-12);
      EXPECT_LE(r.logprobs[t], 0.0f);
      total += r.shaped[t];
    }
    EXPECT_NEAR(r.total, total, 1e-12);
    mean += r.total;
  }
  mean /= static_cast<double>(rs.size());
  // First batch: the baseline starts at the batch mean, so advantages centre.
  double adv_sum = 0;
  for (const auto& r : rs) adv_sum += r.advantage;
  EXPECT_NEAR(adv_sum, 0.0, 1e-9);
  EXPECT_TRUE(b.initialized);
  EXPECT_NEAR(b.value, mean, 1e-12);
  // Second batch: advantages are taken against the EMA.
  const double before = b.value;
  const auto idx = prompt_batch(cfg, 1, prompts().prompts.size());
  const auto rs2 = collect_rollouts(policy, ref, rm, vocab(), prompts().prompts, idx, cfg, 1, b);
  double mean2 = 0;
  for (const auto& r : rs2) {
    EXPECT_NEAR(r.advantage, r.total - before, 1e-12);
    mean2 += r.total;
  }
  mean2 /= static_cast<double>(rs2.size());
  EXPECT_NEAR(b.value, 0.9 * before + 0.1 * mean2, 1e-12);
}

TEST(Rollouts, RewardIsTheScoreOfTheDecodedResponse) {
  const auto policy = perturbed_policy(4);
  const RewardModel rm(vocab(), small_rm());
  Baseline b;
  const auto rs = rollouts_for(policy, policy, rm, small_ppo(), b);
  const auto& r = rs[0];
  std::vector<int> body = r.response;
  if (!body.empty() && body.back() == Vocabulary::kEos) body.pop_back();
  const auto& prompt = prompts().prompts[r.prompt_index];
  EXPECT_EQ(r.reward, rm.score(with_candidate(prompt, vocab().decode(body)), vocab()));
  EXPECT_EQ(r.prompt, encode_prompt(prompt, vocab()));
  const auto s = sample(policy, r.prompt, policy.config(), derive_seed(small_ppo().seed, 0, 0));
  EXPECT_EQ(s.tokens, r.response);
}

TEST(Rollouts, GoldenRewards) {
  const auto policy = perturbed_policy(5);
  const PolicyModel ref(vocab(), small_policy());
  const RewardModel rm(vocab(), small_rm());
  PPOConfig cfg = small_ppo();
  cfg.batch_size = 10;
  Baseline b;
  const auto rs = rollouts_for(policy, ref, rm, cfg, b);
  const double golden[] = {0.530751, 0.527774, 0.527235, 0.527130, 0.520429,
                            0.529032, 0.527139, 0.522305, 0.524845, 0.524379};
  ASSERT_EQ(rs.size(), 10u);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    EXPECT_NEAR(rs[i].reward, golden[i], 1e-6) << "rollout " << i << " got " << rs[i].reward;
  }
}

TEST(Rollouts, VocabularyMismatchIsAnError) {
  const Vocabulary other(std::vector<std::string>{"alpha", "beta"});
  const PolicyModel foreign(other, small_policy());
  const PolicyModel ref(vocab(), small_policy());
  Baseline b;
  try {
    rollouts_for(foreign, ref, constant_rm(0.5), small_ppo(), b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kVocabMismatch);
  }
}

Rollout one_token_rollout(int token, double advantage) {
  Rollout r;
  r.prompt = {Vocabulary::kUserMarker, Vocabulary::kNumSpecial, Vocabulary::kCandidateMarker};
  r.response = {token};
  r.advantage = advantage;
  return r;
}

TEST(Update, ZeroAdvantagesLeaveParameters) {
  auto policy = perturbed_policy(6);
  const PolicyModel before = policy;
  Baseline b;
  auto rs = rollouts_for(policy, policy, constant_rm(0.5), small_ppo(), b);
  for (auto& r : rs) r.advantage = 0.0;
  auto opt = AdamWState::for_store(policy.params());
  const auto st = ppo_update(policy, opt, rs, small_ppo(), 0);
  EXPECT_TRUE(policy.params().same_values(before.params()));
  EXPECT_EQ(st.first_epoch_clip_fraction, 0.0);
}

// Three corpus words; with the zero output layer the model is uniform over
// V = 8 + 3 tokens, so the surrogate gradient with respect to b2 is
// -A (onehot(a) - 1/V) and the first AdamW step moves each b2 entry by
// lr against the sign of that gradient.
TEST(Update, SingleTokenToyMatchesHandGradient) {
  const Vocabulary v3(std::vector<std::string>{"apple", "berry", "cherry"});
  PolicyConfig pc = small_policy();
  PolicyModel policy(v3, pc);
  const int a = v3.id("berry");
  Rollout r = one_token_rollout(a, 0.8);
  r.logprobs = logprob(policy, r.prompt, r.response);
  PPOConfig cfg = small_ppo();
  cfg.updates_per_batch = 1;
  cfg.lr = 0.0;
  auto opt = AdamWState::for_store(policy.params());
  const std::vector<Rollout> batch{r};
  ppo_update(policy, opt, batch, cfg, 0);
  const auto& g = policy.params().at("b2").grad;
  const double vsize = static_cast<double>(v3.size());
  for (int j = 0; j < static_cast<int>(v3.size()); ++j) {
    const double want = -0.8 * ((j == a ? 1.0 : 0.0) - 1.0 / vsize);
    EXPECT_NEAR(g[static_cast<std::size_t>(j)], want, 1e-6) << "b2[" << j << "]";
  }

  cfg.lr = 1e-3;
  PolicyModel stepped(v3, pc);
  auto opt2 = AdamWState::for_store(stepped.params());
  ppo_update(stepped, opt2, batch, cfg, 0);
  const auto& b2 = stepped.params().at("b2").value;
  for (int j = 0; j < static_cast<int>(v3.size()); ++j) {
    const double grad = -0.8 * ((j == a ? 1.0 : 0.0) - 1.0 / vsize);
    const double want = -cfg.lr * grad / (std::abs(grad) + 1e-8);
    EXPECT_NEAR(b2[static_cast<std::size_t>(j)], want, 1e-7) << "b2[" << j << "]";
  }
}

// With one epoch and ratio 1 everywhere the clipped surrogate's gradient is
// the plain policy-gradient estimator mean_t A_t grad log pi(a_t).
TEST(Update, FirstEpochGradientIsPolicyGradient) {
  auto policy = perturbed_policy(7);
  Baseline b;
  auto rs = rollouts_for(policy, policy, constant_rm(0.5), small_ppo(), b);
  std::mt19937_64 rng(3);
  for (auto& r : rs) r.advantage = static_cast<double>(rng() % 200) / 100.0 - 1.0;
  PPOConfig cfg = small_ppo();
  cfg.updates_per_batch = 1;
  cfg.lr = 0.0;
  auto opt = AdamWState::for_store(policy.params());
  ppo_update(policy, opt, rs, cfg, 0);
  const Tensor got = policy.params().at("w2").grad;

  PolicyModel pg = policy;
  pg.params().zero_grad();
  Graph g;
  std::size_t n_tokens = 0;
  Var total{};
  bool first = true;
  for (const auto& r : rs) {
    const Var lp = g.sum(logprob(g, pg, r.prompt, r.response));
    const Var term = g.scale(lp, static_cast<float>(r.advantage));
    total = first ? term : g.add(total, term);
    first = false;
    n_tokens += r.response.size();
  }
  g.backward(g.scale(total, -1.0f / static_cast<float>(n_tokens)));
  const Tensor& want = pg.params().at("w2").grad;
  ASSERT_EQ(got.numel(), want.numel());
  for (std::size_t i = 0; i < got.numel(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5);
}

TEST(Update, FirstEpochNeverClipsAndStatsAreBounded) {
  auto policy = perturbed_policy(8);
  const PolicyModel ref(vocab(), small_policy());
  const RewardModel rm(vocab(), small_rm());
  PPOConfig cfg = small_ppo();
  cfg.lr = 0.05;
  Baseline b;
  auto rs = rollouts_for(policy, ref, rm, cfg, b);
  auto opt = AdamWState::for_store(policy.params());
  const auto st = ppo_update(policy, opt, rs, cfg, 0);
  EXPECT_EQ(st.first_epoch_clip_fraction, 0.0);
  EXPECT_GE(st.clip_fraction, 0.0);
  EXPECT_LE(st.clip_fraction, 1.0);
  EXPECT_TRUE(std::isfinite(st.approx_kl));
}

TEST(Update, NonFiniteAdvantageAbortsWithStep) {
  auto policy = perturbed_policy(9);
  Baseline b;
  auto rs = rollouts_for(policy, policy, constant_rm(0.5), small_ppo(), b);
  rs[0].advantage = std::numeric_limits<double>::infinity();
  auto opt = AdamWState::for_store(policy.params());
  try {
    ppo_update(policy, opt, rs, small_ppo(), 17);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAbortTraining);
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
  }
}

TEST(PromptBatch, PureAndInRange) {
  const PPOConfig cfg = small_ppo();
  EXPECT_EQ(prompt_batch(cfg, 3, 50), prompt_batch(cfg, 3, 50));
  EXPECT_NE(prompt_batch(cfg, 3, 50), prompt_batch(cfg, 4, 50));
  for (const auto i : prompt_batch(cfg, 5, 7)) EXPECT_LT(i, 7u);
  EXPECT_EQ(prompt_batch(cfg, 0, 50).size(), cfg.batch_size);
  EXPECT_THROW(prompt_batch(cfg, 0, 0), Error);
}

TEST(TrainPpo, DeterministicStatsStream) {
  const auto policy = perturbed_policy(10);
  const RewardModel rm(vocab(), small_rm());
  const auto a = train_ppo(policy, policy, rm, vocab(), prompts(), small_ppo());
  const auto b = train_ppo(policy, policy, rm, vocab(), prompts(), small_ppo());
  ASSERT_EQ(a.history.size(), 4u);
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(to_json(a.history[i]).dump(), to_json(b.history[i]).dump());
    EXPECT_GE(a.history[i].mean_kl_to_ref, -1e-4);
  }
  EXPECT_TRUE(a.policy.params().same_values(b.policy.params()));
}

TEST(TrainPpo, ResumeMatchesUninterruptedRun) {
  const auto policy = perturbed_policy(11);
  const RewardModel rm(vocab(), small_rm());
  testing::TempDir dir;
  const auto straight = train_ppo(policy, policy, rm, vocab(), prompts(), small_ppo(), dir.file("a"));
  PPOConfig half = small_ppo();
  half.total_steps = 2;
  train_ppo(policy, policy, rm, vocab(), prompts(), half, dir.file("b"));
  const auto resumed = train_ppo(policy, policy, rm, vocab(), prompts(), small_ppo(), dir.file("b"));
  EXPECT_TRUE(resumed.policy.params().same_values(straight.policy.params()));
  EXPECT_EQ(testing::slurp(dir.file("a") + "/stats.jsonl"), testing::slurp(dir.file("b") + "/stats.jsonl"));
  ASSERT_EQ(resumed.history.size(), 4u);
}

TEST(TrainPpo, ConstantRewardModelGivesFlatReward) {
  const auto policy = perturbed_policy(12);
  const auto r = train_ppo(policy, policy, constant_rm(0.6), vocab(), prompts(), small_ppo());
  for (const auto& s : r.history) EXPECT_NEAR(s.mean_rm_reward, 0.6, 1e-6);
}

TEST(PPOConfig, Validation) {
  PPOConfig c;
  c.kl_coef = -1;
  EXPECT_THROW(c.validate(), Error);
  c = PPOConfig{};
  c.clip_epsilon = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = PPOConfig{};
  EXPECT_EQ(to_json(ppo_config_from_json(to_json(c))), to_json(c));
  EXPECT_EQ(parse_prompt_kind("reddit"), PromptKind::kReddit);
  EXPECT_THROW(parse_prompt_kind("toxic"), Error);
}

}  // namespace
}  // namespace karma
