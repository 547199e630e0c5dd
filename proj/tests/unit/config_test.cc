#include <gtest/gtest.h>

#include <fstream>

#include "karma/config.h"
#include "karma/error.h"
#include "test_util.h"

namespace karma {
namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no karma::Error thrown";
  return ErrorCode::kIo;
}

TEST(RunConfig, DefaultsRoundTrip) {
  const RunConfig c;
  const auto back = RunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.ppo.kl_coef, 0.5);
  EXPECT_EQ(back.ppo.batch_size, 10u);
  EXPECT_EQ(back.corpus.reward_threshold.str(), "2/5");
}

TEST(RunConfig, UnknownKeysAreFatal) {
  using nlohmann::json;
  EXPECT_EQ(code_of([] { RunConfig::from_json(json{{"sed", 3}}); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([] { RunConfig::from_json(json{{"rm", {{"learning_rate", 1}}}}); }),
            ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([] { RunConfig::from_json(json{{"rm", 3}}); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([] { RunConfig::from_json(json::array()); }), ErrorCode::kInvalidConfig);
}

TEST(RunConfig, PartialFilesOverlayDefaults) {
  const auto c = RunConfig::from_json({{"seed", 7}, {"ppo", {{"kl_coef", 5.0}}}});
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.ppo.kl_coef, 5.0);
  EXPECT_EQ(c.ppo.clip_epsilon, 0.2);
}

TEST(RunConfig, InvalidValuesAreRejected) {
  using nlohmann::json;
  EXPECT_EQ(code_of([] { RunConfig::from_json(json{{"ppo", {{"clip_epsilon", 1.5}}}}); }),
            ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([] { RunConfig::from_json(json{{"corpus", {{"reward_threshold", "2/0"}}}}); }),
            ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([] { RunConfig::from_json(json{{"corpus", {{"mode", "sideways"}}}}); }),
            ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([] { RunConfig::from_json(json{{"eval", {{"shortcut_seeds", 3}}}}); }),
            ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([] { RunConfig::from_json(json{{"ppo", {{"kl_coef", "big"}}}}); }),
            ErrorCode::kInvalidConfig);
}

TEST(RunConfig, Overrides) {
  RunConfig c;
  c.apply_override("ppo.kl_coef=2.5");
  c.apply_override("corpus.mode=conditioned");
  c.apply_override("run_dir=runs/x");
  c.apply_override("ingest.blocklist=[\"foo\",\"bar\"]");
  EXPECT_EQ(c.ppo.kl_coef, 2.5);
  EXPECT_EQ(c.mode, SerializationMode::kConditioned);
  EXPECT_EQ(c.rm.mode, SerializationMode::kConditioned);
  EXPECT_EQ(c.run_dir, "runs/x");
  EXPECT_EQ(c.ingest.blocklist, (std::vector<std::string>{"foo", "bar"}));
  EXPECT_EQ(code_of([&] { c.apply_override("ppo.nope=1"); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([&] { c.apply_override("nosection.x=1"); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code_of([&] { c.apply_override("justakey"); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(c.ppo.kl_coef, 2.5);
}

TEST(RunConfig, ComponentSeedsDeriveFromTheGlobalSeed) {
  RunConfig a, b;
  a.seed = 1;
  b.seed = 2;
  a.derive();
  b.derive();
  EXPECT_NE(a.rm.seed, b.rm.seed);
  EXPECT_NE(a.ppo.seed, b.ppo.seed);
  EXPECT_NE(a.rm.seed, a.ppo.seed);
  EXPECT_NE(a.split_seed(), a.eval_seed());
  RunConfig again;
  again.seed = 1;
  again.derive();
  EXPECT_EQ(again.rm.seed, a.rm.seed);
  EXPECT_EQ(again.synth.seed, a.synth.seed);
}

TEST(RunConfig, LoadsFixtureConfigAndRejectsBadFiles) {
  const auto c = load_run_config(testing::data_path("fixture/config.json"));
  EXPECT_EQ(c.seed, 11u);
  EXPECT_EQ(c.ingest.blocklist, (std::vector<std::string>{"grimword"}));
  testing::TempDir dir;
  std::ofstream(dir.file("bad.json")) << "{ not json";
  EXPECT_EQ(code_of([&] { load_run_config(dir.file("bad.json")); }), ErrorCode::kInvalidConfig);
  EXPECT_THROW(load_run_config(dir.file("missing.json")), Error);
}

}  // namespace
}  // namespace karma
