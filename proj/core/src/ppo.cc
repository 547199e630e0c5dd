#include "karma/ppo.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "karma/checkpoint.h"
#include "karma/error.h"
#include "karma/random.h"
#include "karma/records.h"
#include "karma/synth.h"

namespace karma {
namespace {

void check_vocab(uint64_t expected, uint64_t actual, const char* what) {
  if (expected != actual) {
    throw Error(ErrorCode::kVocabMismatch, std::string(what) + " uses a different vocabulary");
  }
}

std::vector<int> strip_eos(std::span<const int> response) {
  std::vector<int> out(response.begin(), response.end());
  if (!out.empty() && out.back() == Vocabulary::kEos) out.pop_back();
  return out;
}

}  // namespace

std::string_view to_string(PromptKind kind) {
  return kind == PromptKind::kBenign ? "benign" : "reddit";
}

PromptKind parse_prompt_kind(std::string_view s) {
  if (s == "benign") return PromptKind::kBenign;
  if (s == "reddit") return PromptKind::kReddit;
  throw Error(ErrorCode::kInvalidConfig, "unknown prompt source '" + std::string(s) + "'");
}

void PPOConfig::validate() const {
  if (!(kl_coef >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "kl_coef must be >= 0");
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "clip_epsilon must be in (0, 1)");
  }
  if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "baseline_decay must be in [0, 1)");
  }
  if (batch_size == 0 || updates_per_batch == 0) {
    throw Error(ErrorCode::kInvalidConfig, "batch_size and updates_per_batch must be positive");
  }
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "ppo lr and weight_decay must be non-negative");
  }
}

nlohmann::json to_json(const PPOConfig& c) {
  return {{"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"kl_coef", c.kl_coef},
          {"clip_epsilon", c.clip_epsilon},
          {"baseline_decay", c.baseline_decay},
          {"updates_per_batch", c.updates_per_batch},
          {"total_steps", c.total_steps},
          {"checkpoint_every", c.checkpoint_every},
          {"seed", c.seed},
          {"prompt_source", to_string(c.prompt_source)}};
}

PPOConfig ppo_config_from_json(const nlohmann::json& j) {
  PPOConfig c;
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.kl_coef = j.at("kl_coef").get<double>();
  c.clip_epsilon = j.at("clip_epsilon").get<double>();
  c.baseline_decay = j.at("baseline_decay").get<double>();
  c.updates_per_batch = j.at("updates_per_batch").get<std::size_t>();
  c.total_steps = j.at("total_steps").get<std::size_t>();
  c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  c.seed = j.at("seed").get<uint64_t>();
  c.prompt_source = parse_prompt_kind(j.at("prompt_source").get<std::string>());
  return c;
}

PromptSource benign_prompt_source(std::size_t n, std::size_t n_topics, uint64_t seed) {
  return {PromptKind::kBenign, generate_benign_prompts(n, n_topics, seed)};
}

PromptSource reddit_prompt_source(std::span<const LabeledSequence> data) {
  PromptSource src{PromptKind::kReddit, {}};
  src.prompts.reserve(data.size());
  for (const auto& s : data) src.prompts.push_back(prompt_of(s.sequence));
  return src;
}

std::vector<Rollout> collect_rollouts(const PolicyModel& policy, const PolicyModel& ref,
                                      const RewardModel& rm, const Vocabulary& vocab,
                                      std::span<const ChatSequence> prompts,
                                      std::span<const std::size_t> prompt_indices,
                                      const PPOConfig& cfg, std::size_t step, Baseline& baseline) {
  check_vocab(vocab.checksum(), policy.vocab_checksum(), "policy");
  check_vocab(vocab.checksum(), ref.vocab_checksum(), "reference policy");
  check_vocab(vocab.checksum(), rm.vocab_checksum(), "reward model");
  std::vector<Rollout> out;
  out.reserve(prompt_indices.size());
  for (std::size_t i = 0; i < prompt_indices.size(); ++i) {
    const ChatSequence& prompt = prompts[prompt_indices[i]];
    Rollout r;
    r.prompt_index = prompt_indices[i];
    r.prompt = encode_prompt(prompt, vocab);
    Sample s = sample(policy, r.prompt, policy.config(), derive_seed(cfg.seed, step, i));
    r.response = std::move(s.tokens);
    r.logprobs = std::move(s.logprobs);
    r.ref_logprobs = logprob(ref, r.prompt, r.response);
    r.reward = rm.score(with_candidate(prompt, vocab.decode(strip_eos(r.response))), vocab);
    r.shaped.resize(r.response.size());
    for (std::size_t t = 0; t < r.response.size(); ++t) {
      r.shaped[t] = -cfg.kl_coef * (static_cast<double>(r.logprobs[t]) - r.ref_logprobs[t]);
    }
    r.shaped.back() += r.reward;
    for (const double x : r.shaped) r.total += x;
    for (const double kl : kl_per_token(policy, ref, r.prompt, r.response)) r.kl_to_ref += kl;
    out.push_back(std::move(r));
  }
  if (out.empty()) return out;

  double mean_total = 0.0;
  for (const auto& r : out) mean_total += r.total;
  mean_total /= static_cast<double>(out.size());
  if (!baseline.initialized) {
    baseline.value = mean_total;
    baseline.initialized = true;
  }
  for (auto& r : out) r.advantage = r.total - baseline.value;
  baseline.value = cfg.baseline_decay * baseline.value + (1.0 - cfg.baseline_decay) * mean_total;
  return out;
}

UpdateStats ppo_update(PolicyModel& policy, AdamWState& opt, std::span<const Rollout> rollouts,
                       const PPOConfig& cfg, std::size_t step) {
  cfg.validate();
  UpdateStats stats;
  if (rollouts.empty()) return stats;
  std::vector<float> old_lp;
  std::vector<float> adv;
  for (const auto& r : rollouts) {
    if (r.logprobs.size() != r.response.size()) {
      throw Error(ErrorCode::kShapeMismatch, "rollout logprobs do not match its response");
    }
    old_lp.insert(old_lp.end(), r.logprobs.begin(), r.logprobs.end());
    adv.insert(adv.end(), r.response.size(), static_cast<float>(r.advantage));
  }
  const AdamWConfig opt_cfg{cfg.lr, cfg.weight_decay};
  const auto abort = [step](const Error& e) {
    return Error(ErrorCode::kAbortTraining,
                 "ppo update diverged at step " + std::to_string(step) + ": " + e.what());
  };

  double clip_sum = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.updates_per_batch; ++epoch) {
    policy.params().zero_grad();
    double clipped = 0.0;
    try {
      Graph g;
      std::vector<Var> parts;
      for (const auto& r : rollouts) parts.push_back(logprob(g, policy, r.prompt, r.response));
      const Var lp = g.concat(parts, 0);
      const Tensor& now = g.value(lp);
      for (std::size_t t = 0; t < now.numel(); ++t) {
        const double ratio = std::exp(static_cast<double>(now[t]) - old_lp[t]);
        if (std::abs(ratio - 1.0) > cfg.clip_epsilon) clipped += 1.0;
      }
      const Var loss = g.scale(
          g.clipped_surrogate(lp, old_lp, adv, static_cast<float>(cfg.clip_epsilon)), -1.0f);
      stats.loss = g.value(loss)[0];
      g.backward(loss);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite) throw;
      throw abort(e);
    }
    const double frac = clipped / static_cast<double>(old_lp.size());
    if (epoch == 0) stats.first_epoch_clip_fraction = frac;
    clip_sum += frac;
    adamw_step(policy.params(), opt, opt_cfg);
  }
  stats.clip_fraction = clip_sum / static_cast<double>(cfg.updates_per_batch);

  double kl = 0.0;
  std::size_t offset = 0;
  for (const auto& r : rollouts) {
    const auto now = logprob(policy, r.prompt, r.response);
    for (std::size_t t = 0; t < now.size(); ++t) {
      kl += static_cast<double>(old_lp[offset + t]) - now[t];
    }
    offset += now.size();
  }
  stats.approx_kl = kl / static_cast<double>(old_lp.size());
  return stats;
}

nlohmann::json to_json(const PPOStats& s) {
  return {{"step", s.step},
          {"mean_rm_reward", s.mean_rm_reward},
          {"mean_kl_to_ref", s.mean_kl_to_ref},
          {"clip_fraction", s.clip_fraction},
          {"baseline_value", s.baseline_value},
          {"loss", s.loss},
          {"approx_kl", s.approx_kl},
          {"mean_response_len", s.mean_response_len}};
}

PPOStats ppo_stats_from_json(const nlohmann::json& j) {
  PPOStats s;
  s.step = j.at("step").get<std::size_t>();
  s.mean_rm_reward = j.at("mean_rm_reward").get<double>();
  s.mean_kl_to_ref = j.at("mean_kl_to_ref").get<double>();
  s.clip_fraction = j.at("clip_fraction").get<double>();
  s.baseline_value = j.at("baseline_value").get<double>();
  s.loss = j.at("loss").get<double>();
  s.approx_kl = j.at("approx_kl").get<double>();
  s.mean_response_len = j.at("mean_response_len").get<double>();
  return s;
}

std::vector<std::size_t> prompt_batch(const PPOConfig& cfg, std::size_t step, std::size_t n_prompts) {
  if (n_prompts == 0) throw Error(ErrorCode::kEmptyCorpus, "prompt source is empty");
  const uint64_t base = derive_seed(cfg.seed, "ppo-prompts");
  std::vector<std::size_t> out(cfg.batch_size);
  for (std::size_t i = 0; i < cfg.batch_size; ++i) {
    out[i] = static_cast<std::size_t>(derive_seed(base, step, i) % n_prompts);
  }
  return out;
}

namespace {

namespace fs = std::filesystem;

struct RunState {
  std::size_t step = 0;
  Baseline baseline;
};

void save_run_state(const fs::path& dir, const PolicyModel& policy, const AdamWState& opt,
                    const RunState& state) {
  policy.save((dir / "policy.krma").string());
  ParameterStore moments;
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    moments.add("m/" + policy.params()[i].name, opt.m[i]);
    moments.add("v/" + policy.params()[i].name, opt.v[i]);
  }
  CheckpointHeader h;
  h.kind = "optimizer";
  h.vocab_checksum = policy.vocab_checksum();
  h.config = {{"t", opt.t}};
  save_checkpoint(moments, h, (dir / "optimizer.krma").string());
  const nlohmann::json j = {{"step", state.step},
                            {"baseline_initialized", state.baseline.initialized},
                            {"baseline_value", state.baseline.value}};
  // Written last: its presence marks a complete checkpoint.
  write_text_file((dir / "ppo_state.json").string(), j.dump(2) + "\n");
}

std::optional<RunState> load_run_state(const fs::path& dir, const Vocabulary& vocab,
                                       PolicyModel& policy, AdamWState& opt) {
  if (!fs::exists(dir / "ppo_state.json")) return std::nullopt;
  const auto j = nlohmann::json::parse(read_text_file((dir / "ppo_state.json").string()), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kIncompatibleCheckpoint, "unreadable ppo_state.json");
  RunState state;
  try {
    state.step = j.at("step").get<std::size_t>();
    state.baseline.initialized = j.at("baseline_initialized").get<bool>();
    state.baseline.value = j.at("baseline_value").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, std::string("bad ppo_state.json: ") + e.what());
  }
  policy = PolicyModel::load((dir / "policy.krma").string(), vocab);
  Checkpoint ck = load_checkpoint((dir / "optimizer.krma").string(), vocab.checksum());
  opt = AdamWState::for_store(policy.params());
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    const auto& name = policy.params()[i].name;
    opt.m[i] = ck.store.at("m/" + name).value;
    opt.v[i] = ck.store.at("v/" + name).value;
    if (opt.m[i].dims != policy.params()[i].value.dims || opt.v[i].dims != opt.m[i].dims) {
      throw Error(ErrorCode::kIncompatibleCheckpoint, "optimizer state shape mismatch for " + name);
    }
  }
  opt.t = ck.header.config.at("t").get<int64_t>();
  return state;
}

}  // namespace

PPOResult train_ppo(const PolicyModel& policy, const PolicyModel& ref, const RewardModel& rm,
                    const Vocabulary& vocab, const PromptSource& source, const PPOConfig& cfg,
                    const std::optional<std::string>& run_dir) {
  cfg.validate();
  if (source.prompts.empty()) throw Error(ErrorCode::kEmptyCorpus, "prompt source is empty");
  PPOResult result{policy, {}};
  AdamWState opt = AdamWState::for_store(result.policy.params());
  RunState state;

  fs::path dir;
  if (run_dir) {
    dir = *run_dir;
    fs::create_directories(dir);
    if (auto resumed = load_run_state(dir, vocab, result.policy, opt)) {
      state = *resumed;
      // Keep only the stats lines covered by the checkpoint.
      std::ifstream in(dir / "stats.jsonl");
      std::string line;
      while (result.history.size() < state.step && std::getline(in, line)) {
        if (!line.empty()) result.history.push_back(ppo_stats_from_json(nlohmann::json::parse(line)));
      }
      if (result.history.size() != state.step) {
        throw Error(ErrorCode::kIncompatibleCheckpoint, "stats.jsonl is shorter than the checkpoint");
      }
    }
    std::string kept;
    for (const auto& s : result.history) kept += to_json(s).dump() + "\n";
    write_text_file((dir / "stats.jsonl").string(), kept);
  }

  std::ofstream stats_out;
  if (run_dir) stats_out.open(dir / "stats.jsonl", std::ios::app);

  for (std::size_t step = state.step; step < cfg.total_steps; ++step) {
    const auto indices = prompt_batch(cfg, step, source.prompts.size());
    const auto rollouts = collect_rollouts(result.policy, ref, rm, vocab, source.prompts, indices,
                                           cfg, step, state.baseline);
    const UpdateStats up = ppo_update(result.policy, opt, rollouts, cfg, step);

    PPOStats s;
    s.step = step;
    double tokens = 0.0;
    for (const auto& r : rollouts) {
      s.mean_rm_reward += r.reward;
      s.mean_kl_to_ref += r.kl_to_ref;
      tokens += static_cast<double>(r.response.size());
    }
    s.mean_rm_reward /= static_cast<double>(rollouts.size());
    s.mean_kl_to_ref /= tokens;
    s.mean_response_len = tokens / static_cast<double>(rollouts.size());
    s.clip_fraction = up.clip_fraction;
    s.baseline_value = state.baseline.value;
    s.loss = up.loss;
    s.approx_kl = up.approx_kl;
    result.history.push_back(s);
    state.step = step + 1;

    if (run_dir) {
      stats_out << to_json(s).dump() << '\n';
      stats_out.flush();
      const bool due = cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0;
      if (due || state.step == cfg.total_steps) save_run_state(dir, result.policy, opt, state);
    }
  }
  return result;
}

}  // namespace karma
