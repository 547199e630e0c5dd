#include "karma/config.h"

#include "karma/error.h"
#include "karma/random.h"
#include "karma/records.h"

namespace karma {
namespace {

using json = nlohmann::json;

json ingest_json(const FilterConfig& c) {
  return {{"min_tokens", c.min_tokens}, {"blocklist", c.blocklist}};
}

json corpus_json(const CorpusConfig& c, SerializationMode mode) {
  return {{"reward_threshold", c.reward_threshold.str()},
          {"nonpositive_parent_min_score", c.nonpositive_parent_min_score},
          {"sibling_count", c.sibling_count},
          {"min_tokens", c.min_tokens},
          {"split_fraction", c.split_fraction},
          {"vocab_cap", c.vocab_cap},
          {"mode", to_string(mode)}};
}

json synth_json(const SynthConfig& c) {
  return {{"n_posts", c.n_posts},
          {"replies_per_post", c.replies_per_post},
          {"n_topics", c.n_topics},
          {"rho", c.rho},
          {"noise", c.noise},
          {"topic_weight", c.topic_weight},
          {"style_weight", c.style_weight},
          {"community_weight", c.community_weight},
          {"n_subreddits", c.n_subreddits}};
}

json eval_json(const EvalConfig& c) {
  return {{"heldout_prompts", c.heldout_prompts},
          {"train_prompts", c.train_prompts},
          {"pretrain_sequences", c.pretrain_sequences},
          {"shortcut_rho", c.shortcut_rho},
          {"shortcut_seeds", c.shortcut_seeds},
          {"transfer_posts", c.transfer_posts},
          {"alpha", c.alpha}};
}

json without(json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

// Overlays `user` onto `defaults`, rejecting keys the defaults lack.
json overlay(const json& defaults, const json& user, const std::string& section) {
  if (!user.is_object()) {
    throw Error(ErrorCode::kInvalidConfig, "config section '" + section + "' must be an object");
  }
  json out = defaults;
  for (const auto& [key, value] : user.items()) {
    if (!defaults.contains(key)) {
      throw Error(ErrorCode::kInvalidConfig, "unknown config key '" + section + "." + key + "'");
    }
    out[key] = value;
  }
  return out;
}

template <typename T>
T get(const json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::kInvalidConfig,
                "config key '" + section + "." + key + "' has the wrong type");
  }
}

void check_section(const std::string& name) {
  static const char* kSections[] = {"ingest", "corpus", "synth", "rm", "policy", "ppo", "eval"};
  for (const char* s : kSections) {
    if (name == s) return;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown config section '" + name + "'");
}

}  // namespace

json RunConfig::to_json() const {
  return {{"seed", seed},
          {"run_dir", run_dir},
          {"ingest", ingest_json(ingest)},
          {"corpus", corpus_json(corpus, mode)},
          {"synth", synth_json(synth)},
          {"rm", without(karma::to_json(rm), {"seed", "mode"})},
          {"policy", without(karma::to_json(policy), {"seed"})},
          {"ppo", without(karma::to_json(ppo), {"seed"})},
          {"eval", eval_json(eval)}};
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidConfig, "config must be a JSON object");
  const RunConfig defaults;
  const json base = defaults.to_json();
  json merged = base;
  for (const auto& [key, value] : j.items()) {
    if (!base.contains(key)) throw Error(ErrorCode::kInvalidConfig, "unknown config key '" + key + "'");
    merged[key] = base[key].is_object() ? overlay(base[key], value, key) : value;
  }

  RunConfig c;
  c.seed = get<uint64_t>(merged, "seed", "");
  c.run_dir = get<std::string>(merged, "run_dir", "");

  const json& in = merged["ingest"];
  c.ingest.min_tokens = get<std::size_t>(in, "min_tokens", "ingest");
  c.ingest.blocklist = get<std::vector<std::string>>(in, "blocklist", "ingest");

  const json& co = merged["corpus"];
  try {
    c.corpus.reward_threshold = Ratio::parse(get<std::string>(co, "reward_threshold", "corpus"));
    c.mode = parse_mode(get<std::string>(co, "mode", "corpus"));
  } catch (const Error& e) {
    throw Error(ErrorCode::kInvalidConfig, e.what());
  }
  c.corpus.nonpositive_parent_min_score = get<int64_t>(co, "nonpositive_parent_min_score", "corpus");
  c.corpus.sibling_count = get<std::size_t>(co, "sibling_count", "corpus");
  c.corpus.min_tokens = get<std::size_t>(co, "min_tokens", "corpus");
  c.corpus.split_fraction = get<double>(co, "split_fraction", "corpus");
  c.corpus.vocab_cap = get<std::size_t>(co, "vocab_cap", "corpus");

  const json& sy = merged["synth"];
  c.synth.n_posts = get<std::size_t>(sy, "n_posts", "synth");
  c.synth.replies_per_post = get<std::size_t>(sy, "replies_per_post", "synth");
  c.synth.n_topics = get<std::size_t>(sy, "n_topics", "synth");
  c.synth.rho = get<double>(sy, "rho", "synth");
  c.synth.noise = get<double>(sy, "noise", "synth");
  c.synth.topic_weight = get<double>(sy, "topic_weight", "synth");
  c.synth.style_weight = get<double>(sy, "style_weight", "synth");
  c.synth.community_weight = get<double>(sy, "community_weight", "synth");
  c.synth.n_subreddits = get<std::size_t>(sy, "n_subreddits", "synth");

  try {
    json rm = merged["rm"];
    rm["seed"] = 0;
    rm["mode"] = to_string(c.mode);
    c.rm = rm_config_from_json(rm);
    json pol = merged["policy"];
    pol["seed"] = 0;
    c.policy = policy_config_from_json(pol);
    json ppo = merged["ppo"];
    ppo["seed"] = 0;
    c.ppo = ppo_config_from_json(ppo);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("bad model config: ") + e.what());
  }

  const json& ev = merged["eval"];
  c.eval.heldout_prompts = get<std::size_t>(ev, "heldout_prompts", "eval");
  c.eval.train_prompts = get<std::size_t>(ev, "train_prompts", "eval");
  c.eval.pretrain_sequences = get<std::size_t>(ev, "pretrain_sequences", "eval");
  c.eval.shortcut_rho = get<double>(ev, "shortcut_rho", "eval");
  c.eval.shortcut_seeds = get<std::size_t>(ev, "shortcut_seeds", "eval");
  c.eval.transfer_posts = get<std::size_t>(ev, "transfer_posts", "eval");
  c.eval.alpha = get<double>(ev, "alpha", "eval");

  c.derive();
  c.validate();
  return c;
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw Error(ErrorCode::kInvalidConfig, "override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json patch = json::object();
  const auto dot = key.find('.');
  if (dot == std::string::npos) {
    patch[key] = value;
  } else {
    const std::string section = key.substr(0, dot);
    check_section(section);
    patch[section] = json::object({{key.substr(dot + 1), value}});
  }
  // Re-resolve through from_json so overrides get the same checks as the file.
  json full = to_json();
  for (const auto& [k, v] : patch.items()) {
    if (!full.contains(k)) throw Error(ErrorCode::kInvalidConfig, "unknown config key '" + k + "'");
    if (v.is_object() && full[k].is_object()) {
      full[k] = overlay(full[k], v, k);
    } else {
      full[k] = v;
    }
  }
  *this = from_json(full);
}

void RunConfig::derive() {
  synth.seed = derive_seed(seed, "synth");
  synth.reward_threshold = corpus.reward_threshold;
  rm.seed = derive_seed(seed, "rm");
  rm.mode = mode;
  policy.seed = derive_seed(seed, "policy");
  ppo.seed = derive_seed(seed, "ppo");
}

void RunConfig::validate() const {
  corpus.validate();
  synth.validate();
  rm.validate();
  policy.validate();
  ppo.validate();
  if (eval.shortcut_seeds < 5) throw Error(ErrorCode::kInvalidConfig, "eval.shortcut_seeds must be >= 5");
  if (!(eval.alpha > 0.0 && eval.alpha < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "eval.alpha must be in (0, 1)");
  }
}

uint64_t RunConfig::split_seed() const { return derive_seed(seed, "split"); }
uint64_t RunConfig::eval_seed() const { return derive_seed(seed, "eval"); }

RunConfig load_run_config(const std::string& path) {
  const json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kInvalidConfig, "config file '" + path + "' is not valid JSON");
  return RunConfig::from_json(j);
}

}  // namespace karma
