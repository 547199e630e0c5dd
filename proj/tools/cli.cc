#include "cli.h"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "karma/build_info.h"
#include "karma/config.h"
#include "karma/error.h"
#include "karma/evalstat.h"
#include "karma/pipeline.h"
#include "karma/ppo.h"
#include "karma/random.h"
#include "karma/records.h"
#include "karma/reward.h"
#include "karma/synth.h"
#include "karma/text.h"
#include "karma/vocab.h"

namespace karma::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (seed) cfg.apply_override("seed=" + std::to_string(*seed));
    for (const auto& o : overrides) cfg.apply_override(o);
    cfg.derive();
    cfg.validate();
    return cfg;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "Override a config key (section.key=value)");
  cmd->add_option("--seed", c.seed, "Global seed (overrides the config)");
}

// Every report carries the build and the resolved config.
json with_provenance(json body, const RunConfig& cfg) {
  json j;
  j["build"] = std::string(build_describe());
  j["config"] = cfg.to_json();
  for (auto& [k, v] : body.items()) j[k] = v;
  return j;
}

void write_json(const fs::path& path, const json& j) { write_text_file(path.string(), j.dump(2) + "\n"); }

void write_config(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  write_json(dir / "config.json", with_provenance(json::object(), cfg));
}

json stats_json(const FilterStats& s) {
  return {{"read", s.read},         {"malformed", s.malformed}, {"explicit", s.explicit_content},
          {"non_text", s.non_text}, {"non_english", s.non_english}, {"kept", s.kept}};
}

struct DataDir {
  std::vector<LabeledSequence> train;
  std::vector<LabeledSequence> test;
  Vocabulary vocab;
};

DataDir load_data(const fs::path& dir) {
  return {read_dataset_file((dir / "train.jsonl").string()),
          read_dataset_file((dir / "test.jsonl").string()),
          Vocabulary::load((dir / "vocab.txt").string())};
}

std::vector<ChatSequence> prompts_of(std::span<const LabeledSequence> data, std::size_t limit) {
  std::vector<ChatSequence> out;
  for (const auto& s : data) {
    if (out.size() >= limit) break;
    out.push_back(prompt_of(s.sequence));
  }
  return out;
}

PromptSource training_prompts(const RunConfig& cfg, const DataDir& data) {
  if (cfg.ppo.prompt_source == PromptKind::kBenign) {
    return benign_prompt_source(cfg.eval.train_prompts, cfg.synth.n_topics,
                                derive_seed(cfg.seed, "train-prompts"));
  }
  return {PromptKind::kReddit, prompts_of(data.train, cfg.eval.train_prompts)};
}

std::vector<ChatSequence> heldout_prompts(const RunConfig& cfg, const DataDir& data) {
  if (cfg.ppo.prompt_source == PromptKind::kBenign) {
    return generate_benign_prompts(cfg.eval.heldout_prompts, cfg.synth.n_topics,
                                   derive_seed(cfg.seed, "heldout-prompts"));
  }
  return prompts_of(data.test, cfg.eval.heldout_prompts);
}

std::vector<ChatSequence> pretrain_corpus(const RunConfig& cfg, const DataDir& data) {
  std::vector<ChatSequence> out;
  for (const auto& s : data.train) {
    if (out.size() >= cfg.eval.pretrain_sequences) break;
    out.push_back(s.sequence);
  }
  return out;
}

int run_ingest(const Common& c, const std::string& input, const std::string& kind,
               const std::string& output, std::ostream& err) {
  const RunConfig cfg = c.resolve();
  std::ifstream in(input, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + input + "'");
  std::ofstream out(output, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + output + "'");
  const FilterStats stats =
      ingest_stream(in, parse_record_kind(kind), cfg.ingest,
                    [&out](const RawRecord&, std::string_view line) { out << line << '\n'; });
  err << format_stats(stats, kind);
  write_json(output + ".stats.json", with_provenance({{"stats", stats_json(stats)}}, cfg));
  return kOk;
}

int run_synth(const Common& c, const std::string& out_dir, std::ostream& out) {
  const RunConfig cfg = c.resolve();
  const SyntheticDump dump = generate_synthetic_corpus(cfg.synth);
  fs::create_directories(out_dir);
  std::string posts, comments;
  for (const auto& r : dump.posts) posts += to_dump_line(r) + "\n";
  for (const auto& r : dump.comments) comments += to_dump_line(r) + "\n";
  write_text_file((fs::path(out_dir) / "posts.jsonl").string(), posts);
  write_text_file((fs::path(out_dir) / "comments.jsonl").string(), comments);
  write_config(out_dir, cfg);
  out << "wrote " << dump.posts.size() << " posts and " << dump.comments.size() << " comments to "
      << out_dir << "\n";
  return kOk;
}

int run_build(const Common& c, const std::string& posts, const std::string& comments,
              const std::string& out_dir, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = c.resolve();
  const CorpusBuild built = build_corpus_files(posts, comments, cfg.corpus, cfg.ingest, cfg.mode);
  err << format_stats(built.post_stats, "posts") << format_stats(built.comment_stats, "comments");
  if (built.instances.empty()) throw Error(ErrorCode::kEmptyCorpus, "build produced no instances");
  const auto split = split_dataset(built.instances, cfg.corpus, cfg.split_seed());
  const auto train = linearize_all(split.train, cfg.mode);
  const auto test = linearize_all(split.test, cfg.mode);
  const Vocabulary vocab = build_vocab(split.train, cfg.corpus, cfg.mode);

  const fs::path dir(out_dir);
  fs::create_directories(dir);
  write_dataset_file((dir / "train.jsonl").string(), train);
  write_dataset_file((dir / "test.jsonl").string(), test);
  vocab.save((dir / "vocab.txt").string());
  write_config(dir, cfg);
  const std::size_t n = built.instances.size();
  const json report = {{"instances", n},
                       {"positives", built.positives},
                       {"negatives", n - built.positives},
                       {"threads", built.threads},
                       {"orphans", built.orphans},
                       {"train", train.size()},
                       {"test", test.size()},
                       {"vocab_size", vocab.size()},
                       {"vocab_checksum", text::hex64(vocab.checksum())},
                       {"posts", stats_json(built.post_stats)},
                       {"comments", stats_json(built.comment_stats)}};
  write_json(dir / "build_report.json", with_provenance(report, cfg));
  out << "instances " << n << " (rewarding " << built.positives << ", orphans " << built.orphans
      << ") -> " << out_dir << "\n";
  return kOk;
}

int run_train_rm(const Common& c, const std::string& data_dir, const std::string& out_dir,
                 std::ostream& out) {
  const RunConfig cfg = c.resolve();
  const DataDir data = load_data(data_dir);
  const auto split = split_dataset(data.train, cfg.corpus.split_fraction, derive_seed(cfg.seed, "rm-valid"));
  const RMTrainResult res = rm_train(split.train, split.test, data.vocab, cfg.rm);
  const fs::path dir(out_dir);
  write_config(dir, cfg);
  res.model.save((dir / "rm.krma").string());
  std::string hist;
  for (const auto& e : res.history) {
    hist += json({{"epoch", e.epoch}, {"loss", e.loss}, {"val_auc", e.val_auc}}).dump() + "\n";
  }
  write_text_file((dir / "rm_history.jsonl").string(), hist);
  out << "trained reward model (" << res.history.size() << " epochs, best " << res.best_epoch
      << ", val auc " << res.history[res.best_epoch - 1].val_auc << ")\n";
  return kOk;
}

int run_eval_rm(const Common& c, const std::string& data_dir, const std::string& model,
                const std::string& output, std::ostream& out) {
  const RunConfig cfg = c.resolve();
  const DataDir data = load_data(data_dir);
  const RewardModel rm = RewardModel::load(model, data.vocab);
  const RMMetrics m = rm_evaluate(rm, data.test, data.vocab);
  const json report = with_provenance({{"metrics", json::parse(to_json(m).dump())}}, cfg);
  if (output.empty()) {
    out << report.dump(2) << "\n";
  } else {
    write_json(output, report);
    out << "accuracy " << m.accuracy << " f1 " << m.f1 << " auc "
        << (m.auc ? std::to_string(*m.auc) : "undefined") << "\n";
  }
  return kOk;
}

int run_train_ppo(const Common& c, const std::string& data_dir, const std::string& rm_path,
                  const std::string& out_dir, std::ostream& out) {
  const RunConfig cfg = c.resolve();
  const DataDir data = load_data(data_dir);
  const RewardModel rm = RewardModel::load(rm_path, data.vocab);
  const fs::path dir(out_dir);
  write_config(dir, cfg);
  const fs::path ref_path = dir / "ref.krma";
  PolicyModel ref = fs::exists(ref_path.string() + ".meta.json")
                        ? PolicyModel::load(ref_path.string(), data.vocab)
                        : pretrain_reference(pretrain_corpus(cfg, data), data.vocab, cfg.policy).model;
  ref.save(ref_path.string());
  const PromptSource source = training_prompts(cfg, data);
  const PPOResult res = train_ppo(ref, ref, rm, data.vocab, source, cfg.ppo, (dir / "ppo").string());
  res.policy.save((dir / "policy.krma").string());
  const auto& last = res.history.back();
  out << "ppo finished " << res.history.size() << " steps; final reward " << last.mean_rm_reward
      << ", kl " << last.mean_kl_to_ref << "\n";
  return kOk;
}

int run_eval_policy(const Common& c, const std::string& data_dir, const std::string& rm_path,
                    const std::string& policy_path, const std::string& ref_path,
                    const std::string& output, std::ostream& out) {
  const RunConfig cfg = c.resolve();
  const DataDir data = load_data(data_dir);
  const RewardModel rm = RewardModel::load(rm_path, data.vocab);
  const PolicyModel policy = PolicyModel::load(policy_path, data.vocab);
  const PolicyModel ref = PolicyModel::load(ref_path, data.vocab);
  const auto prompts = heldout_prompts(cfg, data);
  const PolicyEval trained = eval_policy(policy, ref, rm, data.vocab, prompts, cfg.eval_seed());
  const PolicyEval base = eval_policy(ref, ref, rm, data.vocab, prompts, cfg.eval_seed());
  std::vector<std::pair<double, double>> pairs;
  for (std::size_t i = 0; i < prompts.size(); ++i) pairs.emplace_back(trained.rewards[i], base.rewards[i]);
  json test;
  try {
    test = json::parse(to_json(wilcoxon_signed_rank(pairs, cfg.eval.alpha)).dump());
  } catch (const Error& e) {
    test = {{"error", std::string(to_string(e.code()))}};
  }
  const json report = with_provenance({{"trained", json::parse(to_json(trained).dump())},
                                       {"reference", json::parse(to_json(base).dump())},
                                       {"wilcoxon", test}},
                                      cfg);
  if (output.empty()) {
    out << report.dump(2) << "\n";
  } else {
    write_json(output, report);
    out << "trained reward " << trained.mean_rm_reward << " vs reference " << base.mean_rm_reward << "\n";
  }
  return kOk;
}

int run_shortcut(const Common& c, std::optional<double> rho, std::optional<std::size_t> n_seeds,
                 bool scrub, const std::string& output, std::ostream& out) {
  const RunConfig cfg = c.resolve();
  ShortcutOptions opts;
  opts.rho_train = rho.value_or(cfg.eval.shortcut_rho);
  const std::size_t k = n_seeds.value_or(cfg.eval.shortcut_seeds);
  opts.seeds.clear();
  for (std::size_t i = 0; i < k; ++i) opts.seeds.push_back(derive_seed(derive_seed(cfg.seed, "shortcut"), i));
  opts.rm = cfg.rm;
  opts.synth = cfg.synth;
  opts.corpus = cfg.corpus;
  opts.transfer_posts = cfg.eval.transfer_posts;
  opts.scrub_meta = scrub;
  const ShortcutReport rep = shortcut_experiment(opts);
  const json report = with_provenance({{"shortcut", json::parse(to_json(rep).dump())}}, cfg);
  write_json(output, report);
  out << "seed  in:gen  in:cond  xfer:gen  xfer:cond\n";
  for (const auto& s : rep.seeds) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-5zu %.4f  %.4f   %.4f    %.4f\n",
                  static_cast<std::size_t>(&s - rep.seeds.data()), s.in_domain_generalized,
                  s.in_domain_conditioned, s.transfer_generalized, s.transfer_conditioned);
    out << line;
  }
  out << "in-domain delta (cond - gen) " << rep.in_domain_delta << "; transfer reversals "
      << rep.transfer_reversals << "/" << rep.seeds.size() << "\n";
  return kOk;
}

std::vector<std::pair<double, double>> read_pairs(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<std::pair<double, double>> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    for (char& ch : line) {
      if (ch == ',' || ch == '\t') ch = ' ';
    }
    if (text::trim(line).empty() || text::trim(line).front() == '#') continue;
    std::istringstream fields(line);
    double a = 0, b = 0;
    std::string extra;
    if (!(fields >> a >> b) || (fields >> extra)) {
      throw Error(ErrorCode::kMalformed, path + ":" + std::to_string(lineno) + ": expected two numbers");
    }
    pairs.emplace_back(a, b);
  }
  return pairs;
}

int run_wilcoxon(const Common& c, const std::string& input, std::optional<double> alpha,
                 std::ostream& out) {
  const RunConfig cfg = c.resolve();
  const auto pairs = read_pairs(input);
  const WilcoxonResult r = wilcoxon_signed_rank(pairs, alpha.value_or(cfg.eval.alpha));
  out << json::parse(to_json(r).dump()).dump(2) << "\n";
  return kOk;
}

int exit_code_for(const Error& e) {
  if (is_numeric(e.code())) return kNumericAbort;
  if (e.code() == ErrorCode::kInvalidConfig) return kUsage;
  return kDataError;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"karma: relative-karma reward modeling and PPO at desk scale", "karma"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", std::string(build_describe()));

  Common common;
  std::string input, kind = "comment", output, posts, comments, data_dir, model, rm_path,
                     policy_path, ref_path;
  std::optional<double> rho, alpha;
  std::optional<std::size_t> n_seeds;
  bool scrub = false;

  auto* ingest = app.add_subcommand("ingest", "Filter one newline-delimited dump file");
  add_common(ingest, common);
  ingest->add_option("--input", input, "Dump file")->required()->check(CLI::ExistingFile);
  ingest->add_option("--kind", kind, "post or comment")->check(CLI::IsMember({"post", "comment"}));
  ingest->add_option("--output", output, "Kept lines")->required();

  auto* synth = app.add_subcommand("synth", "Write a synthetic post/comment dump");
  add_common(synth, common);
  synth->add_option("--output-dir", output, "Destination directory")->required();

  auto* build = app.add_subcommand("build", "Build labeled train/test datasets and a vocabulary");
  add_common(build, common);
  build->add_option("--posts", posts, "Post dump")->required()->check(CLI::ExistingFile);
  build->add_option("--comments", comments, "Comment dump")->required()->check(CLI::ExistingFile);
  build->add_option("--output-dir", output, "Destination directory")->required();

  auto* train_rm = app.add_subcommand("train-rm", "Train the reward model");
  add_common(train_rm, common);
  train_rm->add_option("--data", data_dir, "Directory written by build")->required()->check(CLI::ExistingDirectory);
  train_rm->add_option("--output-dir", output, "Destination directory")->required();

  auto* eval_rm = app.add_subcommand("eval-rm", "Evaluate a reward model on the test split");
  add_common(eval_rm, common);
  eval_rm->add_option("--data", data_dir, "Directory written by build")->required()->check(CLI::ExistingDirectory);
  eval_rm->add_option("--model", model, "Reward checkpoint")->required();
  eval_rm->add_option("--output", output, "Report file (default: stdout)");

  auto* train_ppo_cmd = app.add_subcommand("train-ppo", "Pretrain a reference policy and run PPO");
  add_common(train_ppo_cmd, common);
  train_ppo_cmd->add_option("--data", data_dir, "Directory written by build")->required()->check(CLI::ExistingDirectory);
  train_ppo_cmd->add_option("--rm", rm_path, "Reward checkpoint")->required();
  train_ppo_cmd->add_option("--output-dir", output, "Run directory (resumed if present)")->required();

  auto* eval_policy_cmd = app.add_subcommand("eval-policy", "Compare a tuned policy with its reference");
  add_common(eval_policy_cmd, common);
  eval_policy_cmd->add_option("--data", data_dir, "Directory written by build")->required()->check(CLI::ExistingDirectory);
  eval_policy_cmd->add_option("--rm", rm_path, "Reward checkpoint")->required();
  eval_policy_cmd->add_option("--policy", policy_path, "Tuned policy checkpoint")->required();
  eval_policy_cmd->add_option("--ref", ref_path, "Reference policy checkpoint")->required();
  eval_policy_cmd->add_option("--output", output, "Report file (default: stdout)");

  auto* shortcut = app.add_subcommand("shortcut-diag", "Generalized vs conditioned reward models");
  add_common(shortcut, common);
  shortcut->add_option("--rho", rho, "Subreddit/label correlation of the in-domain corpus");
  shortcut->add_option("--seeds", n_seeds, "Number of seeds (>= 5)");
  shortcut->add_flag("--scrub-meta", scrub, "Blank the metadata turn for the conditioned arm");
  shortcut->add_option("--output", output, "Report file")->required();

  auto* wilcoxon = app.add_subcommand("stats-wilcoxon", "Paired signed-rank test on 'a b' lines");
  add_common(wilcoxon, common);
  wilcoxon->add_option("--input", input, "Pairs file")->required()->check(CLI::ExistingFile);
  wilcoxon->add_option("--alpha", alpha, "Significance level");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*ingest) return run_ingest(common, input, kind, output, err);
    if (*synth) return run_synth(common, output, out);
    if (*build) return run_build(common, posts, comments, output, out, err);
    if (*train_rm) return run_train_rm(common, data_dir, output, out);
    if (*eval_rm) return run_eval_rm(common, data_dir, model, output, out);
    if (*train_ppo_cmd) return run_train_ppo(common, data_dir, rm_path, output, out);
    if (*eval_policy_cmd) {
      return run_eval_policy(common, data_dir, rm_path, policy_path, ref_path, output, out);
    }
    if (*shortcut) return run_shortcut(common, rho, n_seeds, scrub, output, out);
    if (*wilcoxon) return run_wilcoxon(common, input, alpha, out);
  } catch (const Error& e) {
    const std::string stage = app.get_subcommands().front()->get_name();
    err << "karma " << stage << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    const std::string stage = app.get_subcommands().front()->get_name();
    err << "karma " << stage << ": " << e.what() << "\n";
    return kDataError;
  }
  return kUsage;
}

}  // namespace karma::cli
