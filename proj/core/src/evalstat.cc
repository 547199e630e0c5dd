#include "karma/evalstat.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "karma/error.h"
#include "karma/pipeline.h"
#include "karma/random.h"

namespace karma {

std::string_view to_string(WilcoxonMethod m) {
  return m == WilcoxonMethod::kExact ? "exact" : "normal_approximation";
}

nlohmann::json to_json(const WilcoxonResult& r) {
  return {{"n_effective", r.n_effective}, {"w", r.w},         {"p_value", r.p_value},
          {"method", to_string(r.method)}, {"alpha", r.alpha}, {"significant", r.significant()}};
}

WilcoxonResult wilcoxon_signed_rank(std::span<const std::pair<double, double>> pairs, double alpha) {
  std::vector<double> d;
  for (const auto& [a, b] : pairs) {
    const double x = a - b;
    if (!std::isfinite(x)) throw Error(ErrorCode::kNonFinite, "non-finite paired difference");
    if (x != 0.0) d.push_back(x);
  }
  if (d.empty()) throw Error(ErrorCode::kDegenerate, "all paired differences are zero");
  if (d.size() < 5) {
    throw Error(ErrorCode::kTooFewPairs,
                "need at least 5 nonzero differences, got " + std::to_string(d.size()));
  }
  const std::size_t n = d.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });

  // Doubled midranks are integers, which keeps the exact count integral.
  std::vector<int> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::abs(d[idx[j]]) == std::abs(d[idx[i]])) ++j;
    const int r2 = static_cast<int>(i + 1 + j);  // 2 * midrank of positions i+1..j
    for (std::size_t k = i; k < j; ++k) rank2[idx[k]] = r2;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }

  WilcoxonResult res;
  res.alpha = alpha;
  res.n_effective = n;
  int w2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0) w2 += rank2[i];
  }
  res.w = 0.5 * w2;

  const double nn = static_cast<double>(n);
  if (n <= kWilcoxonExactMax) {
    res.method = WilcoxonMethod::kExact;
    // counts[s] = number of sign patterns whose positive doubled ranks sum to s.
    const int total2 = std::accumulate(rank2.begin(), rank2.end(), 0);
    std::vector<double> counts(static_cast<std::size_t>(total2) + 1, 0.0);
    counts[0] = 1.0;
    int reach = 0;
    for (const int r : rank2) {
      for (int s = reach; s >= 0; --s) {
        if (counts[s] != 0.0) counts[s + r] += counts[s];
      }
      reach += r;
    }
    double lower = 0.0, upper = 0.0;
    for (int s = 0; s <= total2; ++s) {
      if (s <= w2) lower += counts[s];
      if (s >= w2) upper += counts[s];
    }
    const double patterns = std::ldexp(1.0, static_cast<int>(n));
    res.p_value = std::min(1.0, 2.0 * std::min(lower, upper) / patterns);
  } else {
    res.method = WilcoxonMethod::kNormalApproximation;
    const double mean = nn * (nn + 1.0) / 4.0;
    const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
    const double z = std::max(0.0, std::abs(res.w - mean) - 0.5) / std::sqrt(var);
    res.p_value = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
  }
  return res;
}

nlohmann::json to_json(const PolicyEval& e) {
  return {{"mean_rm_reward", e.mean_rm_reward},
          {"mean_kl", e.mean_kl},
          {"distinct_2", e.distinct_2},
          {"n", e.rewards.size()}};
}

double distinct_2(std::span<const std::vector<int>> responses) {
  std::set<std::pair<int, int>> unique;
  std::size_t total = 0;
  for (const auto& r : responses) {
    std::size_t len = r.size();
    if (len > 0 && r.back() == Vocabulary::kEos) --len;
    for (std::size_t i = 0; i + 1 < len; ++i) {
      unique.emplace(r[i], r[i + 1]);
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

PolicyEval eval_policy(const PolicyModel& policy, const PolicyModel& ref, const RewardModel& rm,
                       const Vocabulary& vocab, std::span<const ChatSequence> prompts,
                       uint64_t seed) {
  if (prompts.empty()) throw Error(ErrorCode::kEmptyCorpus, "no held-out prompts to evaluate on");
  if (rm.vocab_checksum() != vocab.checksum() || policy.vocab_checksum() != vocab.checksum()) {
    throw Error(ErrorCode::kVocabMismatch, "evaluation components use different vocabularies");
  }
  PolicyEval out;
  std::vector<std::vector<int>> responses;
  double kl = 0.0;
  double tokens = 0.0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const auto prompt = encode_prompt(prompts[i], vocab);
    const Sample s = sample(policy, prompt, policy.config(), derive_seed(seed, i));
    for (const double x : kl_per_token(policy, ref, prompt, s.tokens)) kl += x;
    tokens += static_cast<double>(s.tokens.size());
    std::vector<int> words = s.tokens;
    if (!words.empty() && words.back() == Vocabulary::kEos) words.pop_back();
    out.rewards.push_back(rm.score(with_candidate(prompts[i], vocab.decode(words)), vocab));
    responses.push_back(s.tokens);
  }
  out.mean_rm_reward =
      std::accumulate(out.rewards.begin(), out.rewards.end(), 0.0) / static_cast<double>(prompts.size());
  out.mean_kl = kl / tokens;
  out.distinct_2 = distinct_2(responses);
  return out;
}

nlohmann::json to_json(const ShortcutReport& r) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto& s : r.seeds) {
    seeds.push_back({{"seed", s.seed},
                     {"in_domain", {{"auc_generalized", s.in_domain_generalized},
                                    {"auc_conditioned", s.in_domain_conditioned}}},
                     {"transfer", {{"auc_generalized", s.transfer_generalized},
                                   {"auc_conditioned", s.transfer_conditioned}}},
                     {"in_domain_delta", s.in_domain_conditioned - s.in_domain_generalized},
                     {"transfer_delta", s.transfer_generalized - s.transfer_conditioned},
                     {"train_instances", s.train_instances},
                     {"test_instances", s.test_instances},
                     {"transfer_instances", s.transfer_instances}});
  }
  return {{"rho_train", r.rho_train},
          {"in_domain", {{"auc_generalized", r.in_domain_generalized},
                         {"auc_conditioned", r.in_domain_conditioned}}},
          {"transfer", {{"auc_generalized", r.transfer_generalized},
                        {"auc_conditioned", r.transfer_conditioned}}},
          {"deltas", {{"in_domain_conditioned_minus_generalized", r.in_domain_delta},
                      {"transfer_generalized_minus_conditioned", r.transfer_delta},
                      {"transfer_reversals", r.transfer_reversals}}},
          {"seeds", seeds}};
}

namespace {

std::vector<LabeledSequence> sequences(std::span<const TrainingInstance> data,
                                       SerializationMode mode, bool scrub_meta) {
  auto out = linearize_all(data, mode);
  if (scrub_meta && mode == SerializationMode::kConditioned) {
    // Same turn structure, no information.
    for (auto& s : out) s.sequence.turns.front().text = "subreddit=[community] ts=[time]";
  }
  return out;
}

double test_auc(const RewardModel& m, std::span<const LabeledSequence> test, const Vocabulary& vocab) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : test) {
    scores.push_back(m.score(s.sequence, vocab));
    labels.push_back(s.label);
  }
  return compute_auc(scores, labels);
}

}  // namespace

ShortcutReport shortcut_experiment(const ShortcutOptions& opts) {
  if (opts.seeds.size() < 5) {
    throw Error(ErrorCode::kInvalidConfig, "the shortcut experiment needs at least 5 seeds");
  }
  if (!(opts.rho_train >= 0.0 && opts.rho_train <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "rho_train must be in [0, 1]");
  }
  ShortcutReport rep;
  rep.rho_train = opts.rho_train;
  for (const uint64_t seed : opts.seeds) {
    SynthConfig in_cfg = opts.synth;
    in_cfg.rho = opts.rho_train;
    in_cfg.seed = derive_seed(seed, "shortcut-in-domain");
    SynthConfig tr_cfg = opts.synth;
    tr_cfg.rho = 0.0;
    tr_cfg.seed = derive_seed(seed, "shortcut-transfer");
    if (opts.transfer_posts > 0) tr_cfg.n_posts = opts.transfer_posts;

    const auto in_domain =
        build_synthetic_corpus(in_cfg, opts.corpus, SerializationMode::kConditioned).instances;
    const auto transfer =
        build_synthetic_corpus(tr_cfg, opts.corpus, SerializationMode::kConditioned).instances;
    const auto outer = split_dataset(in_domain, opts.corpus, derive_seed(seed, "shortcut-split"));
    const auto inner = split_dataset(outer.train, opts.corpus, derive_seed(seed, "shortcut-valid"));

    ShortcutSeedRecord rec;
    rec.seed = seed;
    rec.train_instances = inner.train.size();
    rec.test_instances = outer.test.size();
    rec.transfer_instances = transfer.size();
    for (const auto mode : {SerializationMode::kGeneralized, SerializationMode::kConditioned}) {
      const auto train = sequences(inner.train, mode, opts.scrub_meta);
      const auto valid = sequences(inner.test, mode, opts.scrub_meta);
      const auto test = sequences(outer.test, mode, opts.scrub_meta);
      const auto xfer = sequences(transfer, mode, opts.scrub_meta);
      const Vocabulary vocab = build_vocab(std::span<const LabeledSequence>(train), opts.corpus.vocab_cap);
      RMConfig rm_cfg = opts.rm;
      rm_cfg.mode = mode;
      rm_cfg.seed = derive_seed(seed, "shortcut-rm");
      const RMTrainResult trained = rm_train(train, valid, vocab, rm_cfg);
      const double a_in = test_auc(trained.model, test, vocab);
      const double a_tr = test_auc(trained.model, xfer, vocab);
      if (mode == SerializationMode::kGeneralized) {
        rec.in_domain_generalized = a_in;
        rec.transfer_generalized = a_tr;
      } else {
        rec.in_domain_conditioned = a_in;
        rec.transfer_conditioned = a_tr;
      }
    }
    rep.seeds.push_back(rec);
  }
  const double k = static_cast<double>(rep.seeds.size());
  for (const auto& s : rep.seeds) {
    rep.in_domain_generalized += s.in_domain_generalized / k;
    rep.in_domain_conditioned += s.in_domain_conditioned / k;
    rep.transfer_generalized += s.transfer_generalized / k;
    rep.transfer_conditioned += s.transfer_conditioned / k;
    if (s.transfer_generalized >= s.transfer_conditioned) ++rep.transfer_reversals;
  }
  rep.in_domain_delta = rep.in_domain_conditioned - rep.in_domain_generalized;
  rep.transfer_delta = rep.transfer_generalized - rep.transfer_conditioned;
  return rep;
}

}  // namespace karma
