#include "karma/policy.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "karma/checkpoint.h"
#include "karma/error.h"
#include "karma/optim.h"
#include "karma/random.h"

namespace karma {
namespace {

void check_ids(std::span<const int> ids, std::size_t vocab_size, const char* what) {
  for (const int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw Error(ErrorCode::kOutOfVocabulary,
                  std::string(what) + " token id " + std::to_string(id) + " outside vocabulary of " +
                      std::to_string(vocab_size));
    }
  }
}

}  // namespace

void PolicyConfig::validate() const {
  if (context_window == 0) throw Error(ErrorCode::kInvalidConfig, "context_window must be >= 1");
  if (max_response_len == 0) throw Error(ErrorCode::kInvalidConfig, "max_response_len must be >= 1");
  if (embed_dim == 0 || hidden_dim == 0) {
    throw Error(ErrorCode::kInvalidConfig, "policy dimensions must be positive");
  }
  if (!(temperature >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "temperature must be >= 0");
  if (pretrain_batch_size == 0) {
    throw Error(ErrorCode::kInvalidConfig, "pretrain_batch_size must be positive");
  }
}

nlohmann::json to_json(const PolicyConfig& c) {
  return {{"context_window", c.context_window},
          {"embed_dim", c.embed_dim},
          {"hidden_dim", c.hidden_dim},
          {"max_response_len", c.max_response_len},
          {"temperature", c.temperature},
          {"seed", c.seed},
          {"pretrain_lr", c.pretrain_lr},
          {"pretrain_weight_decay", c.pretrain_weight_decay},
          {"pretrain_epochs", c.pretrain_epochs},
          {"pretrain_batch_size", c.pretrain_batch_size}};
}

PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  PolicyConfig c;
  c.context_window = j.at("context_window").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.max_response_len = j.at("max_response_len").get<std::size_t>();
  c.temperature = j.at("temperature").get<double>();
  c.seed = j.at("seed").get<uint64_t>();
  c.pretrain_lr = j.at("pretrain_lr").get<double>();
  c.pretrain_weight_decay = j.at("pretrain_weight_decay").get<double>();
  c.pretrain_epochs = j.at("pretrain_epochs").get<std::size_t>();
  c.pretrain_batch_size = j.at("pretrain_batch_size").get<std::size_t>();
  return c;
}

std::vector<int> encode_prompt(const ChatSequence& prompt, const Vocabulary& vocab) {
  std::vector<int> out;
  for (const auto& turn : prompt.turns) {
    if (turn.role == Role::kCandidate) {
      throw Error(ErrorCode::kMalformed, "policy prompts must not contain a candidate turn");
    }
    out.push_back(Vocabulary::role_marker(turn.role));
    for (const int id : vocab.encode(turn.text)) out.push_back(id);
  }
  out.push_back(Vocabulary::kCandidateMarker);
  return out;
}

PolicyModel::PolicyModel(const Vocabulary& vocab, const PolicyConfig& cfg)
    : cfg_(cfg), vocab_size_(vocab.size()), vocab_checksum_(vocab.checksum()) {
  cfg_.validate();
  const int v = static_cast<int>(vocab_size_);
  const int d = static_cast<int>(cfg_.embed_dim);
  const int h = static_cast<int>(cfg_.hidden_dim);
  const int in = static_cast<int>(cfg_.context_window) * d;
  Rng rng(derive_seed(cfg_.seed, "policy-init"));
  Tensor emb = Tensor::zeros({v, d});
  for (auto& x : emb.values) x = static_cast<float>(0.1 * rng.normal());
  Tensor w1 = Tensor::zeros({in, h});
  const double lim = std::sqrt(6.0 / (in + h));
  for (auto& x : w1.values) x = static_cast<float>(lim * (2.0 * rng.uniform() - 1.0));
  params_.add("tok_emb", std::move(emb));
  params_.add("w1", std::move(w1));
  params_.add("b1", Tensor::zeros({h}));
  params_.add("w2", Tensor::zeros({h, v}));
  params_.add("b2", Tensor::zeros({v}));
}

std::vector<int> PolicyModel::window(std::span<const int> tokens, std::size_t pos) const {
  const std::size_t k = cfg_.context_window;
  std::vector<int> w(k, Vocabulary::kBos);
  for (std::size_t i = 0; i < k && i < pos; ++i) w[k - 1 - i] = tokens[pos - 1 - i];
  return w;
}

Var PolicyModel::logits(Graph& g, std::span<const int> windows, std::size_t n) {
  const int k = static_cast<int>(cfg_.context_window);
  const int d = static_cast<int>(cfg_.embed_dim);
  if (windows.size() != n * static_cast<std::size_t>(k)) {
    throw Error(ErrorCode::kShapeMismatch, "policy logits: " + std::to_string(windows.size()) +
                                               " window ids for " + std::to_string(n) + " rows");
  }
  const Var emb = g.embedding_gather(g.param(params_.at("tok_emb")), windows);
  const Var x = g.reshape(emb, {static_cast<int>(n), k * d});
  const Var h = g.tanh(g.add(g.matmul(x, g.param(params_.at("w1"))), g.param(params_.at("b1"))));
  return g.add(g.matmul(h, g.param(params_.at("w2"))), g.param(params_.at("b2")));
}

std::vector<float> PolicyModel::log_probs(std::span<const int> windows, std::size_t n) const {
  check_ids(windows, vocab_size_, "context");
  // Forward only; parameters are read, never written.
  Graph g;
  const Var z = const_cast<PolicyModel*>(this)->logits(g, windows, n);
  const Tensor& logits = g.value(z);
  const int v = static_cast<int>(vocab_size_);
  std::vector<float> out(logits.numel());
  for (std::size_t i = 0; i < n; ++i) {
    log_softmax_row(logits.values.data() + i * v, out.data() + i * v, v);
  }
  return out;
}

void PolicyModel::save(const std::string& path) const {
  CheckpointHeader h;
  h.kind = "policy";
  h.vocab_checksum = vocab_checksum_;
  h.config = to_json(cfg_);
  h.config["vocab_size"] = vocab_size_;
  save_checkpoint(params_, h, path);
}

PolicyModel PolicyModel::load(const std::string& path, const Vocabulary& vocab) {
  Checkpoint ck = load_checkpoint(path, vocab.checksum());
  if (ck.header.kind != "policy") {
    throw Error(ErrorCode::kIncompatibleCheckpoint, path + " is a " + ck.header.kind + " checkpoint");
  }
  PolicyConfig cfg;
  try {
    cfg = policy_config_from_json(ck.header.config);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, std::string("bad policy config: ") + e.what());
  }
  PolicyModel m(vocab, cfg);
  if (m.params_.size() != ck.store.size()) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, "parameter count mismatch in " + path);
  }
  for (auto& p : m.params_) {
    const Parameter& src = ck.store.at(p.name);
    if (src.value.dims != p.value.dims) {
      throw Error(ErrorCode::kIncompatibleCheckpoint,
                  "parameter " + p.name + " has shape " + src.value.shape_str() + ", expected " +
                      p.value.shape_str());
    }
    p.value = src.value;
  }
  return m;
}

std::vector<int> response_windows(const PolicyModel& p, std::span<const int> prompt,
                                  std::span<const int> response) {
  std::vector<int> full(prompt.begin(), prompt.end());
  full.insert(full.end(), response.begin(), response.end());
  std::vector<int> out;
  out.reserve(response.size() * p.config().context_window);
  for (std::size_t t = 0; t < response.size(); ++t) {
    const auto w = p.window(full, prompt.size() + t);
    out.insert(out.end(), w.begin(), w.end());
  }
  return out;
}

Sample sample(const PolicyModel& p, std::span<const int> prompt, const PolicyConfig& cfg,
              uint64_t seed) {
  check_ids(prompt, p.vocab_size(), "prompt");
  Rng rng(seed);
  std::vector<int> history(prompt.begin(), prompt.end());
  const int v = static_cast<int>(p.vocab_size());
  Sample out;
  std::vector<double> weights(static_cast<std::size_t>(v));
  for (std::size_t step = 0; step < cfg.max_response_len; ++step) {
    const auto w = p.window(history, history.size());
    const auto lp = p.log_probs(w, 1);
    int choice = 0;
    if (cfg.temperature == 0.0) {
      choice = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    } else {
      // softmax(logits / T) is proportional to exp(logp / T).
      const double inv_t = 1.0 / cfg.temperature;
      const float mx = *std::max_element(lp.begin(), lp.end());
      double total = 0.0;
      for (int j = 0; j < v; ++j) {
        weights[j] = std::exp((static_cast<double>(lp[j]) - mx) * inv_t);
        total += weights[j];
      }
      double u = rng.uniform() * total;
      choice = v - 1;
      for (int j = 0; j < v; ++j) {
        u -= weights[j];
        if (u < 0.0) {
          choice = j;
          break;
        }
      }
    }
    out.tokens.push_back(choice);
    out.logprobs.push_back(lp[static_cast<std::size_t>(choice)]);
    history.push_back(choice);
    if (choice == Vocabulary::kEos) break;
  }
  return out;
}

std::vector<float> logprob(const PolicyModel& p, std::span<const int> prompt,
                           std::span<const int> response) {
  check_ids(prompt, p.vocab_size(), "prompt");
  check_ids(response, p.vocab_size(), "response");
  if (response.empty()) return {};
  const auto windows = response_windows(p, prompt, response);
  const auto lp = p.log_probs(windows, response.size());
  const std::size_t v = p.vocab_size();
  std::vector<float> out(response.size());
  for (std::size_t t = 0; t < response.size(); ++t) out[t] = lp[t * v + response[t]];
  return out;
}

Var logprob(Graph& g, PolicyModel& p, std::span<const int> prompt, std::span<const int> response) {
  check_ids(prompt, p.vocab_size(), "prompt");
  check_ids(response, p.vocab_size(), "response");
  const auto windows = response_windows(p, prompt, response);
  return g.log_softmax_gather(p.logits(g, windows, response.size()), response);
}

std::vector<double> kl_per_token(const PolicyModel& p, const PolicyModel& q,
                                 std::span<const int> prompt, std::span<const int> response) {
  if (p.vocab_checksum() != q.vocab_checksum()) {
    throw Error(ErrorCode::kVocabMismatch, "policies use different vocabularies");
  }
  std::vector<double> out(response.size(), 0.0);
  if (response.empty()) return out;
  const auto windows = response_windows(p, prompt, response);
  const auto lp = p.log_probs(windows, response.size());
  const auto lq = q.log_probs(windows, response.size());
  const std::size_t v = p.vocab_size();
  for (std::size_t t = 0; t < response.size(); ++t) {
    double kl = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      const double a = lp[t * v + j];
      kl += std::exp(a) * (a - static_cast<double>(lq[t * v + j]));
    }
    out[t] = std::max(kl, 0.0);
  }
  return out;
}

PretrainResult pretrain_reference(std::span<const ChatSequence> corpus, const Vocabulary& vocab,
                                  const PolicyConfig& cfg) {
  cfg.validate();
  struct Example {
    std::vector<int> windows;
    std::vector<int> targets;
  };
  PolicyModel model(vocab, cfg);
  std::vector<Example> examples;
  for (const auto& seq : corpus) {
    if (!seq.has_candidate()) continue;
    const auto prompt = encode_prompt(prompt_of(seq), vocab);
    auto response = vocab.encode(seq.turns.back().text);
    response.push_back(Vocabulary::kEos);
    examples.push_back({response_windows(model, prompt, response), std::move(response)});
  }
  if (examples.empty()) {
    throw Error(ErrorCode::kEmptyCorpus, "no candidate responses to pretrain the reference policy on");
  }

  AdamWState opt = AdamWState::for_store(model.params());
  const AdamWConfig opt_cfg{cfg.pretrain_lr, cfg.pretrain_weight_decay};
  Rng rng(derive_seed(cfg.seed, "policy-pretrain"));
  std::vector<std::size_t> order(examples.size());
  PretrainResult result{model, {}};
  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.pretrain_batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.pretrain_batch_size);
      std::vector<int> windows;
      std::vector<int> targets;
      for (std::size_t i = start; i < end; ++i) {
        const Example& ex = examples[order[i]];
        windows.insert(windows.end(), ex.windows.begin(), ex.windows.end());
        targets.insert(targets.end(), ex.targets.begin(), ex.targets.end());
      }
      model.params().zero_grad();
      try {
        Graph g;
        const Var loss =
            g.cross_entropy_with_logits(model.logits(g, windows, targets.size()), targets);
        loss_sum += static_cast<double>(g.value(loss)[0]) * static_cast<double>(targets.size());
        tokens += targets.size();
        g.backward(loss);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        throw Error(ErrorCode::kAbortTraining,
                    "reference pretraining diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
      adamw_step(model.params(), opt, opt_cfg);
    }
    result.history.push_back({epoch, loss_sum / static_cast<double>(tokens)});
  }
  result.model = std::move(model);
  return result;
}

}  // namespace karma
