#include "karma/reward.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "karma/checkpoint.h"
#include "karma/error.h"
#include "karma/optim.h"
#include "karma/random.h"

namespace karma {
namespace {

constexpr int kNumRoles = 4;

Tensor random_normal(std::vector<int> dims, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(dims));
  for (auto& v : t.values) v = static_cast<float>(stddev * rng.normal());
  return t;
}

Tensor random_uniform(std::vector<int> dims, double limit, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(dims));
  for (auto& v : t.values) v = static_cast<float>(limit * (2.0 * rng.uniform() - 1.0));
  return t;
}

void check_mode(const ChatSequence& seq, SerializationMode mode) {
  const bool conditioned = mode == SerializationMode::kConditioned;
  if (seq.has_meta() != conditioned) {
    throw Error(ErrorCode::kModeMismatch,
                std::string(seq.has_meta() ? "metadata turn" : "no metadata turn") +
                    " for a " + std::string(to_string(mode)) + " reward model");
  }
}

double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

void check_labels(std::span<const LabeledSequence> data, const char* what) {
  std::size_t pos = 0;
  for (const auto& s : data) pos += s.label == 1 ? 1 : 0;
  if (pos == 0 || pos == data.size()) {
    throw Error(ErrorCode::kDegenerateLabels,
                std::string(what) + " set has a single class (" + std::to_string(pos) + " of " +
                    std::to_string(data.size()) + " rewarding)");
  }
}

}  // namespace

void RMConfig::validate() const {
  if (embed_dim == 0 || hidden_dim == 0) {
    throw Error(ErrorCode::kInvalidConfig, "reward model dimensions must be positive");
  }
  if (batch_size == 0) throw Error(ErrorCode::kInvalidConfig, "rm batch_size must be positive");
  if (!(lr >= 0.0) || !(weight_decay >= 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "rm lr and weight_decay must be non-negative");
  }
}

nlohmann::json to_json(const RMConfig& c) {
  return {{"embed_dim", c.embed_dim},   {"hidden_dim", c.hidden_dim},
          {"mode", to_string(c.mode)},  {"lr", c.lr},
          {"weight_decay", c.weight_decay}, {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs}, {"patience", c.patience},
          {"seed", c.seed}};
}

RMConfig rm_config_from_json(const nlohmann::json& j) {
  RMConfig c;
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.mode = parse_mode(j.at("mode").get<std::string>());
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

EncodedSequence encode_sequence(const ChatSequence& seq, const Vocabulary& vocab) {
  EncodedSequence out;
  for (const auto& turn : seq.turns) {
    const int role = static_cast<int>(turn.role);
    out.tokens.push_back(Vocabulary::role_marker(turn.role));
    out.roles.push_back(role);
    for (const int id : vocab.encode(turn.text)) {
      out.tokens.push_back(id);
      out.roles.push_back(role);
    }
  }
  return out;
}

RewardModel::RewardModel(std::size_t vocab_size, uint64_t checksum, const RMConfig& cfg)
    : cfg_(cfg), vocab_size_(vocab_size), vocab_checksum_(checksum) {
  cfg_.validate();
}

RewardModel::RewardModel(const Vocabulary& vocab, const RMConfig& cfg)
    : RewardModel(vocab.size(), vocab.checksum(), cfg) {
  const int v = static_cast<int>(vocab_size_);
  const int d = static_cast<int>(cfg_.embed_dim);
  const int h = static_cast<int>(cfg_.hidden_dim);
  Rng rng(derive_seed(cfg_.seed, "rm-init"));
  params_.add("tok_emb", random_normal({v, d}, 0.1, rng));
  params_.add("role_emb", random_normal({kNumRoles, d}, 0.1, rng));
  params_.add("w1", random_uniform({d, h}, std::sqrt(6.0 / (d + h)), rng));
  params_.add("b1", Tensor::zeros({h}));
  params_.add("w2", random_uniform({h, 1}, std::sqrt(6.0 / (h + 1)), rng));
  params_.add("b2", Tensor::zeros({1}));
}

RewardModel RewardModel::zeros(const Vocabulary& vocab, const RMConfig& cfg) {
  RewardModel m(vocab, cfg);
  for (auto& p : m.params_) std::fill(p.value.values.begin(), p.value.values.end(), 0.0f);
  return m;
}

Var RewardModel::logits(Graph& g, std::span<const EncodedSequence* const> batch) {
  const Var tok = g.param(params_.at("tok_emb"));
  const Var role = g.param(params_.at("role_emb"));
  std::vector<Var> pooled;
  pooled.reserve(batch.size());
  for (const EncodedSequence* s : batch) {
    const Var e = g.add(g.embedding_gather(tok, s->tokens), g.embedding_gather(role, s->roles));
    pooled.push_back(g.mean_pool(e, 0));
  }
  const Var x = g.concat(pooled, 0);
  const Var h = g.tanh(g.add(g.matmul(x, g.param(params_.at("w1"))), g.param(params_.at("b1"))));
  return g.add(g.matmul(h, g.param(params_.at("w2"))), g.param(params_.at("b2")));
}

double RewardModel::score_encoded(const EncodedSequence& enc) const {
  if (enc.tokens.empty()) throw Error(ErrorCode::kShapeMismatch, "cannot score an empty sequence");
  for (const int id : enc.tokens) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size_) {
      throw Error(ErrorCode::kOutOfVocabulary, "token id " + std::to_string(id) + " outside vocabulary");
    }
  }
  // Scoring builds a throwaway graph; parameters are read, never written.
  Graph g;
  const EncodedSequence* one[] = {&enc};
  const Var z = const_cast<RewardModel*>(this)->logits(g, one);
  return sigmoid(g.value(z)[0]);
}

double RewardModel::score(const ChatSequence& seq, const Vocabulary& vocab) const {
  if (vocab.checksum() != vocab_checksum_) {
    throw Error(ErrorCode::kVocabMismatch, "reward model was trained with another vocabulary");
  }
  check_mode(seq, cfg_.mode);
  return score_encoded(encode_sequence(seq, vocab));
}

double rm_forward(const RewardModel& m, const ChatSequence& seq, const Vocabulary& vocab) {
  return m.score(seq, vocab);
}

void RewardModel::save(const std::string& path) const {
  CheckpointHeader h;
  h.kind = "reward";
  h.mode = std::string(to_string(cfg_.mode));
  h.vocab_checksum = vocab_checksum_;
  h.config = to_json(cfg_);
  h.config["vocab_size"] = vocab_size_;
  save_checkpoint(params_, h, path);
}

RewardModel RewardModel::load(const std::string& path, const Vocabulary& vocab) {
  Checkpoint ck = load_checkpoint(path, vocab.checksum());
  if (ck.header.kind != "reward") {
    throw Error(ErrorCode::kIncompatibleCheckpoint, path + " is a " + ck.header.kind + " checkpoint");
  }
  RMConfig cfg;
  try {
    cfg = rm_config_from_json(ck.header.config);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, std::string("bad reward config: ") + e.what());
  }
  RewardModel m(vocab, cfg);
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

RMTrainResult rm_train(std::span<const LabeledSequence> train,
                       std::span<const LabeledSequence> valid, const Vocabulary& vocab,
                       const RMConfig& cfg) {
  cfg.validate();
  if (train.empty() || valid.empty()) {
    throw Error(ErrorCode::kTooSmall, "reward model training needs non-empty train and validation sets");
  }
  check_labels(train, "training");
  check_labels(valid, "validation");
  std::vector<EncodedSequence> enc_train;
  std::vector<float> labels;
  enc_train.reserve(train.size());
  for (const auto& s : train) {
    check_mode(s.sequence, cfg.mode);
    enc_train.push_back(encode_sequence(s.sequence, vocab));
    labels.push_back(static_cast<float>(s.label));
  }
  std::vector<EncodedSequence> enc_valid;
  std::vector<int> valid_labels;
  for (const auto& s : valid) {
    check_mode(s.sequence, cfg.mode);
    enc_valid.push_back(encode_sequence(s.sequence, vocab));
    valid_labels.push_back(s.label);
  }

  RewardModel model(vocab, cfg);
  AdamWState opt = AdamWState::for_store(model.params());
  const AdamWConfig opt_cfg{cfg.lr, cfg.weight_decay};
  Rng rng(derive_seed(cfg.seed, "rm-shuffle"));

  RMTrainResult result{model, {}, 0};
  double best_auc = -1.0;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(train.size());
  std::vector<double> val_scores(enc_valid.size());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const EncodedSequence*> batch;
      std::vector<float> y;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(&enc_train[order[i]]);
        y.push_back(labels[order[i]]);
      }
      model.params().zero_grad();
      try {
        Graph g;
        const Var loss = g.bce_with_logits(model.logits(g, batch), y);
        loss_sum += static_cast<double>(g.value(loss)[0]) * static_cast<double>(end - start);
        g.backward(loss);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        throw Error(ErrorCode::kAbortTraining,
                    "reward training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
      }
      adamw_step(model.params(), opt, opt_cfg);
    }
    for (std::size_t i = 0; i < enc_valid.size(); ++i) val_scores[i] = model.score_encoded(enc_valid[i]);
    const double auc = compute_auc(val_scores, valid_labels);
    result.history.push_back({epoch, loss_sum / static_cast<double>(order.size()), auc});
    if (auc > best_auc) {
      best_auc = auc;
      result.best_epoch = epoch;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return result;
}

double compute_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, "compute_auc: " + std::to_string(scores.size()) +
                                               " scores vs " + std::to_string(labels.size()) + " labels");
  }
  std::size_t n_pos = 0;
  for (const int l : labels) n_pos += l == 1 ? 1 : 0;
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw Error(ErrorCode::kAucUndefined, "AUC needs both classes, got " + std::to_string(n_pos) +
                                              " positive of " + std::to_string(labels.size()));
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (1-based) midranks of the positives; every quantity is a
  // half-integer, so the sum is exact in double.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) rank_sum += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

RMMetrics metrics_from_scores(std::span<const double> scores, std::span<const int> labels) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw Error(ErrorCode::kTooSmall, "metrics need a non-empty scored test set");
  }
  RMMetrics m;
  m.n = scores.size();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= 0.5;
    const bool truth = labels[i] == 1;
    if (pred && truth) ++m.tp;
    if (pred && !truth) ++m.fp;
    if (!pred && !truth) ++m.tn;
    if (!pred && truth) ++m.fn;
  }
  const double n = static_cast<double>(m.n);
  m.accuracy = static_cast<double>(m.tp + m.tn) / n;
  const std::size_t denom = 2 * m.tp + m.fp + m.fn;
  m.f1 = denom == 0 ? 0.0 : 2.0 * static_cast<double>(m.tp) / static_cast<double>(denom);
  m.class_balance = static_cast<double>(m.tp + m.fn) / n;
  if (m.tp + m.fn > 0 && m.tn + m.fp > 0) m.auc = compute_auc(scores, labels);
  return m;
}

nlohmann::json to_json(const RMMetrics& m) {
  nlohmann::json j = {{"accuracy", m.accuracy},
                      {"f1", m.f1},
                      {"auc", m.auc ? nlohmann::json(*m.auc) : nlohmann::json(nullptr)},
                      {"n", m.n},
                      {"class_balance", m.class_balance},
                      {"confusion", {{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}}}};
  if (!m.auc) j["auc_error"] = std::string(to_string(ErrorCode::kAucUndefined));
  return j;
}

RMMetrics rm_evaluate(const RewardModel& m, std::span<const LabeledSequence> test,
                      const Vocabulary& vocab) {
  std::vector<double> scores;
  std::vector<int> labels;
  scores.reserve(test.size());
  for (const auto& s : test) {
    scores.push_back(m.score(s.sequence, vocab));
    labels.push_back(s.label);
  }
  return metrics_from_scores(scores, labels);
}

}  // namespace karma
