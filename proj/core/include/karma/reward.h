#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "karma/corpus.h"
#include "karma/tensor.h"
#include "karma/vocab.h"

namespace karma {

struct RMConfig {
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  SerializationMode mode = SerializationMode::kGeneralized;
  // Desk default. Large encoders are usually trained around 2e-5; this
  // small model from scratch needs a much larger step.
  double lr = 3e-3;
  double weight_decay = 0.01;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 20;
  std::size_t patience = 3;
  uint64_t seed = 1;

  void validate() const;
};

nlohmann::json to_json(const RMConfig& cfg);
RMConfig rm_config_from_json(const nlohmann::json& j);

// Token ids with a parallel role index (user, context, candidate, meta) per
// position. Each turn contributes its role marker followed by its words.
struct EncodedSequence {
  std::vector<int> tokens;
  std::vector<int> roles;
};

EncodedSequence encode_sequence(const ChatSequence& seq, const Vocabulary& vocab);

// Mean-pooled token+role embeddings feeding a tanh MLP with a scalar logit.
class RewardModel {
 public:
  // Small random initialization drawn from cfg.seed.
  RewardModel(const Vocabulary& vocab, const RMConfig& cfg);

  // Every parameter zero: the model scores everything 0.5.
  static RewardModel zeros(const Vocabulary& vocab, const RMConfig& cfg);

  const RMConfig& config() const { return cfg_; }
  SerializationMode mode() const { return cfg_.mode; }
  std::size_t vocab_size() const { return vocab_size_; }
  uint64_t vocab_checksum() const { return vocab_checksum_; }

  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // Logits for a batch, built on `g`; returns a [n,1] node.
  Var logits(Graph& g, std::span<const EncodedSequence* const> batch);

  // Probability that the candidate is rewarding. Throws Error(kModeMismatch)
  // when the sequence's metadata turn disagrees with the model mode and
  // Error(kVocabMismatch) for a foreign vocabulary.
  double score(const ChatSequence& seq, const Vocabulary& vocab) const;
  double score_encoded(const EncodedSequence& enc) const;

  void save(const std::string& path) const;
  // Throws Error(kIncompatibleCheckpoint) unless the checkpoint was written
  // for `vocab`.
  static RewardModel load(const std::string& path, const Vocabulary& vocab);

 private:
  RewardModel(std::size_t vocab_size, uint64_t checksum, const RMConfig& cfg);

  RMConfig cfg_;
  std::size_t vocab_size_ = 0;
  uint64_t vocab_checksum_ = 0;
  ParameterStore params_;
};

double rm_forward(const RewardModel& m, const ChatSequence& seq, const Vocabulary& vocab);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double val_auc = 0.0;
};

struct RMTrainResult {
  RewardModel model;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
};

// AdamW on mean BCE over seeded shuffled mini-batches with early stopping on
// validation AUC; returns the best-validation checkpoint. Throws
// Error(kDegenerateLabels) for a single-class set and Error(kAbortTraining)
// on a non-finite loss.
RMTrainResult rm_train(std::span<const LabeledSequence> train,
                       std::span<const LabeledSequence> valid, const Vocabulary& vocab,
                       const RMConfig& cfg);

// Mann-Whitney AUC with midranks for tied scores. Throws
// Error(kAucUndefined) unless both classes are present.
double compute_auc(std::span<const double> scores, std::span<const int> labels);

struct RMMetrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;  // empty when the test set has one class
  std::size_t n = 0;
  double class_balance = 0.0;  // fraction of rewarding labels
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

nlohmann::json to_json(const RMMetrics& m);

RMMetrics metrics_from_scores(std::span<const double> scores, std::span<const int> labels);

RMMetrics rm_evaluate(const RewardModel& m, std::span<const LabeledSequence> test,
                      const Vocabulary& vocab);

}  // namespace karma
