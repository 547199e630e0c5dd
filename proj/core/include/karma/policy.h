#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "karma/corpus.h"
#include "karma/tensor.h"
#include "karma/vocab.h"

namespace karma {

struct PolicyConfig {
  std::size_t context_window = 8;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 256;
  std::size_t max_response_len = 32;
  double temperature = 1.0;
  uint64_t seed = 1;

  // Maximum-likelihood pretraining of the reference policy.
  double pretrain_lr = 3e-3;
  double pretrain_weight_decay = 0.0;
  std::size_t pretrain_epochs = 3;
  std::size_t pretrain_batch_size = 16;

  void validate() const;
};

nlohmann::json to_json(const PolicyConfig& cfg);
PolicyConfig policy_config_from_json(const nlohmann::json& j);

// Role markers and words of every turn, ending with the candidate marker
// that opens the response.
std::vector<int> encode_prompt(const ChatSequence& prompt, const Vocabulary& vocab);

// Feed-forward next-token model over the previous k tokens (BOS-padded).
// The output layer starts at zero, so a fresh model is uniform.
class PolicyModel {
 public:
  PolicyModel(const Vocabulary& vocab, const PolicyConfig& cfg);

  const PolicyConfig& config() const { return cfg_; }
  std::size_t vocab_size() const { return vocab_size_; }
  uint64_t vocab_checksum() const { return vocab_checksum_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  // The k tokens preceding position `pos` of `tokens`, BOS-padded.
  std::vector<int> window(std::span<const int> tokens, std::size_t pos) const;

  // [n,V] logits for n stacked windows on graph `g`.
  Var logits(Graph& g, std::span<const int> windows, std::size_t n);

  // Log-probabilities over the vocabulary for each window, [n,V] row-major,
  // at temperature 1.
  std::vector<float> log_probs(std::span<const int> windows, std::size_t n) const;

  void save(const std::string& path) const;
  static PolicyModel load(const std::string& path, const Vocabulary& vocab);

 private:
  PolicyConfig cfg_;
  std::size_t vocab_size_ = 0;
  uint64_t vocab_checksum_ = 0;
  ParameterStore params_;
};

// Stacked context windows for every response position.
std::vector<int> response_windows(const PolicyModel& p, std::span<const int> prompt,
                                  std::span<const int> response);

struct Sample {
  std::vector<int> tokens;   // ends with EOS unless the length cap was hit
  std::vector<float> logprobs;  // temperature-1 log-probabilities
};

// Draws from softmax(logits / temperature) until EOS or max_response_len;
// temperature 0 is greedy decoding.
Sample sample(const PolicyModel& p, std::span<const int> prompt, const PolicyConfig& cfg,
              uint64_t seed);

// Exact per-token log-probabilities of `response` after `prompt`. Throws
// Error(kOutOfVocabulary) for ids outside the vocabulary.
std::vector<float> logprob(const PolicyModel& p, std::span<const int> prompt,
                           std::span<const int> response);

// Differentiable version: an [n] node of per-token log-probabilities.
Var logprob(Graph& g, PolicyModel& p, std::span<const int> prompt, std::span<const int> response);

// Exact KL(p || q) per response position, summed over the vocabulary.
std::vector<double> kl_per_token(const PolicyModel& p, const PolicyModel& q,
                                 std::span<const int> prompt, std::span<const int> response);

struct PretrainRecord {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean per-token cross-entropy
};

struct PretrainResult {
  PolicyModel model;
  std::vector<PretrainRecord> history;
};

// Next-token cross-entropy over the candidate turns of `corpus` (the
// response plus a closing EOS), conditioned on each sequence's prompt.
// Throws Error(kEmptyCorpus) when there is nothing to learn from.
PretrainResult pretrain_reference(std::span<const ChatSequence> corpus, const Vocabulary& vocab,
                                  const PolicyConfig& cfg);

}  // namespace karma
