#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "karma/corpus.h"

namespace karma {

// Word-level vocabulary. Ids 0..kNumSpecial-1 are the fixed special block;
// corpus tokens follow densely in frequency order.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kUserMarker = 4;
  static constexpr int kContextMarker = 5;
  static constexpr int kCandidateMarker = 6;
  static constexpr int kMetaMarker = 7;
  static constexpr int kNumSpecial = 8;

  Vocabulary();
  explicit Vocabulary(std::vector<std::string> corpus_tokens);

  static int role_marker(Role role);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const;
  int id(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;

  std::vector<int> encode(std::string_view text) const;
  // Joins non-special tokens with single spaces.
  std::string decode(std::span<const int> ids) const;

  // FNV-1a over the full token list; identifies compatible checkpoints.
  uint64_t checksum() const;

  // One corpus token per line; the special block is implicit.
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  std::vector<std::string> corpus_tokens() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Lowercased whitespace-and-punctuation split; see text::word_tokens.
std::vector<std::string> tokenize(std::string_view text);

// Top `cap` tokens by frequency (ties lexicographic) over every turn of the
// given sequences. Throws Error(kEmptyCorpus) when no tokens are found.
Vocabulary build_vocab(std::span<const ChatSequence> sequences, std::size_t cap);
Vocabulary build_vocab(std::span<const LabeledSequence> sequences, std::size_t cap);
Vocabulary build_vocab(std::span<const TrainingInstance> train, const CorpusConfig& cfg,
                       SerializationMode mode);

}  // namespace karma
