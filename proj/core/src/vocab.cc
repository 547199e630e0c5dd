#include "karma/vocab.h"

#include <algorithm>
#include <fstream>

#include "karma/error.h"
#include "karma/text.h"

namespace karma {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> kSpecial = {
      "<pad>", "<unk>", "<bos>", "<eos>", "<user>", "<context>", "<candidate>", "<meta>"};
  return kSpecial;
}

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> corpus_tokens) {
  tokens_ = special_tokens();
  tokens_.reserve(tokens_.size() + corpus_tokens.size());
  for (auto& t : corpus_tokens) tokens_.push_back(std::move(t));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw Error(ErrorCode::kMalformed, "duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

int Vocabulary::role_marker(Role role) {
  switch (role) {
    case Role::kUser: return kUserMarker;
    case Role::kContext: return kContextMarker;
    case Role::kCandidate: return kCandidateMarker;
    case Role::kMeta: return kMetaMarker;
  }
  return kUnk;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error(ErrorCode::kOutOfVocabulary, "token id " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(id(tok));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (const int i : ids) {
    if (i < kNumSpecial) continue;
    if (!out.empty()) out += ' ';
    out += token(i);
  }
  return out;
}

uint64_t Vocabulary::checksum() const {
  uint64_t h = text::fnv1a64("");
  for (const auto& t : tokens_) {
    h = text::fnv1a64(t, h);
    h = text::fnv1a64("\n", h);
  }
  return h;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  for (std::size_t i = kNumSpecial; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path + "'");
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    tokens.push_back(line);
  }
  if (in.bad()) throw Error(ErrorCode::kIo, "read failed for '" + path + "'");
  return Vocabulary(std::move(tokens));
}

std::vector<std::string> Vocabulary::corpus_tokens() const {
  return {tokens_.begin() + kNumSpecial, tokens_.end()};
}

std::vector<std::string> tokenize(std::string_view s) { return text::word_tokens(s); }

Vocabulary build_vocab(std::span<const ChatSequence> sequences, std::size_t cap) {
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& seq : sequences) {
    for (const auto& turn : seq.turns) {
      for (auto& tok : tokenize(turn.text)) ++counts[std::move(tok)];
    }
  }
  if (counts.empty()) throw Error(ErrorCode::kEmptyCorpus, "no tokens to build a vocabulary from");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > cap) ranked.resize(cap);
  std::vector<std::string> tokens;
  tokens.reserve(ranked.size());
  for (auto& [tok, n] : ranked) tokens.push_back(std::move(tok));
  return Vocabulary(std::move(tokens));
}

Vocabulary build_vocab(std::span<const LabeledSequence> sequences, std::size_t cap) {
  std::vector<ChatSequence> seqs;
  seqs.reserve(sequences.size());
  for (const auto& s : sequences) seqs.push_back(s.sequence);
  return build_vocab(seqs, cap);
}

Vocabulary build_vocab(std::span<const TrainingInstance> train, const CorpusConfig& cfg,
                       SerializationMode mode) {
  std::vector<ChatSequence> seqs;
  seqs.reserve(train.size());
  for (const auto& inst : train) seqs.push_back(linearize(inst, mode));
  return build_vocab(seqs, cfg.vocab_cap);
}

}  // namespace karma
