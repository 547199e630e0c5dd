#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "karma/ingest.h"

namespace karma {

// Exact non-negative rational, used for the relative-karma threshold so the
// labeling rule never goes through floating point.
struct Ratio {
  int64_t num = 2;
  int64_t den = 5;

  // Parses "0.4", "2/5" or "1" exactly.
  static Ratio parse(std::string_view s);
  std::string str() const;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

struct CorpusConfig {
  Ratio reward_threshold{2, 5};
  int64_t nonpositive_parent_min_score = 1;
  std::size_t sibling_count = 2;
  std::size_t min_tokens = 5;
  double split_fraction = 0.9;
  std::size_t vocab_cap = 8192;

  // Throws Error(kInvalidConfig) when an invariant is violated.
  void validate() const;
};

struct ThreadNode {
  RawRecord record;
  std::vector<std::string> children;  // ascending created_utc, ties by id
};

struct ThreadTree {
  RawRecord post;
  std::map<std::string, ThreadNode> nodes;
  std::vector<std::string> top_level;
};

struct ThreadBuildResult {
  std::vector<ThreadTree> trees;  // in post input order
  std::size_t orphan_count = 0;
};

// Groups comments under their posts. Comments whose ancestry does not reach
// a surviving post are orphans. Throws Error(kDuplicateId) on repeated ids.
ThreadBuildResult build_threads(std::span<const RawRecord> posts,
                                std::span<const RawRecord> comments);

// 1 when the target reaches the threshold fraction of its parent's score;
// nonpositive parents fall back to an absolute minimum score.
int label_instance(int64_t target_score, int64_t parent_score, const CorpusConfig& cfg);

enum class SerializationMode { kGeneralized, kConditioned };

std::string_view to_string(SerializationMode mode);
SerializationMode parse_mode(std::string_view s);

struct InstanceMeta {
  std::string subreddit;
  int64_t created_utc = 0;

  friend bool operator==(const InstanceMeta&, const InstanceMeta&) = default;
};

struct TrainingInstance {
  std::string instance_id;  // "<post id>/<comment id>"
  std::string post_text;
  std::vector<std::string> parent_chain;  // root comment down to the parent
  std::vector<std::string> siblings;
  std::string response;
  int label = 0;
  std::optional<InstanceMeta> meta;

  std::string post_id() const;
};

// Only trees with at least two substantive top-level comments produce
// instances. Subreddit, author names and raw timestamps appearing inside
// texts are replaced with a placeholder.
std::vector<TrainingInstance> extract_instances(const ThreadTree& tree, const CorpusConfig& cfg,
                                                SerializationMode mode);

enum class Role { kUser, kContext, kCandidate, kMeta };

std::string_view to_string(Role role);
Role parse_role(std::string_view s);

struct Turn {
  Role role = Role::kUser;
  std::string text;

  friend bool operator==(const Turn&, const Turn&) = default;
};

struct ChatSequence {
  std::vector<Turn> turns;

  bool has_meta() const { return !turns.empty() && turns.front().role == Role::kMeta; }
  bool has_candidate() const { return !turns.empty() && turns.back().role == Role::kCandidate; }

  friend bool operator==(const ChatSequence&, const ChatSequence&) = default;
};

std::string meta_turn_text(const InstanceMeta& meta);

ChatSequence linearize(const TrainingInstance& inst, SerializationMode mode);

// The sequence without its candidate turn.
ChatSequence prompt_of(const ChatSequence& seq);

ChatSequence with_candidate(const ChatSequence& prompt, std::string response);

struct LabeledSequence {
  std::string instance_id;
  ChatSequence sequence;
  int label = 0;
  std::optional<InstanceMeta> meta;

  std::string post_id() const;
};

std::vector<LabeledSequence> linearize_all(std::span<const TrainingInstance> instances,
                                           SerializationMode mode);

template <typename T>
struct Split {
  std::vector<T> train;
  std::vector<T> test;
};

// Splits by post id so every thread lands wholly on one side. Throws
// Error(kTooSmall) with fewer than two posts.
Split<TrainingInstance> split_dataset(std::span<const TrainingInstance> instances,
                                      const CorpusConfig& cfg, uint64_t seed);
Split<LabeledSequence> split_dataset(std::span<const LabeledSequence> instances,
                                     double fraction, uint64_t seed);

// The post ids that go to the train side, in the same order used by
// split_dataset.
std::vector<std::string> train_post_ids(std::vector<std::string> post_ids, double fraction,
                                        uint64_t seed);

}  // namespace karma
