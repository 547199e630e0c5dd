#include "karma/corpus.h"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "karma/error.h"
#include "karma/random.h"
#include "karma/text.h"

namespace karma {

Ratio Ratio::parse(std::string_view s) {
  const auto fail = [&s]() {
    return Error(ErrorCode::kInvalidConfig, "cannot parse ratio '" + std::string(s) + "'");
  };
  s = text::trim(s);
  Ratio r{0, 1};
  if (const auto slash = s.find('/'); slash != std::string_view::npos) {
    const auto a = text::trim(s.substr(0, slash));
    const auto b = text::trim(s.substr(slash + 1));
    if (a.empty() || b.empty()) throw fail();
    r.num = 0;
    r.den = 0;
    for (const char c : a) {
      if (!std::isdigit(static_cast<unsigned char>(c))) throw fail();
      r.num = r.num * 10 + (c - '0');
    }
    for (const char c : b) {
      if (!std::isdigit(static_cast<unsigned char>(c))) throw fail();
      r.den = r.den * 10 + (c - '0');
    }
    if (r.den == 0) throw fail();
  } else {
    bool seen_dot = false;
    int digits = 0;
    for (const char c : s) {
      if (c == '.') {
        if (seen_dot) throw fail();
        seen_dot = true;
        continue;
      }
      if (!std::isdigit(static_cast<unsigned char>(c)) || ++digits > 15) throw fail();
      r.num = r.num * 10 + (c - '0');
      if (seen_dot) r.den *= 10;
    }
    if (digits == 0) throw fail();
  }
  const int64_t g = std::gcd(r.num, r.den);
  if (g > 1) {
    r.num /= g;
    r.den /= g;
  }
  return r;
}

std::string Ratio::str() const { return std::to_string(num) + "/" + std::to_string(den); }

void CorpusConfig::validate() const {
  if (reward_threshold.den <= 0 || reward_threshold.num <= 0 ||
      reward_threshold.num > reward_threshold.den) {
    throw Error(ErrorCode::kInvalidConfig, "reward_threshold must be in (0, 1]");
  }
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "split_fraction must be in (0, 1)");
  }
  if (vocab_cap == 0) throw Error(ErrorCode::kInvalidConfig, "vocab_cap must be positive");
}

namespace {

bool created_before(const RawRecord& a, const RawRecord& b) {
  if (a.created_utc != b.created_utc) return a.created_utc < b.created_utc;
  return a.id < b.id;
}

}  // namespace

ThreadBuildResult build_threads(std::span<const RawRecord> posts,
                                std::span<const RawRecord> comments) {
  std::unordered_set<std::string> seen;
  seen.reserve(posts.size() + comments.size());
  std::unordered_map<std::string, std::size_t> post_index;
  for (std::size_t i = 0; i < posts.size(); ++i) {
    if (!seen.insert(posts[i].id).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate id '" + posts[i].id + "'");
    }
    post_index.emplace(posts[i].id, i);
  }
  std::unordered_map<std::string, std::size_t> comment_index;
  for (std::size_t i = 0; i < comments.size(); ++i) {
    if (!seen.insert(comments[i].id).second) {
      throw Error(ErrorCode::kDuplicateId, "duplicate id '" + comments[i].id + "'");
    }
    comment_index.emplace(comments[i].id, i);
  }

  // Resolution state per comment: index of the owning post, or -1 for
  // orphans. Iterative walk with an explicit path so deep chains and cycles
  // are handled without recursion.
  constexpr long kUnknown = -2;
  constexpr long kOrphan = -1;
  constexpr long kVisiting = -3;
  std::vector<long> owner(comments.size(), kUnknown);
  std::vector<std::size_t> path;
  for (std::size_t start = 0; start < comments.size(); ++start) {
    if (owner[start] != kUnknown) continue;
    path.clear();
    std::size_t cur = start;
    long result = kOrphan;
    while (true) {
      if (owner[cur] == kVisiting) {
        result = kOrphan;  // cycle
        break;
      }
      if (owner[cur] != kUnknown) {
        result = owner[cur];
        break;
      }
      owner[cur] = kVisiting;
      path.push_back(cur);
      const auto& c = comments[cur];
      const std::string& parent = c.parent_id.value_or("");
      if (const auto p = post_index.find(parent); p != post_index.end()) {
        result = static_cast<long>(p->second);
        break;
      }
      const auto q = comment_index.find(parent);
      if (q == comment_index.end()) {
        result = kOrphan;
        break;
      }
      cur = q->second;
    }
    // Unwind: each node on the path belongs to `result` only if its own
    // link_id names that post.
    for (auto it = path.rbegin(); it != path.rend(); ++it) {
      const auto& c = comments[*it];
      if (result >= 0 && c.link_id != posts[static_cast<std::size_t>(result)].id) {
        result = kOrphan;
      }
      owner[*it] = result;
    }
  }

  ThreadBuildResult out;
  std::vector<std::vector<std::size_t>> members(posts.size());
  for (std::size_t i = 0; i < comments.size(); ++i) {
    if (owner[i] < 0) {
      ++out.orphan_count;
    } else {
      members[static_cast<std::size_t>(owner[i])].push_back(i);
    }
  }

  for (std::size_t p = 0; p < posts.size(); ++p) {
    if (members[p].empty()) continue;
    ThreadTree tree;
    tree.post = posts[p];
    for (const std::size_t i : members[p]) {
      tree.nodes.emplace(comments[i].id, ThreadNode{comments[i], {}});
    }
    for (const std::size_t i : members[p]) {
      const auto& c = comments[i];
      const std::string& parent = *c.parent_id;
      if (parent == tree.post.id) {
        tree.top_level.push_back(c.id);
      } else {
        tree.nodes.at(parent).children.push_back(c.id);
      }
    }
    const auto by_time = [&tree](const std::string& a, const std::string& b) {
      return created_before(tree.nodes.at(a).record, tree.nodes.at(b).record);
    };
    std::sort(tree.top_level.begin(), tree.top_level.end(), by_time);
    for (auto& [id, node] : tree.nodes) {
      std::sort(node.children.begin(), node.children.end(), by_time);
    }
    out.trees.push_back(std::move(tree));
  }
  return out;
}

int label_instance(int64_t target_score, int64_t parent_score, const CorpusConfig& cfg) {
  if (parent_score > 0) {
    const auto lhs = static_cast<__int128>(target_score) * cfg.reward_threshold.den;
    const auto rhs = static_cast<__int128>(cfg.reward_threshold.num) * parent_score;
    return lhs >= rhs ? 1 : 0;
  }
  return target_score >= cfg.nonpositive_parent_min_score ? 1 : 0;
}

std::string_view to_string(SerializationMode mode) {
  return mode == SerializationMode::kGeneralized ? "generalized" : "conditioned";
}

SerializationMode parse_mode(std::string_view s) {
  if (s == "generalized") return SerializationMode::kGeneralized;
  if (s == "conditioned") return SerializationMode::kConditioned;
  throw Error(ErrorCode::kInvalidConfig, "unknown serialization mode '" + std::string(s) + "'");
}

std::string TrainingInstance::post_id() const {
  return instance_id.substr(0, instance_id.find('/'));
}

std::string LabeledSequence::post_id() const {
  return instance_id.substr(0, instance_id.find('/'));
}

namespace {

constexpr std::size_t kMinScrubLength = 3;

// Per-tree scrubber for identifying strings that must not leak into texts.
class Scrubber {
 public:
  explicit Scrubber(const ThreadTree& tree) {
    add(tree.post.subreddit, "[community]");
    add(tree.post.author, "[user]");
    add(std::to_string(tree.post.created_utc), "[time]");
    for (const auto& [id, node] : tree.nodes) {
      add(node.record.author, "[user]");
      add(std::to_string(node.record.created_utc), "[time]");
    }
  }

  std::string operator()(std::string_view s) const {
    std::string out(s);
    for (const auto& [term, placeholder] : terms_) {
      if (text::contains_case_insensitive(out, term)) {
        out = text::replace_case_insensitive(out, term, placeholder);
      }
    }
    return out;
  }

 private:
  void add(const std::string& term, std::string placeholder) {
    if (term.size() < kMinScrubLength || term == "[deleted]") return;
    for (const auto& t : terms_) {
      if (t.first == term) return;
    }
    terms_.emplace_back(term, std::move(placeholder));
  }

  std::vector<std::pair<std::string, std::string>> terms_;
};

bool score_rank_before(const RawRecord& a, const RawRecord& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.id < b.id;
}

}  // namespace

std::vector<TrainingInstance> extract_instances(const ThreadTree& tree, const CorpusConfig& cfg,
                                                SerializationMode mode) {
  std::vector<TrainingInstance> out;
  std::size_t substantive = 0;
  for (const auto& id : tree.top_level) {
    if (text::whitespace_tokens(tree.nodes.at(id).record.text).size() >= cfg.min_tokens) {
      ++substantive;
    }
  }
  if (substantive < 2) return out;

  const Scrubber scrub(tree);
  std::unordered_map<std::string, std::string> clean;
  clean.reserve(tree.nodes.size());
  for (const auto& [id, node] : tree.nodes) clean.emplace(id, scrub(node.record.text));
  const std::string post_text = scrub(tree.post.text);

  // Pre-order walk: top-level comments in time order, each followed by its
  // subtree.
  std::vector<std::string> stack(tree.top_level.rbegin(), tree.top_level.rend());
  while (!stack.empty()) {
    const std::string id = std::move(stack.back());
    stack.pop_back();
    const ThreadNode& node = tree.nodes.at(id);
    for (auto it = node.children.rbegin(); it != node.children.rend(); ++it) stack.push_back(*it);

    const RawRecord& rec = node.record;
    const bool top = *rec.parent_id == tree.post.id;

    TrainingInstance inst;
    inst.instance_id = tree.post.id + "/" + rec.id;
    inst.post_text = post_text;
    inst.response = clean.at(id);

    for (std::string cur = *rec.parent_id; cur != tree.post.id;) {
      inst.parent_chain.push_back(clean.at(cur));
      cur = *tree.nodes.at(cur).record.parent_id;
    }
    std::reverse(inst.parent_chain.begin(), inst.parent_chain.end());

    const auto& peers = top ? tree.top_level : tree.nodes.at(*rec.parent_id).children;
    std::vector<const RawRecord*> others;
    for (const auto& pid : peers) {
      if (pid != id) others.push_back(&tree.nodes.at(pid).record);
    }
    std::sort(others.begin(), others.end(),
              [](const RawRecord* a, const RawRecord* b) { return score_rank_before(*a, *b); });
    for (std::size_t k = 0; k < others.size() && k < cfg.sibling_count; ++k) {
      inst.siblings.push_back(clean.at(others[k]->id));
    }

    const int64_t parent_score = top ? tree.post.score : tree.nodes.at(*rec.parent_id).record.score;
    inst.label = label_instance(rec.score, parent_score, cfg);
    if (mode == SerializationMode::kConditioned) {
      inst.meta = InstanceMeta{tree.post.subreddit, rec.created_utc};
    }
    out.push_back(std::move(inst));
  }
  return out;
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kUser: return "user";
    case Role::kContext: return "context";
    case Role::kCandidate: return "candidate";
    case Role::kMeta: return "meta";
  }
  return "unknown";
}

Role parse_role(std::string_view s) {
  if (s == "user") return Role::kUser;
  if (s == "context") return Role::kContext;
  if (s == "candidate") return Role::kCandidate;
  if (s == "meta") return Role::kMeta;
  throw Error(ErrorCode::kMalformed, "unknown role '" + std::string(s) + "'");
}

std::string meta_turn_text(const InstanceMeta& meta) {
  return "subreddit=" + meta.subreddit + " ts=" + text::iso_minute_utc(meta.created_utc);
}

ChatSequence linearize(const TrainingInstance& inst, SerializationMode mode) {
  ChatSequence seq;
  seq.turns.reserve(3 + inst.parent_chain.size() + inst.siblings.size());
  if (mode == SerializationMode::kConditioned) {
    if (!inst.meta) {
      throw Error(ErrorCode::kMissingMetadata,
                  "instance '" + inst.instance_id + "' has no metadata for conditioned mode");
    }
    seq.turns.push_back({Role::kMeta, meta_turn_text(*inst.meta)});
  }
  seq.turns.push_back({Role::kUser, inst.post_text});
  for (const auto& t : inst.parent_chain) seq.turns.push_back({Role::kContext, t});
  for (const auto& t : inst.siblings) seq.turns.push_back({Role::kContext, t});
  seq.turns.push_back({Role::kCandidate, inst.response});
  return seq;
}

ChatSequence prompt_of(const ChatSequence& seq) {
  ChatSequence out = seq;
  if (out.has_candidate()) out.turns.pop_back();
  return out;
}

ChatSequence with_candidate(const ChatSequence& prompt, std::string response) {
  ChatSequence out = prompt_of(prompt);
  out.turns.push_back({Role::kCandidate, std::move(response)});
  return out;
}

std::vector<LabeledSequence> linearize_all(std::span<const TrainingInstance> instances,
                                           SerializationMode mode) {
  std::vector<LabeledSequence> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) {
    // Generalized records must not carry metadata anywhere, including the
    // side field.
    auto meta = mode == SerializationMode::kConditioned ? inst.meta : std::nullopt;
    out.push_back({inst.instance_id, linearize(inst, mode), inst.label, std::move(meta)});
  }
  return out;
}

std::vector<std::string> train_post_ids(std::vector<std::string> post_ids, double fraction,
                                        uint64_t seed) {
  std::sort(post_ids.begin(), post_ids.end());
  post_ids.erase(std::unique(post_ids.begin(), post_ids.end()), post_ids.end());
  const std::size_t n = post_ids.size();
  if (n < 2) {
    throw Error(ErrorCode::kTooSmall,
                "need at least 2 posts to split, got " + std::to_string(n));
  }
  Rng rng(seed);
  rng.shuffle(post_ids);
  auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  post_ids.resize(n_train);
  return post_ids;
}

namespace {

template <typename T>
Split<T> split_by_post(std::span<const T> items, double fraction, uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(items.size());
  for (const auto& it : items) ids.push_back(it.post_id());
  const auto train_ids = train_post_ids(std::move(ids), fraction, seed);
  const std::set<std::string> train_set(train_ids.begin(), train_ids.end());
  Split<T> out;
  for (const auto& it : items) {
    (train_set.count(it.post_id()) ? out.train : out.test).push_back(it);
  }
  return out;
}

}  // namespace

Split<TrainingInstance> split_dataset(std::span<const TrainingInstance> instances,
                                      const CorpusConfig& cfg, uint64_t seed) {
  return split_by_post(instances, cfg.split_fraction, seed);
}

Split<LabeledSequence> split_dataset(std::span<const LabeledSequence> instances, double fraction,
                                     uint64_t seed) {
  return split_by_post(instances, fraction, seed);
}

}  // namespace karma
