#include "karma/synth.h"

#include <cmath>
#include <cstdio>
#include <map>
#include <mutex>
#include <set>

#include "karma/error.h"
#include "karma/random.h"

namespace karma {

namespace {

constexpr std::size_t kWordsPerTopic = 12;
constexpr int64_t kEpoch = 1672531200;  // 2023-01-01T00:00:00Z
constexpr int64_t kWindowSeconds = 14 * 24 * 3600;
constexpr std::size_t kAuthorPool = 500;

const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> kFiller = {"the", "and", "it", "is",   "of",  "to",
                                                   "that", "was", "this", "with", "for", "on"};
  return kFiller;
}

std::string make_word(Rng& rng) {
  static constexpr std::string_view kConsonants = "bdfgklmnprstvz";
  static constexpr std::string_view kVowels = "aeiou";
  std::string w;
  for (int s = 0; s < 3; ++s) {
    w += kConsonants[rng.below(kConsonants.size())];
    w += kVowels[rng.below(kVowels.size())];
  }
  return w;
}

// Topic lexicons are generated once from a fixed stream so every corpus,
// whatever its seed, shares the same words.
const std::vector<std::string>& topic_words(std::size_t topic) {
  static std::mutex mu;
  static std::map<std::size_t, std::vector<std::string>> cache;
  static std::set<std::string> used;
  static Rng rng(0x6b61726d61ull);
  std::lock_guard lock(mu);
  while (cache.size() <= topic) {
    std::vector<std::string> words;
    while (words.size() < kWordsPerTopic) {
      std::string w = make_word(rng);
      if (used.insert(w).second) words.push_back(std::move(w));
    }
    cache.emplace(cache.size(), std::move(words));
  }
  return cache.at(topic);
}

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& v) {
  return v[rng.below(v.size())];
}

std::vector<std::string> distinct_fillers(Rng& rng, std::size_t n) {
  std::vector<std::string> pool = filler_words();
  rng.shuffle(pool);
  pool.resize(n);
  return pool;
}

std::string join_shuffled(Rng& rng, std::vector<std::string> words) {
  rng.shuffle(words);
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::string topic_title(Rng& rng, std::size_t topic) {
  std::vector<std::string> words;
  for (int i = 0; i < 3; ++i) words.push_back(pick(rng, topic_words(topic)));
  std::string title = join_shuffled(rng, std::move(words));
  title += '?';
  return title;
}

std::string topic_body(Rng& rng, std::size_t topic) {
  std::vector<std::string> words;
  for (int i = 0; i < 6; ++i) words.push_back(pick(rng, topic_words(topic)));
  for (auto& f : distinct_fillers(rng, 3)) words.push_back(std::move(f));
  return join_shuffled(rng, std::move(words));
}

std::string id_string(char prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%07zx", prefix, n);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_topics == 0) throw Error(ErrorCode::kInvalidConfig, "n_topics must be positive");
  if (!(rho >= 0.0 && rho <= 1.0)) throw Error(ErrorCode::kInvalidConfig, "rho must be in [0, 1]");
  if (!(noise >= 0.0 && noise <= 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "noise must be in [0, 1]");
  }
  if (n_subreddits < 2 || n_subreddits % 2 != 0) {
    throw Error(ErrorCode::kInvalidConfig, "n_subreddits must be even and at least 2");
  }
  if (reward_threshold.den <= 0 || reward_threshold.num <= 0) {
    throw Error(ErrorCode::kInvalidConfig, "reward_threshold must be positive");
  }
}

const std::vector<std::string>& synth_topic_words(std::size_t topic) { return topic_words(topic); }

const std::vector<std::string>& synth_good_style_words() {
  static const std::vector<std::string> kGood = {"thanks",  "agreed",  "great",
                                                 "helpful", "exactly", "insightful"};
  return kGood;
}

const std::vector<std::string>& synth_bad_style_words() {
  static const std::vector<std::string> kBad = {"whatever", "meh",   "nope",
                                                "boring",   "wrong", "ugh"};
  return kBad;
}

std::string synth_subreddit_name(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "sub_%02zu", index);
  return buf;
}

SyntheticDump generate_synthetic_corpus(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "synth-corpus"));
  const std::size_t half = cfg.n_subreddits / 2;
  const auto threshold = [&cfg](int64_t parent_score) -> int64_t {
    if (parent_score <= 0) return 1;
    const int64_t num = cfg.reward_threshold.num * parent_score;
    return (num + cfg.reward_threshold.den - 1) / cfg.reward_threshold.den;
  };

  SyntheticDump dump;
  dump.posts.reserve(cfg.n_posts);
  dump.comments.reserve(cfg.n_posts * cfg.replies_per_post);
  std::size_t comment_counter = 0;

  for (std::size_t p = 0; p < cfg.n_posts; ++p) {
    const std::size_t topic = rng.below(cfg.n_topics);
    const int z = rng.bernoulli(0.5) ? 1 : -1;
    std::size_t sub;
    if (rng.bernoulli(cfg.rho)) {
      sub = 2 * rng.below(half) + (z > 0 ? 0 : 1);
    } else {
      sub = rng.below(cfg.n_subreddits);
    }

    RawRecord post;
    post.kind = RecordKind::kPost;
    post.id = id_string('p', p);
    post.link_id = post.id;
    post.subreddit = synth_subreddit_name(sub);
    post.author = id_string('u', rng.below(kAuthorPool));
    post.created_utc = kEpoch + static_cast<int64_t>(rng.below(kWindowSeconds));
    post.title = topic_title(rng, topic);
    post.body = topic_body(rng, topic);
    post.text = post_text(post.title, post.body);
    post.score = rng.between(20, 400);

    const std::size_t first = dump.comments.size();
    int64_t t = post.created_utc;
    for (std::size_t r = 0; r < cfg.replies_per_post; ++r) {
      const bool top = r < 2 || rng.bernoulli(0.6);
      const std::size_t parent_index = top ? 0 : first + rng.below(r);

      int m = z, s = z;
      if (rng.bernoulli(cfg.noise)) {
        m = rng.bernoulli(0.5) ? 1 : -1;
        s = rng.bernoulli(0.5) ? 1 : -1;
      }
      const double u = cfg.community_weight * z + cfg.topic_weight * m + cfg.style_weight * s +
                       cfg.noise * rng.normal();

      std::size_t reply_topic = topic;
      if (m < 0 && cfg.n_topics > 1) {
        reply_topic = (topic + 1 + rng.below(cfg.n_topics - 1)) % cfg.n_topics;
      }
      std::vector<std::string> words;
      for (int i = 0; i < 5; ++i) words.push_back(pick(rng, topic_words(reply_topic)));
      if (m < 0 && cfg.n_topics == 1) words.resize(2);
      for (auto& f : distinct_fillers(rng, 3)) words.push_back(std::move(f));
      const auto& style = s > 0 ? synth_good_style_words() : synth_bad_style_words();
      for (int i = 0; i < 2; ++i) words.push_back(pick(rng, style));

      const int64_t parent_score = top ? post.score : dump.comments[parent_index].score;
      const int64_t unit = std::max<int64_t>(1, std::abs(parent_score) / 8);
      const auto offset = static_cast<int64_t>(std::floor(static_cast<double>(unit) * u));

      RawRecord c;
      c.kind = RecordKind::kComment;
      c.id = id_string('c', comment_counter++);
      c.parent_id = top ? post.id : dump.comments[parent_index].id;
      c.link_id = post.id;
      c.subreddit = post.subreddit;
      c.author = id_string('u', rng.below(kAuthorPool));
      t += rng.between(30, 900);
      c.created_utc = t;
      c.body = join_shuffled(rng, std::move(words));
      c.text = c.body;
      c.score = threshold(parent_score) + offset;
      dump.comments.push_back(std::move(c));
    }
    dump.posts.push_back(std::move(post));
  }
  return dump;
}

std::vector<ChatSequence> generate_benign_prompts(std::size_t n, std::size_t n_topics,
                                                  uint64_t seed) {
  if (n_topics == 0) throw Error(ErrorCode::kInvalidConfig, "n_topics must be positive");
  Rng rng(derive_seed(seed, "benign-prompts"));
  std::vector<ChatSequence> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t topic = rng.below(n_topics);
    const std::string title = topic_title(rng, topic);
    const std::string body = topic_body(rng, topic);
    ChatSequence seq;
    seq.turns.push_back({Role::kUser, post_text(title, body)});
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace karma
