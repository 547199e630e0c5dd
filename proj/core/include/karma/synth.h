#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "karma/corpus.h"
#include "karma/ingest.h"

namespace karma {

// Desk-scale stand-in for a Reddit dump.
//
// Every post has a latent topic and a latent community disposition z = +/-1
// (the majority label of its replies). A reply is on/off topic and carries
// a good/bad style marker. With probability 1 - noise both follow z;
// otherwise they are drawn independently. Reply utility is
//
//   u = community_weight * z + topic_weight * m + style_weight * s + noise * N(0, 1)
//
// and the integer score is placed so that the relative-karma rule labels the
// reply rewarding exactly when u >= 0. With probability rho the subreddit is
// drawn from the half of the subreddit pool reserved for z, otherwise from
// the whole pool, so rho controls how much the subreddit leaks the label.
struct SynthConfig {
  std::size_t n_posts = 1000;
  std::size_t replies_per_post = 10;
  std::size_t n_topics = 8;
  double rho = 0.0;
  double noise = 0.5;
  uint64_t seed = 1;

  double topic_weight = 1.0;
  double style_weight = 1.0;
  double community_weight = 1.5;
  std::size_t n_subreddits = 8;
  Ratio reward_threshold{2, 5};

  void validate() const;
};

struct SyntheticDump {
  std::vector<RawRecord> posts;
  std::vector<RawRecord> comments;
};

SyntheticDump generate_synthetic_corpus(const SynthConfig& cfg);

// Clean single-turn chat prompts over the same topic vocabulary, with no
// community structure. Deterministic given seed.
std::vector<ChatSequence> generate_benign_prompts(std::size_t n, std::size_t n_topics,
                                                  uint64_t seed);

// Fixed lexicon used by the generator.
const std::vector<std::string>& synth_topic_words(std::size_t topic);
const std::vector<std::string>& synth_good_style_words();
const std::vector<std::string>& synth_bad_style_words();
std::string synth_subreddit_name(std::size_t index);

}  // namespace karma
