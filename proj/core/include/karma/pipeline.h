#pragma once

#include <span>
#include <string>
#include <vector>

#include "karma/corpus.h"
#include "karma/ingest.h"
#include "karma/synth.h"

namespace karma {

struct CorpusBuild {
  std::vector<TrainingInstance> instances;
  FilterStats post_stats;
  FilterStats comment_stats;
  std::size_t threads = 0;
  std::size_t orphans = 0;
  std::size_t positives = 0;
};

// Filters raw records, reconstructs threads and extracts labeled instances.
CorpusBuild build_corpus(std::span<const RawRecord> posts, std::span<const RawRecord> comments,
                         const CorpusConfig& cfg, const FilterConfig& filter,
                         SerializationMode mode);

// Reads two filtered dump files and runs build_corpus on them.
CorpusBuild build_corpus_files(const std::string& posts_path, const std::string& comments_path,
                               const CorpusConfig& cfg, const FilterConfig& filter,
                               SerializationMode mode);

CorpusBuild build_synthetic_corpus(const SynthConfig& synth, const CorpusConfig& cfg,
                                   SerializationMode mode);

}  // namespace karma
