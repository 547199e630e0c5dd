#include "karma/pipeline.h"

#include <fstream>

#include "karma/error.h"

namespace karma {
namespace {

std::vector<RawRecord> keep(std::span<const RawRecord> records, const FilterConfig& filter,
                            FilterStats& stats) {
  std::vector<RawRecord> out;
  for (const auto& r : records) {
    ++stats.read;
    const FilterReason why = filter_record(r, filter);
    switch (why) {
      case FilterReason::kKeep:
        ++stats.kept;
        out.push_back(r);
        break;
      case FilterReason::kExplicit:
        ++stats.explicit_content;
        break;
      case FilterReason::kNonText:
        ++stats.non_text;
        break;
      case FilterReason::kNonEnglish:
        ++stats.non_english;
        break;
    }
  }
  return out;
}

}  // namespace

CorpusBuild build_corpus(std::span<const RawRecord> posts, std::span<const RawRecord> comments,
                         const CorpusConfig& cfg, const FilterConfig& filter,
                         SerializationMode mode) {
  cfg.validate();
  CorpusBuild out;
  const auto kept_posts = keep(posts, filter, out.post_stats);
  const auto kept_comments = keep(comments, filter, out.comment_stats);
  const auto threads = build_threads(kept_posts, kept_comments);
  out.threads = threads.trees.size();
  out.orphans = threads.orphan_count;
  for (const auto& tree : threads.trees) {
    for (auto& inst : extract_instances(tree, cfg, mode)) {
      out.positives += static_cast<std::size_t>(inst.label);
      out.instances.push_back(std::move(inst));
    }
  }
  return out;
}

CorpusBuild build_corpus_files(const std::string& posts_path, const std::string& comments_path,
                               const CorpusConfig& cfg, const FilterConfig& filter,
                               SerializationMode mode) {
  FilterStats post_stats;
  FilterStats comment_stats;
  const auto posts = load_filtered_file(posts_path, RecordKind::kPost, filter, &post_stats);
  const auto comments =
      load_filtered_file(comments_path, RecordKind::kComment, filter, &comment_stats);
  CorpusBuild out = build_corpus(posts, comments, cfg, filter, mode);
  out.post_stats = post_stats;
  out.comment_stats = comment_stats;
  return out;
}

CorpusBuild build_synthetic_corpus(const SynthConfig& synth, const CorpusConfig& cfg,
                                   SerializationMode mode) {
  const SyntheticDump dump = generate_synthetic_corpus(synth);
  FilterConfig filter;
  filter.min_tokens = cfg.min_tokens;
  return build_corpus(dump.posts, dump.comments, cfg, filter, mode);
}

}  // namespace karma
