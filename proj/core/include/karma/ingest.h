#pragma once

#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace karma {

enum class RecordKind { kPost, kComment };

std::string_view to_string(RecordKind kind);
RecordKind parse_record_kind(std::string_view s);

// One post or comment from a Pushshift-style dump line. `text` is the
// title plus selftext for posts and the body for comments; `title` and
// `body` are kept so records can be written back in dump schema.
struct RawRecord {
  RecordKind kind = RecordKind::kComment;
  std::string id;
  std::optional<std::string> parent_id;
  std::string link_id;
  std::string subreddit;
  std::string author;
  int64_t created_utc = 0;
  std::string title;
  std::string body;
  std::string text;
  int64_t score = 0;
  bool over_18 = false;
  bool tombstone = false;

  friend bool operator==(const RawRecord&, const RawRecord&) = default;
};

// Joins title and selftext the way dump posts are flattened.
std::string post_text(std::string_view title, std::string_view selftext);

// Strips Reddit fullname prefixes ("t1_", "t3_").
std::string strip_fullname_prefix(std::string_view id);

// Parses one dump line. Returns nullopt for malformed lines (bad JSON,
// missing id/score/text/created_utc, comment without linkage).
std::optional<RawRecord> parse_record(std::string_view line, RecordKind kind);

// Serializes a record in the dump schema of its kind.
std::string to_dump_line(const RawRecord& record);

struct FilterStats {
  uint64_t read = 0;
  uint64_t malformed = 0;
  uint64_t explicit_content = 0;
  uint64_t non_text = 0;
  uint64_t non_english = 0;
  uint64_t kept = 0;

  bool balanced() const {
    return read == malformed + explicit_content + non_text + non_english + kept;
  }

  FilterStats& operator+=(const FilterStats& other);
  friend bool operator==(const FilterStats&, const FilterStats&) = default;
};

// Text table for standard error.
std::string format_stats(const FilterStats& stats, std::string_view label);

struct FilterConfig {
  std::size_t min_tokens = 5;
  std::vector<std::string> blocklist;
};

enum class FilterReason { kKeep, kExplicit, kNonText, kNonEnglish };

std::string_view to_string(FilterReason reason);

// The fixed English stopword list used by the language heuristic.
const std::vector<std::string_view>& english_stopwords();

FilterReason filter_record(const RawRecord& record, const FilterConfig& cfg);

// Streams newline-delimited records. Blank lines are ignored; malformed
// lines are counted and skipped. Throws Error(kIo) with the byte offset if
// the stream fails.
class DumpReader {
 public:
  DumpReader(std::istream& in, RecordKind kind);

  std::optional<RawRecord> next();

  uint64_t lines_read() const { return lines_read_; }
  uint64_t malformed() const { return malformed_; }
  uint64_t byte_offset() const { return offset_; }
  // Raw text of the line that produced the last returned record.
  std::string_view current_line() const { return line_; }

 private:
  std::istream& in_;
  RecordKind kind_;
  std::string line_;
  uint64_t lines_read_ = 0;
  uint64_t malformed_ = 0;
  uint64_t offset_ = 0;
};

using KeepCallback = std::function<void(const RawRecord&, std::string_view line)>;

// parse + filter over a whole stream, invoking `on_keep` for every kept
// record in input order.
FilterStats ingest_stream(std::istream& in, RecordKind kind, const FilterConfig& cfg,
                          const KeepCallback& on_keep);

std::vector<RawRecord> load_filtered(std::istream& in, RecordKind kind, const FilterConfig& cfg,
                                     FilterStats* stats = nullptr);

std::vector<RawRecord> load_filtered_file(const std::string& path, RecordKind kind,
                                          const FilterConfig& cfg, FilterStats* stats = nullptr);

}  // namespace karma
