#include "karma/ingest.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "karma/error.h"
#include "karma/text.h"

namespace karma {

namespace {

using nlohmann::json;

std::optional<std::string> get_string(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

std::optional<int64_t> get_integer(const json& obj, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) return std::nullopt;
  if (it->is_number_integer()) return it->get<int64_t>();
  if (it->is_number_float()) {
    const double v = it->get<double>();
    if (v == static_cast<double>(static_cast<int64_t>(v))) return static_cast<int64_t>(v);
    return std::nullopt;
  }
  if (it->is_string()) {
    // Older dumps store created_utc as a decimal string.
    const auto& s = it->get_ref<const std::string&>();
    if (s.empty() || s.size() > 18) return std::nullopt;
    int64_t v = 0;
    for (const char c : s) {
      if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
      v = v * 10 + (c - '0');
    }
    return v;
  }
  return std::nullopt;
}

bool is_tombstone(std::string_view body) {
  const auto t = text::trim(body);
  return t == "[deleted]" || t == "[removed]";
}

std::string normalize_word(std::string_view token) {
  std::size_t b = 0, e = token.size();
  const auto keep = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  while (b < e && !keep(token[b])) ++b;
  while (e > b && !keep(token[e - 1])) --e;
  return text::to_lower_ascii(token.substr(b, e - b));
}

}  // namespace

std::string_view to_string(RecordKind kind) {
  return kind == RecordKind::kPost ? "post" : "comment";
}

RecordKind parse_record_kind(std::string_view s) {
  if (s == "post" || s == "posts" || s == "submission" || s == "submissions") {
    return RecordKind::kPost;
  }
  if (s == "comment" || s == "comments") return RecordKind::kComment;
  throw Error(ErrorCode::kInvalidConfig, "unknown record kind '" + std::string(s) + "'");
}

std::string post_text(std::string_view title, std::string_view selftext) {
  if (text::trim(selftext).empty()) return std::string(title);
  std::string out(title);
  out += "\n\n";
  out += selftext;
  return out;
}

std::string strip_fullname_prefix(std::string_view id) {
  if (id.size() > 3 && id[0] == 't' && std::isdigit(static_cast<unsigned char>(id[1])) &&
      id[2] == '_') {
    id.remove_prefix(3);
  }
  return std::string(id);
}

std::optional<RawRecord> parse_record(std::string_view line, RecordKind kind) {
  const json obj = json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (obj.is_discarded() || !obj.is_object()) return std::nullopt;

  RawRecord r;
  r.kind = kind;
  auto id = get_string(obj, "id");
  auto score = get_integer(obj, "score");
  auto created = get_integer(obj, "created_utc");
  if (!id || id->empty() || !score || !created || *created <= 0) return std::nullopt;
  r.id = strip_fullname_prefix(*id);
  if (r.id.empty()) return std::nullopt;
  r.score = *score;
  r.created_utc = *created;
  r.subreddit = get_string(obj, "subreddit").value_or("");
  r.author = get_string(obj, "author").value_or("");

  if (kind == RecordKind::kComment) {
    auto body = get_string(obj, "body");
    auto parent = get_string(obj, "parent_id");
    auto link = get_string(obj, "link_id");
    if (!body || !parent || !link || parent->empty() || link->empty()) return std::nullopt;
    r.body = std::move(*body);
    r.text = r.body;
    r.parent_id = strip_fullname_prefix(*parent);
    r.link_id = strip_fullname_prefix(*link);
    r.tombstone = is_tombstone(r.body);
    if (const auto it = obj.find("over_18"); it != obj.end() && it->is_boolean()) {
      r.over_18 = it->get<bool>();
    }
  } else {
    auto title = get_string(obj, "title");
    if (!title) return std::nullopt;
    r.title = std::move(*title);
    r.body = get_string(obj, "selftext").value_or("");
    r.text = post_text(r.title, r.body);
    r.link_id = r.id;
    r.tombstone = is_tombstone(r.body);
    if (const auto it = obj.find("over_18"); it != obj.end() && it->is_boolean()) {
      r.over_18 = it->get<bool>();
    }
  }
  return r;
}

std::string to_dump_line(const RawRecord& r) {
  nlohmann::ordered_json obj;
  obj["id"] = r.id;
  if (r.kind == RecordKind::kComment) {
    obj["parent_id"] = r.parent_id.value_or("");
    obj["link_id"] = r.link_id;
  }
  obj["subreddit"] = r.subreddit;
  obj["author"] = r.author;
  obj["created_utc"] = r.created_utc;
  if (r.kind == RecordKind::kComment) {
    obj["body"] = r.body;
  } else {
    obj["title"] = r.title;
    obj["selftext"] = r.body;
  }
  obj["score"] = r.score;
  if (r.kind == RecordKind::kPost || r.over_18) obj["over_18"] = r.over_18;
  return obj.dump();
}

FilterStats& FilterStats::operator+=(const FilterStats& o) {
  read += o.read;
  malformed += o.malformed;
  explicit_content += o.explicit_content;
  non_text += o.non_text;
  non_english += o.non_english;
  kept += o.kept;
  return *this;
}

std::string format_stats(const FilterStats& s, std::string_view label) {
  std::ostringstream out;
  const auto row = [&out](std::string_view name, uint64_t v) {
    out << "  " << std::left << std::setw(12) << name << std::right << std::setw(12) << v << '\n';
  };
  out << "filter stats (" << label << ")\n";
  row("read", s.read);
  row("malformed", s.malformed);
  row("explicit", s.explicit_content);
  row("non_text", s.non_text);
  row("non_english", s.non_english);
  row("kept", s.kept);
  return out.str();
}

std::string_view to_string(FilterReason reason) {
  switch (reason) {
    case FilterReason::kKeep: return "keep";
    case FilterReason::kExplicit: return "explicit";
    case FilterReason::kNonText: return "non_text";
    case FilterReason::kNonEnglish: return "non_english";
  }
  return "unknown";
}

const std::vector<std::string_view>& english_stopwords() {
  static const std::vector<std::string_view> kWords = {
      "the",   "be",   "to",    "of",    "and",   "a",    "in",   "that", "have", "i",
      "it",    "for",  "not",   "on",    "with",  "he",   "as",   "you",  "do",   "at",
      "this",  "but",  "his",   "by",    "from",  "they", "we",   "was",  "her",  "she",
      "or",    "an",   "will",  "my",    "one",   "all",  "would", "there", "their", "what",
      "so",    "up",   "out",   "if",    "about", "who",  "is",   "which", "are",  "me",
  };
  return kWords;
}

FilterReason filter_record(const RawRecord& r, const FilterConfig& cfg) {
  if (r.over_18) return FilterReason::kExplicit;
  if (!cfg.blocklist.empty()) {
    const auto words = text::word_tokens(r.text);
    for (const auto& term : cfg.blocklist) {
      const std::string t = text::to_lower_ascii(term);
      if (std::find(words.begin(), words.end(), t) != words.end()) return FilterReason::kExplicit;
    }
  }

  if (r.tombstone) return FilterReason::kNonText;
  const auto trimmed = text::trim(r.text);
  if (trimmed.empty()) return FilterReason::kNonText;
  const auto tokens = text::whitespace_tokens(trimmed);
  if (tokens.size() < cfg.min_tokens) return FilterReason::kNonText;
  const auto cps = text::decode_utf8(trimmed);
  std::size_t letters = 0, ascii_letters = 0;
  for (const char32_t cp : cps) {
    if (text::is_letter(cp)) {
      ++letters;
      if (cp < 0x80) ++ascii_letters;
    }
  }
  if (letters == 0) return FilterReason::kNonText;

  if (tokens.size() >= 10) {
    const auto& stop = english_stopwords();
    std::set<std::string> hits;
    for (const auto tok : tokens) {
      std::string w = normalize_word(tok);
      if (std::find(stop.begin(), stop.end(), w) != stop.end()) hits.insert(std::move(w));
    }
    if (hits.size() < 2) return FilterReason::kNonEnglish;
  } else if (static_cast<double>(ascii_letters) < 0.9 * static_cast<double>(letters)) {
    return FilterReason::kNonEnglish;
  }
  return FilterReason::kKeep;
}

DumpReader::DumpReader(std::istream& in, RecordKind kind) : in_(in), kind_(kind) {}

std::optional<RawRecord> DumpReader::next() {
  while (true) {
    if (!std::getline(in_, line_)) {
      if (in_.bad()) {
        throw Error(ErrorCode::kIo, "read failure at byte offset " + std::to_string(offset_));
      }
      return std::nullopt;
    }
    offset_ += line_.size() + 1;
    if (!line_.empty() && line_.back() == '\r') line_.pop_back();
    if (text::trim(line_).empty()) continue;
    ++lines_read_;
    auto rec = parse_record(line_, kind_);
    if (!rec) {
      ++malformed_;
      continue;
    }
    return rec;
  }
}

FilterStats ingest_stream(std::istream& in, RecordKind kind, const FilterConfig& cfg,
                          const KeepCallback& on_keep) {
  FilterStats stats;
  DumpReader reader(in, kind);
  while (auto rec = reader.next()) {
    switch (filter_record(*rec, cfg)) {
      case FilterReason::kKeep:
        ++stats.kept;
        if (on_keep) on_keep(*rec, reader.current_line());
        break;
      case FilterReason::kExplicit: ++stats.explicit_content; break;
      case FilterReason::kNonText: ++stats.non_text; break;
      case FilterReason::kNonEnglish: ++stats.non_english; break;
    }
  }
  stats.read = reader.lines_read();
  stats.malformed = reader.malformed();
  return stats;
}

std::vector<RawRecord> load_filtered(std::istream& in, RecordKind kind, const FilterConfig& cfg,
                                     FilterStats* stats) {
  std::vector<RawRecord> out;
  const FilterStats s = ingest_stream(in, kind, cfg, [&out](const RawRecord& r, std::string_view) {
    out.push_back(r);
  });
  if (stats) *stats += s;
  return out;
}

std::vector<RawRecord> load_filtered_file(const std::string& path, RecordKind kind,
                                          const FilterConfig& cfg, FilterStats* stats) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  return load_filtered(in, kind, cfg, stats);
}

}  // namespace karma
