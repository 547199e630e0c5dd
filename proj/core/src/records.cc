#include "karma/records.h"

#include <fstream>
#include <sstream>

#include "karma/error.h"

namespace karma {

ordered_json to_record(const LabeledSequence& seq) {
  ordered_json rec;
  rec["instance_id"] = seq.instance_id;
  ordered_json turns = ordered_json::array();
  for (const auto& t : seq.sequence.turns) {
    ordered_json turn;
    turn["role"] = std::string(to_string(t.role));
    turn["text"] = t.text;
    turns.push_back(std::move(turn));
  }
  rec["turns"] = std::move(turns);
  rec["label"] = seq.label;
  if (seq.meta) {
    ordered_json meta;
    meta["subreddit"] = seq.meta->subreddit;
    meta["created_utc"] = seq.meta->created_utc;
    rec["meta"] = std::move(meta);
  } else {
    rec["meta"] = nullptr;
  }
  return rec;
}

LabeledSequence labeled_sequence_from_record(const nlohmann::json& rec) {
  try {
    LabeledSequence out;
    out.instance_id = rec.at("instance_id").get<std::string>();
    for (const auto& turn : rec.at("turns")) {
      out.sequence.turns.push_back(
          {parse_role(turn.at("role").get<std::string>()), turn.at("text").get<std::string>()});
    }
    out.label = rec.at("label").get<int>();
    if (out.label != 0 && out.label != 1) {
      throw Error(ErrorCode::kMalformed, "label must be 0 or 1");
    }
    if (const auto it = rec.find("meta"); it != rec.end() && !it->is_null()) {
      out.meta = InstanceMeta{it->at("subreddit").get<std::string>(),
                              it->at("created_utc").get<int64_t>()};
    }
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformed, std::string("dataset record: ") + e.what());
  }
}

void write_dataset(std::ostream& out, std::span<const LabeledSequence> data) {
  for (const auto& seq : data) out << to_record(seq).dump() << '\n';
}

void write_dataset_file(const std::string& path, std::span<const LabeledSequence> data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  write_dataset(out, data);
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path + "'");
}

std::vector<LabeledSequence> read_dataset(std::istream& in) {
  std::vector<LabeledSequence> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded()) {
      throw Error(ErrorCode::kMalformed, "dataset line " + std::to_string(lineno) + " is not JSON");
    }
    out.push_back(labeled_sequence_from_record(rec));
  }
  if (in.bad()) throw Error(ErrorCode::kIo, "dataset read failed");
  return out;
}

std::vector<LabeledSequence> read_dataset_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  return read_dataset(in);
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorCode::kIo, "write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace karma
