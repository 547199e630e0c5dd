#pragma once

#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "karma/corpus.h"

namespace karma {

using ordered_json = nlohmann::ordered_json;

// {instance_id, turns:[{role,text}...], label, meta|null}
ordered_json to_record(const LabeledSequence& seq);
LabeledSequence labeled_sequence_from_record(const nlohmann::json& record);

void write_dataset(std::ostream& out, std::span<const LabeledSequence> data);
void write_dataset_file(const std::string& path, std::span<const LabeledSequence> data);
std::vector<LabeledSequence> read_dataset(std::istream& in);
std::vector<LabeledSequence> read_dataset_file(const std::string& path);

// Writes `text` to `path`, throwing Error(kIo) on failure.
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace karma
