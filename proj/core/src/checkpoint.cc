#include "karma/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "karma/error.h"
#include "karma/records.h"
#include "karma/text.h"

namespace karma {
namespace {

constexpr char kMagic[4] = {'K', 'R', 'M', 'A'};

template <typename T>
void put_le(std::string& out, T v) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<char>(u & 0xff));
    u = static_cast<U>(u >> 8);
  }
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::kIncompatibleCheckpoint, "checkpoint truncated at byte " +
                                                          std::to_string(pos_));
    }
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_tensors(const ParameterStore& store) {
  std::string out(kMagic, 4);
  put_le<uint32_t>(out, kCheckpointVersion);
  put_le<uint32_t>(out, static_cast<uint32_t>(store.size()));
  for (const auto& p : store) {
    put_le<uint16_t>(out, static_cast<uint16_t>(p.name.size()));
    out += p.name;
    put_le<uint8_t>(out, static_cast<uint8_t>(p.value.rank()));
    for (const int d : p.value.dims) put_le<uint32_t>(out, static_cast<uint32_t>(d));
    for (const float v : p.value.values) put_le<uint32_t>(out, std::bit_cast<uint32_t>(v));
  }
  return out;
}

ParameterStore decode_tensors(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4) != std::string_view(kMagic, 4)) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, "bad checkpoint magic");
  }
  const auto version = r.get<uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kIncompatibleCheckpoint,
                "unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.get<uint32_t>();
  ParameterStore store;
  for (uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<uint16_t>();
    std::string name(r.take(len));
    const auto rank = r.get<uint8_t>();
    std::vector<int> dims;
    std::size_t n = 1;
    for (uint8_t k = 0; k < rank; ++k) {
      const auto d = r.get<uint32_t>();
      if (d > (1u << 30)) throw Error(ErrorCode::kIncompatibleCheckpoint, "implausible dimension");
      dims.push_back(static_cast<int>(d));
      n *= d;
    }
    std::vector<float> values(n);
    for (auto& v : values) v = std::bit_cast<float>(r.get<uint32_t>());
    store.add(std::move(name), Tensor(std::move(dims), std::move(values)));
  }
  if (!r.done()) throw Error(ErrorCode::kIncompatibleCheckpoint, "trailing bytes in checkpoint");
  return store;
}

nlohmann::json header_to_json(const CheckpointHeader& h) {
  return {{"kind", h.kind},
          {"mode", h.mode},
          {"vocab_checksum", text::hex64(h.vocab_checksum)},
          {"config", h.config},
          {"format_version", h.format_version}};
}

CheckpointHeader header_from_json(const nlohmann::json& j) {
  try {
    CheckpointHeader h;
    h.kind = j.at("kind").get<std::string>();
    h.mode = j.at("mode").get<std::string>();
    h.vocab_checksum = std::stoull(j.at("vocab_checksum").get<std::string>(), nullptr, 16);
    h.config = j.at("config");
    h.format_version = j.at("format_version").get<uint32_t>();
    return h;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, std::string("bad checkpoint header: ") + e.what());
  }
}

void save_checkpoint(const ParameterStore& store, const CheckpointHeader& header,
                     const std::string& path) {
  write_text_file(path, encode_tensors(store));
  write_text_file(path + ".meta.json", header_to_json(header).dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& path, std::optional<uint64_t> expected_checksum) {
  std::string meta;
  try {
    meta = read_text_file(path + ".meta.json");
  } catch (const Error&) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, "missing checkpoint header for " + path);
  }
  const auto j = nlohmann::json::parse(meta, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kIncompatibleCheckpoint, "unreadable header for " + path);
  Checkpoint ck;
  ck.header = header_from_json(j);
  if (ck.header.format_version != kCheckpointVersion) {
    throw Error(ErrorCode::kIncompatibleCheckpoint, "unsupported header version");
  }
  if (expected_checksum && *expected_checksum != ck.header.vocab_checksum) {
    throw Error(ErrorCode::kIncompatibleCheckpoint,
                "vocabulary checksum " + text::hex64(ck.header.vocab_checksum) +
                    " does not match " + text::hex64(*expected_checksum));
  }
  ck.store = decode_tensors(read_text_file(path));
  return ck;
}

}  // namespace karma
