#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "karma/checkpoint.h"
#include "karma/error.h"
#include "test_util.h"

namespace karma {
namespace {

ParameterStore sample_store() {
  ParameterStore s;
  s.add("emb", Tensor({2, 3}, {0.5f, -1.25f, 3e-8f, 1e20f, -0.0f, 7.0f}));
  s.add("bias", Tensor({1}, {0.125f}));
  return s;
}

ErrorCode decode_error(std::string_view bytes) {
  try {
    decode_tensors(bytes);
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kIo;
}

TEST(Checkpoint, ByteLayout) {
  ParameterStore s;
  s.add("w", Tensor({2}, {1.0f, -2.0f}));
  const std::string bytes = encode_tensors(s);
  const unsigned char want[] = {'K', 'R', 'M', 'A', 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 'w', 1,
                                2,   0,   0,   0,   0, 0, 0x80, 0x3f, 0, 0, 0, 0xc0};
  ASSERT_EQ(bytes.size(), sizeof(want));
  EXPECT_EQ(std::memcmp(bytes.data(), want, sizeof(want)), 0);
}

TEST(Checkpoint, EncodeDecodeIsBitExact) {
  const auto s = sample_store();
  const auto back = decode_tensors(encode_tensors(s));
  EXPECT_TRUE(back.same_values(s));
  EXPECT_EQ(encode_tensors(back), encode_tensors(s));
}

TEST(Checkpoint, TruncationAndGarbageAreRejected) {
  const std::string bytes = encode_tensors(sample_store());
  for (std::size_t n = 0; n < bytes.size(); ++n) {
    EXPECT_EQ(decode_error(std::string_view(bytes).substr(0, n)), ErrorCode::kIncompatibleCheckpoint)
        << "prefix " << n;
  }
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(decode_error(bad), ErrorCode::kIncompatibleCheckpoint);
  bad = bytes;
  bad[4] = 9;
  EXPECT_EQ(decode_error(bad), ErrorCode::kIncompatibleCheckpoint);
  EXPECT_EQ(decode_error(bytes + "x"), ErrorCode::kIncompatibleCheckpoint);
}

TEST(Checkpoint, SaveLoadWithHeader) {
  testing::TempDir dir;
  CheckpointHeader h;
  h.kind = "reward";
  h.mode = "generalized";
  h.vocab_checksum = 0x1234abcdull;
  h.config = {{"lr", 0.5}};
  const auto path = dir.file("m.krma");
  save_checkpoint(sample_store(), h, path);
  const auto ck = load_checkpoint(path, 0x1234abcdull);
  EXPECT_TRUE(ck.store.same_values(sample_store()));
  EXPECT_EQ(ck.header.kind, "reward");
  EXPECT_EQ(ck.header.mode, "generalized");
  EXPECT_EQ(ck.header.config["lr"], 0.5);
  EXPECT_EQ(testing::slurp(path), encode_tensors(sample_store()));
}

TEST(Checkpoint, WrongVocabularyIsIncompatible) {
  testing::TempDir dir;
  CheckpointHeader h;
  h.kind = "policy";
  h.vocab_checksum = 1;
  save_checkpoint(sample_store(), h, dir.file("p.krma"));
  try {
    load_checkpoint(dir.file("p.krma"), 2);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIncompatibleCheckpoint);
  }
}

TEST(Checkpoint, TruncatedFileOnDisk) {
  testing::TempDir dir;
  save_checkpoint(sample_store(), {}, dir.file("t.krma"));
  const std::string bytes = testing::slurp(dir.file("t.krma"));
  std::ofstream(dir.file("t.krma"), std::ios::binary | std::ios::trunc)
      .write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 3));
  EXPECT_THROW(load_checkpoint(dir.file("t.krma")), Error);
}

TEST(Checkpoint, HeaderVersionChecked) {
  testing::TempDir dir;
  save_checkpoint(sample_store(), {}, dir.file("v.krma"));
  auto j = header_to_json(CheckpointHeader{});
  j["format_version"] = 99;
  std::ofstream(dir.file("v.krma.meta.json")) << j.dump();
  try {
    load_checkpoint(dir.file("v.krma"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIncompatibleCheckpoint);
  }
  EXPECT_THROW(header_from_json(nlohmann::json::object()), Error);
}

}  // namespace
}  // namespace karma
