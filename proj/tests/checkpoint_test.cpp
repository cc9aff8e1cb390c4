#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "glua/checkpoint.hpp"
#include "test_util.hpp"

using namespace glua;
using glua::testing::bitwise_equal;

namespace {

ModelConfig desk(Variant v) {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 48;
  cfg.n_heads = 4;
  cfg.ffn_hidden = 128;
  cfg.variant = v;
  cfg.task = ClassifyTask{10, 4, 48};
  return cfg;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "glua_checkpoint_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> one_tensor_file() {
  CheckpointTensor t{"w", DType::f32, {2, 3}, std::vector<std::uint8_t>(24, 0x11)};
  return encode_checkpoint(std::span<const CheckpointTensor>(&t, 1));
}

}  // namespace

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = one_tensor_file();
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "GLUA");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
  EXPECT_EQ(bytes[8], 1);
  // magic, version, count, name_len, name, dtype, rank, two dims, payload
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 4 + 1 + 1 + 4 + 16 + 24);
}

TEST(Checkpoint, SaveLoadRestoresWeightsBitwise) {
  for (Variant v : {Variant::baseline, Variant::glu}) {
    Model<float> src(desk(v), 1);
    Model<float> dst(desk(v), 2);
    const auto path = scratch("roundtrip.ckpt");
    checkpoint_save(src, path);
    checkpoint_load(dst, path);
    for (std::size_t i = 0; i < src.parameters().size(); ++i) {
      EXPECT_TRUE(bitwise_equal(src.parameters()[i]->value, dst.parameters()[i]->value));
    }
  }
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  for (Variant v : {Variant::baseline, Variant::glu}) {
    Model<double> a(desk(v), 3);
    Model<double> b(desk(v), 4);
    checkpoint_save(a, scratch("first.ckpt"));
    checkpoint_load(b, scratch("first.ckpt"));
    checkpoint_save(b, scratch("second.ckpt"));
    EXPECT_EQ(slurp(scratch("first.ckpt")), slurp(scratch("second.ckpt")));
  }
}

TEST(Checkpoint, TruncationNamesLengths) {
  auto bytes = one_tensor_file();
  bytes.resize(bytes.size() - 5);
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected 24"), std::string::npos) << msg;
    EXPECT_NE(msg.find("has 19"), std::string::npos) << msg;
    EXPECT_EQ(e.offset(), bytes.size() - 19);
  }
}

TEST(Checkpoint, WrongMagicRejected) {
  auto bytes = one_tensor_file();
  bytes[0] = 'X';
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.offset(), 0u);
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
}

TEST(Checkpoint, WrongMagicRejectedOnLoadBeforeReadingPayload) {
  auto bytes = one_tensor_file();
  bytes[3] = 'B';
  const auto path = scratch("bad_magic.ckpt");
  spit(path, bytes);
  Model<float> m(desk(Variant::glu), 1);
  EXPECT_THROW(checkpoint_load(m, path), CheckpointError);
}

TEST(Checkpoint, UnsupportedVersion) {
  auto bytes = one_tensor_file();
  bytes[4] = 2;
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

TEST(Checkpoint, HugeDimensionRejectedWithoutAllocation) {
  auto bytes = one_tensor_file();
  // First dimension starts after magic, version, count, name_len, "w", dtype, rank.
  const std::size_t dim_at = 4 + 4 + 4 + 4 + 1 + 1 + 4;
  for (std::size_t i = 0; i < 8; ++i) bytes[dim_at + i] = 0xFF;
  try {
    decode_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.offset(), dim_at);
  }
}

TEST(Checkpoint, TrailingBytesRejected) {
  auto bytes = one_tensor_file();
  bytes.push_back(0);
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

TEST(Checkpoint, UnknownDtypeRejected) {
  auto bytes = one_tensor_file();
  bytes[4 + 4 + 4 + 4 + 1] = 7;
  EXPECT_THROW(decode_checkpoint(bytes), CheckpointError);
}

TEST(Checkpoint, MismatchedModelRejected) {
  Model<float> base(desk(Variant::baseline), 1);
  Model<float> glu(desk(Variant::glu), 1);
  Model<double> wide(desk(Variant::baseline), 1);
  const auto path = scratch("base.ckpt");
  checkpoint_save(base, path);
  EXPECT_THROW(checkpoint_load(glu, path), std::invalid_argument);
  EXPECT_THROW(checkpoint_load(wide, path), std::invalid_argument);
}

TEST(Checkpoint, MissingFile) {
  Model<float> m(desk(Variant::glu), 1);
  EXPECT_THROW(checkpoint_load(m, scratch("nope.ckpt")), std::runtime_error);
}

TEST(AtomicWrite, ReplacesContentAndLeavesNoTemp) {
  const auto path = scratch("atomic.txt");
  write_file_atomic(path, std::string("one"));
  write_file_atomic(path, std::string("two"));
  const auto bytes = slurp(path);
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()), "two");
  EXPECT_FALSE(std::filesystem::exists(scratch("atomic.txt.tmp")));
}
