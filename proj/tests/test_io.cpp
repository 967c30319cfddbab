#include <gtest/gtest.h>

#include <filesystem>

#include "asrtra/tensor_io.hpp"
#include "helpers.hpp"

using namespace asrtra;
using namespace asrtra::io;
using asrtra::testing::tiny_model_config;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST(Checkpoint, ModelRoundTripIsByteIdentical) {
  const auto params = model::init_params(tiny_model_config(), 3);
  const auto bytes = serialize(to_checkpoint(params));
  const auto back = model_from_checkpoint(deserialize(bytes));
  EXPECT_EQ(back.cfg, params.cfg);
  EXPECT_EQ(serialize(to_checkpoint(back)), bytes);
  const auto a = params.named_tensors();
  const auto b = back.named_tensors();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].second->data, b[i].second->data) << a[i].first;
}

TEST(Checkpoint, RewardRoundTripIsByteIdentical) {
  reward::RewardModelConfig cfg;
  cfg.width = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 16;
  cfg.embed_dim = 8;
  const auto rp = reward::init_reward_params(cfg, 4);
  const auto path = temp_path("asrtra_reward.ckpt");
  save_reward(path, rp);
  const auto back = load_reward(path);
  EXPECT_EQ(back.cfg, rp.cfg);
  EXPECT_EQ(serialize(to_checkpoint(back)), read_file(path));
  std::filesystem::remove(path);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto params = model::init_params(tiny_model_config(), 5);
  const auto path = temp_path("asrtra_model.ckpt");
  save_model(path, params);
  const auto back = load_model(path);
  EXPECT_EQ(serialize(to_checkpoint(back)), serialize(to_checkpoint(params)));
  std::filesystem::remove(path);
}

TEST(Checkpoint, HeaderLayout) {
  const auto bytes = serialize(to_checkpoint(model::init_params(tiny_model_config(), 1)));
  EXPECT_EQ(bytes.substr(0, 8), "ASRTRACK");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  EXPECT_EQ(version, kVersion);
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto bytes = serialize(to_checkpoint(model::init_params(tiny_model_config(), 1)));
  EXPECT_THROW(deserialize(bytes.substr(0, bytes.size() - 3)), FileError);
  EXPECT_THROW(deserialize(bytes + "x"), FileError);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize(bad), FileError);
  auto bad_version = bytes;
  bad_version[8] = 9;
  EXPECT_THROW(deserialize(bad_version), FileError);
  EXPECT_THROW(read_file("/nonexistent/model.ckpt"), FileError);
}

TEST(Checkpoint, KindAndShapeMismatchesAreRejected) {
  const auto ck = to_checkpoint(model::init_params(tiny_model_config(), 1));
  EXPECT_THROW(reward::RewardModelParams(reward_from_checkpoint(ck)), FileError);
  auto other = model::init_params(model::ModelConfig{}, 1);
  EXPECT_THROW(assign_tensors(other.named_tensors(), ck), FileError);
}
