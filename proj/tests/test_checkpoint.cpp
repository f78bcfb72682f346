#include <gtest/gtest.h>

#include <filesystem>

#include "gazenav/checkpoint.hpp"

using namespace gazenav;
using namespace gazenav::nn;

namespace {

std::vector<NamedNetwork> sample_nets(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<NamedNetwork> nets;
  nets.push_back({"embed", Network({LayerSpec::linear(4, 3), LayerSpec::relu()}, rng)});
  nets.push_back({"gcn", Network({LayerSpec::graph_conv(3, 5), LayerSpec::dropout(0.25), LayerSpec::softmax_row()}, rng)});
  nets[0].net.params.layers[0].bias->value.setConstant(0.125);
  nets[0].net.params.step = 17;
  nets[1].net.params.layers[0].weight->m.setConstant(-2.5);
  return nets;
}

std::string tmp(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("gazenav_ckpt_" + name)).string();
}

}  // namespace

TEST(Checkpoint, RoundTripBitExact) {
  const auto nets = sample_nets(1);
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, nets, true);
  const std::string bytes = os.str();
  EXPECT_EQ(bytes.compare(0, 8, std::string(kCheckpointMagic, 8)), 0);
  std::istringstream is(bytes, std::ios::binary);
  const auto back = read_checkpoint(is);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "embed");
  EXPECT_EQ(back[0].net.specs, nets[0].net.specs);
  EXPECT_EQ(back[1].net.specs, nets[1].net.specs);
  EXPECT_EQ(back[0].net.params.step, 17);
  EXPECT_EQ(back[0].net.params.layers[0].weight->value, nets[0].net.params.layers[0].weight->value);
  EXPECT_EQ(back[0].net.params.layers[0].bias->value, nets[0].net.params.layers[0].bias->value);
  EXPECT_EQ(back[1].net.params.layers[0].weight->m, nets[1].net.params.layers[0].weight->m);
  std::ostringstream again(std::ios::binary);
  write_checkpoint(again, back, true);
  EXPECT_EQ(again.str(), bytes);
}

TEST(Checkpoint, WithoutOptimizerSlots) {
  const auto nets = sample_nets(2);
  std::ostringstream with(std::ios::binary), without(std::ios::binary);
  write_checkpoint(with, nets, true);
  write_checkpoint(without, nets, false);
  EXPECT_LT(without.str().size(), with.str().size());
  std::istringstream is(without.str(), std::ios::binary);
  const auto back = read_checkpoint(is);
  EXPECT_EQ(back[1].net.params.layers[0].weight->m.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(back[1].net.params.layers[0].weight->value, nets[1].net.params.layers[0].weight->value);
}

TEST(Checkpoint, RejectsCorruptInput) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, sample_nets(3), false);
  std::string bytes = os.str();
  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream is(bad, std::ios::binary);
    EXPECT_THROW(read_checkpoint(is), CheckpointError);
  }
  {
    std::istringstream is(bytes.substr(0, bytes.size() - 5), std::ios::binary);
    EXPECT_THROW(read_checkpoint(is), CheckpointError);
  }
  {
    std::istringstream is(bytes + "x", std::ios::binary);
    EXPECT_THROW(read_checkpoint(is), CheckpointError);
  }
  {
    std::string bad = bytes;
    bad[8] = 9;  // version
    std::istringstream is(bad, std::ios::binary);
    EXPECT_THROW(read_checkpoint(is), CheckpointError);
  }
}

TEST(Checkpoint, FileAndSidecar) {
  const auto path = tmp("file.ckpt");
  const auto nets = sample_nets(4);
  const auto hash = save_checkpoint(path, nets, true, {{"kind", "test"}});
  const auto loaded = load_checkpoint(path);
  EXPECT_EQ(loaded.hash, hash);
  EXPECT_EQ(loaded.metadata["hash"], hash);
  EXPECT_EQ(loaded.metadata["meta"]["kind"], "test");
  EXPECT_EQ(loaded.metadata["nets"][0]["step"], 17);
  EXPECT_EQ(loaded.metadata["nets"][1]["layers"][0]["kind"], "GraphConv");
  EXPECT_EQ(loaded.get("gcn").specs.size(), 3u);
  EXPECT_THROW(loaded.get("missing"), IncompatibleCheckpoint);
  // Same content, same hash.
  EXPECT_EQ(save_checkpoint(tmp("file2.ckpt"), nets, true), hash);
}
