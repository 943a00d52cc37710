#include "tissue/checkpoint.hpp"
#include "tissue/replay_memory.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

using namespace tissue;

namespace {

Experience make(double v)
{
  Experience e;
  e.tissue_pos = PixelVector::Constant(8, v);
  e.gripper_pos = PixelVector::Constant(4, 2 * v);
  e.input = ControlInput{PixelVector::Constant(4, v / 10)};
  e.tissue_delta = PixelVector::Constant(8, -v / 100);
  return e;
}

std::filesystem::path temp_file(const std::string& name)
{
  const auto dir = std::filesystem::temp_directory_path() / "tissue_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(ReplayMemory, EvictsOldestWhenFull)
{
  ReplayMemory mem(3);
  for (int i = 0; i < 5; ++i) mem.push(make(i));
  ASSERT_EQ(mem.size(), 3u);
  EXPECT_EQ(mem[0].tissue_pos[0], 2.0);
  EXPECT_EQ(mem[2].tissue_pos[0], 4.0);
}

TEST(ReplayMemory, SamplesDistinctIndices)
{
  ReplayMemory mem(100);
  for (int i = 0; i < 50; ++i) mem.push(make(i));
  std::mt19937_64 rng(3);
  const auto idx = mem.sample_indices(50, rng);
  EXPECT_EQ(std::set<std::size_t>(idx.begin(), idx.end()).size(), 50u);
  EXPECT_THROW((void)mem.sample_indices(51, rng), ContractViolation);
  EXPECT_THROW(ReplayMemory(0), ContractViolation);
}

TEST(ReplayMemory, TrainingWaitsForABatch)
{
  ReplayMemory mem(100);
  for (int i = 0; i < 10; ++i) mem.push(make(i));
  auto model = init_random(1);
  auto adam = AdamState::for_parameters(model.params.size());
  std::mt19937_64 rng(1);
  EXPECT_FALSE(train_minibatch(model, mem, 20, adam, rng).has_value());
  EXPECT_EQ(adam.step, 0u);
  EXPECT_TRUE(train_minibatch(model, mem, 10, adam, rng).has_value());
  EXPECT_EQ(adam.step, 1u);
}

TEST(ReplayMemory, NormalizerMapsRangeToUnitInterval)
{
  ReplayMemory mem(10);
  mem.push(make(1.0));
  mem.push(make(3.0));
  MlpDynamics model = init_random(2);
  fit_normalizer(model, mem);
  EXPECT_TRUE(model.normalizer_fitted);
  const auto lo = model.input_norm.apply(assemble_input(mem[0].tissue_pos, mem[0].gripper_pos, mem[0].input.displacement));
  const auto hi = model.input_norm.apply(assemble_input(mem[1].tissue_pos, mem[1].gripper_pos, mem[1].input.displacement));
  EXPECT_NEAR(lo.minCoeff(), -1.0, 1e-12);
  EXPECT_NEAR(hi.maxCoeff(), 1.0, 1e-12);
  EXPECT_NEAR(model.output_scale[0], 0.03, 1e-15);
}

TEST(ReplayMemory, PretrainingReducesLoss)
{
  ReplayMemory mem(500);
  std::mt19937_64 data(4);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  for (int i = 0; i < 300; ++i) {
    Experience e = make(0);
    for (int k = 0; k < 4; ++k) e.input.displacement[k] = 5 * d(data);
    for (int k = 0; k < 8; ++k) {
      e.tissue_pos[k] = 300 + 50 * d(data);
      e.tissue_delta[k] = 0.3 * e.input.displacement[k % 4];
    }
    mem.push(e);
  }
  auto model = init_random(9);
  fit_normalizer(model, mem);
  auto adam = AdamState::for_parameters(model.params.size(), 0.01);
  std::mt19937_64 rng(2);
  const double before = evaluate_loss(model, mem);
  const auto curve = pretrain(model, mem, 40, 32, adam, rng);
  EXPECT_EQ(curve.size(), 40u);
  EXPECT_LT(evaluate_loss(model, mem), 0.1 * before);
}

TEST(Checkpoint, RoundTripIsBitExact)
{
  auto model = init_random(77, MlpShape{3, 2, 9});
  model.input_norm.shift.setConstant(1.0 / 3.0);
  model.output_scale.setConstant(std::sqrt(2.0));
  model.normalizer_fitted = true;
  AdamState adam = AdamState::for_parameters(model.params.size());
  adam_update(model.params, Eigen::VectorXd::Constant(model.params.size(), 0.1 / 7.0), adam);
  const auto path = temp_file("ckpt_roundtrip.json");
  save_checkpoint(path.string(), model, &adam);
  const Checkpoint c = load_checkpoint(path.string());
  EXPECT_EQ(c.model.shape, model.shape);
  EXPECT_EQ(c.model.params, model.params);
  EXPECT_EQ(c.model.input_norm.shift, model.input_norm.shift);
  EXPECT_EQ(c.model.output_scale, model.output_scale);
  EXPECT_TRUE(c.model.normalizer_fitted);
  ASSERT_TRUE(c.adam.has_value());
  EXPECT_EQ(c.adam->m, adam.m);
  EXPECT_EQ(c.adam->v, adam.v);
  EXPECT_EQ(c.adam->step, 1u);
}

TEST(Checkpoint, RejectsCorruptFiles)
{
  const auto path = temp_file("ckpt_bad.json");
  std::ofstream(path) << R"({"format":"tissue-mlp-checkpoint","version":1,"tissue_points":4,"grippers":2,"hidden":12,"params":[1,2]})";
  EXPECT_THROW((void)load_checkpoint(path.string()), CheckpointError);
  std::ofstream(path) << "not json";
  EXPECT_THROW((void)load_checkpoint(path.string()), CheckpointError);
  EXPECT_THROW((void)load_checkpoint((path.parent_path() / "missing.json").string()), CheckpointError);
}
