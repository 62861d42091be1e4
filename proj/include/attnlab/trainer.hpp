#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "attnlab/json_io.hpp"
#include "attnlab/model.hpp"
#include "attnlab/profiler.hpp"
#include "attnlab/tasks.hpp"

namespace attnlab {

struct MixPlan;

enum class OptimizerKind { adam, sgd };

struct TrainConfig {
  int steps = 500;
  int batch_size = 16;
  double learning_rate = 3e-4;
  std::uint64_t seed = 0;
  int checkpoint_every = 50;
  OptimizerKind optimizer = OptimizerKind::adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

Json train_config_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

// A model snapshot handed to checkpoint sinks. `loss` is the mean batch loss
// of these parameters on the batch scheduled for this step.
struct Checkpoint {
  std::int64_t step = 0;
  double train_loss = 0.0;
  Model model;
};

using CheckpointSink = std::function<void(const Checkpoint&)>;

CheckpointSink memory_sink(std::vector<Checkpoint>& out);
// Writes checkpoints/step_{k}.json under run_dir, plus a train_loss record
// consumed by trajectory().
CheckpointSink directory_sink(const std::filesystem::path& run_dir);

struct TrainResult {
  std::vector<std::int64_t> checkpoint_steps;
  std::vector<double> step_losses;
  double final_loss = 0.0;
};

// Indices into the training set for one global step: the concatenation of
// seeded per-epoch permutations, cut into consecutive batches.
std::vector<std::size_t> batch_indices(std::size_t n, int batch_size, std::uint64_t seed, std::int64_t global_step);

double batch_loss(const Model& model, const Dataset& data, std::span<const std::size_t> indices);
double dataset_loss(const Model& model, const Dataset& data);

// Runs cfg.steps optimizer steps starting from model.step(). Checkpoints are
// emitted at local step 0, every checkpoint_every steps and at the end.
TrainResult sft(Model& model, const Dataset& train_set, const TrainConfig& cfg, const CheckpointSink& sink = {});

struct TrajectoryPoint {
  std::int64_t step = 0;
  double corr_to_base = 0.0;
  double mse_to_base = 0.0;
  double train_loss = 0.0;
};

// Compares every checkpoint's probe pattern with the first checkpoint's.
std::vector<TrajectoryPoint> trajectory(const std::vector<Checkpoint>& checkpoints, const Dataset& probe,
                                        AttributionMode mode = AttributionMode::abs_per_instance);

inline constexpr const char* kTrajectoryCsvHeader = "step,corr_to_base,mse_to_base,train_loss";
std::string trajectory_csv(const std::vector<TrajectoryPoint>& points);

std::vector<Checkpoint> load_run_checkpoints(const std::filesystem::path& run_dir);

// Stage-1 data: for each plan entry, `count` instances drawn without
// replacement from the task's pool, then a seeded shuffle of the union.
Dataset sample_mixture(const MixPlan& plan, const std::map<std::string, Dataset>& basic_sets, std::uint64_t seed);

Model two_stage(const Model& base, const MixPlan& plan, const std::map<std::string, Dataset>& basic_sets,
                const Dataset& complex_set, const TrainConfig& stage1, const TrainConfig& stage2);

}  // namespace attnlab
