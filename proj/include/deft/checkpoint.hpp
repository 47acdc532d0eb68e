#pragma once

#include "deft/model.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace deft {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kStageOne = "stage1";
inline constexpr const char* kStageSrt = "srt";

struct OptimizerState {
  long step = 0;
  std::vector<Mat<float>> m, v;  // parameter visit order
};

// What resuming needs beyond the weights.
struct TrainingState {
  int epoch = 0;         // epochs fully completed
  long global_step = 0;  // optimizer steps taken
  double best_metric = 0.0;
  bool has_best = false;
  double lr = 0.0;
  int plateau_bad_epochs = 0;
  OptimizerState optimizer;
};

struct Checkpoint {
  Model<float> model;
  std::string stage = kStageOne;
  std::vector<std::string> class_names;
  std::optional<TrainingState> training;
};

// Layout: "DEFTCKPT", u32 version, u64 header size, JSON header, then raw
// little-endian float32 tensors in header order (weights, then optimizer
// first and second moments when present).
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model,
                     const std::string& stage, const TrainingState* training = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace deft
