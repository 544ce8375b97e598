#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "raddet/dataset.hpp"
#include "raddet/inference.hpp"
#include "raddet/labeling.hpp"
#include "raddet/losses.hpp"
#include "raddet/metrics.hpp"
#include "raddet/model.hpp"

namespace raddet {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reduce-on-plateau: the rate is multiplied by `factor` once the monitored
/// loss has gone `patience` consecutive epochs without beating the best value
/// by more than `delta`.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr0, double factor = 0.1, int patience = 4, double delta = 1e-6, double min_lr = 1e-7);

  /// Feeds one epoch's loss and returns the rate for the next epoch.
  double step(double loss);
  double lr() const { return lr_; }
  int bad_epochs() const { return bad_; }

 private:
  double lr0_, lr_, factor_, delta_, min_lr_;
  int patience_;
  int bad_ = 0;
  int reductions_ = 0;
  std::optional<double> best_;
};

struct TrainConfig {
  int batch_size = 16;
  double lr0 = 1e-4;
  double plateau_factor = 0.1;
  int plateau_patience = 4;
  double plateau_delta = 1e-6;
  double min_lr = 1e-7;
  int epochs = 80;
  std::size_t max_steps = 0;  // 0 = no cap
  LossWeights weights;
  ModelConfig model;  // geometry is taken from the dataset
  std::uint64_t seed = 1;
  std::string train_split = "train";
  std::string val_split = "val";  // empty: monitor the training loss
  std::size_t max_train_frames = 0;  // 0 = whole split
  bool augment = true;
  AugmentConfig augmentation;
  LabelConfig labels;  // used when the dataset has no cached targets
  std::filesystem::path out_dir;  // empty: no checkpoint or log files
  bool verbose = false;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double heatmap = 0.0;
  double offset = 0.0;
  double heading = 0.0;
  std::optional<double> val_loss;
};

struct TrainResult {
  std::vector<EpochLog> history;
  std::vector<double> step_losses;
  std::size_t steps = 0;
  double best_monitor = 0.0;
  std::shared_ptr<Model> model;  // weights after the last step
  std::filesystem::path best_checkpoint;
};

/// One batch ready for the network.
struct Batch {
  ModelInput input;
  TargetBatch targets;
  std::vector<std::string> ids;
};

/// Loads frames, stacks and targets, keeping everything read in memory.
class SampleSource {
 public:
  SampleSource(const Dataset& dataset, int t_frames, LabelConfig labels);

  Batch batch(const std::vector<std::size_t>& indices, Rng* augment_rng, const AugmentConfig& augmentation);
  const Dataset& dataset() const { return ds_; }

 private:
  struct Sample {
    std::vector<RadarFrame> stack;
    TargetMaps targets;
  };
  const Sample& sample(std::size_t i);

  const Dataset& ds_;
  int t_frames_;
  LabelConfig labels_;
  std::vector<std::optional<Sample>> cache_;
};

TrainResult train(const Dataset& dataset, const TrainConfig& config);

/// Mean total loss over a split, evaluated without gradients.
double validation_loss(Model& model, SampleSource& source, const std::vector<std::size_t>& indices,
                       const LossWeights& weights, int batch_size);

/// Detections for every frame of a split.
std::vector<FrameDetections> infer(Model& model, const Dataset& dataset, const std::string& split,
                                   const InferenceConfig& config = {}, std::size_t max_frames = 0);

EvalReport evaluate(Model& model, const Dataset& dataset, const std::string& split,
                    const InferenceConfig& inference = {}, const EvalConfig& eval = {}, std::size_t max_frames = 0);

/// Scores detections read from a file (or any other source) against a split.
EvalReport evaluate_detections(const std::vector<FrameDetections>& detections, const Dataset& dataset,
                               const std::string& split, const EvalConfig& eval = {}, std::size_t max_frames = 0);

/// Ground-truth target maps decoded as if they were network outputs.
std::vector<FrameDetections> oracle_detections(const Dataset& dataset, const std::string& split,
                                               const InferenceConfig& config = {}, std::size_t max_frames = 0);

struct AblationRow {
  int t_frames = 0;
  std::uint64_t seed = 0;
  std::array<double, 3> heading_acc{};
  std::optional<double> map;
  double train_seconds = 0.0;  // wall clock, not written to the CSV
};

struct AblationReport {
  std::vector<AblationRow> runs;
  std::vector<AblationRow> medians;  // one per t, seed 0
};

/// Trains one model per (t, seed) from `base` and scores heading accuracy on
/// `eval_split`.
AblationReport ablate_frames(const Dataset& dataset, const std::vector<int>& t_list,
                             const std::vector<std::uint64_t>& seeds, const TrainConfig& base,
                             const std::string& eval_split = "test", const EvalConfig& eval = {});

std::string ablation_csv(const AblationReport& report);

}  // namespace raddet
