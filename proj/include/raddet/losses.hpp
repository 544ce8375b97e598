#pragma once

#include <vector>

#include "raddet/labeling.hpp"
#include "raddet/model.hpp"
#include "raddet/tensor.hpp"

namespace raddet {

inline constexpr double kLogClamp = 1e-6;

struct LossWeights {
  double w1 = 1.0;  // heatmap
  double w2 = 1.0;  // offset
  double w3 = 1.0;  // heading
  double alpha = 2.0;
  double beta = 4.0;
  double gamma = 2.0;
  bool offset_l1 = false;  // masked L1 on decoded offsets instead of focal BCE
};

/// Targets of a batch, shaped like the network outputs.
struct TargetBatch {
  Tensor heatmap;       // [N,3,R,A]
  Tensor offset;        // [N,2,R,A], values in [-1,1]
  Tensor offset_mask;   // [N,R,A]
  Tensor heading;       // [N,2,R/4,A/4]
  Tensor heading_mask;  // [N,R/4,A/4]
};

TargetBatch make_target_batch(const std::vector<TargetMaps>& maps);

/// Penalty-reduced focal loss over Gaussian heatmap targets, normalised by
/// the number of cells whose target is exactly 1 (at least 1).
Tensor heatmap_focal(const Tensor& pred, const Tensor& target, double alpha = 2.0, double beta = 4.0);

/// Focal-modulated BCE on offsets remapped to (0,1), averaged over masked
/// cells. pred is the raw sigmoid output.
Tensor offset_loss(const Tensor& pred, const Tensor& target_offset, const Tensor& mask, double gamma = 2.0);

/// Mean absolute error of the decoded offset 2p-1 over masked cells.
Tensor offset_l1_loss(const Tensor& pred, const Tensor& target_offset, const Tensor& mask);

/// Squared error averaged over masked cells and both channels.
Tensor heading_mse(const Tensor& pred, const Tensor& target, const Tensor& mask);

struct LossBreakdown {
  Tensor total;
  double heatmap = 0.0;
  double offset = 0.0;
  double heading = 0.0;
};

LossBreakdown total_loss(const NetworkOutput& out, const TargetBatch& targets, const LossWeights& weights = {});

}  // namespace raddet
