#pragma once

namespace eikfield {

// Per-sample loss contribution and its partial derivatives with respect to
// the two model speeds.
struct LossTerms {
  double value = 0.0;
  double ds_start = 0.0;
  double ds_goal = 0.0;
};

// Symmetric ratio match: target/model + model/target - 2, summed over both
// endpoints. Zero exactly when both model speeds equal their targets, and it
// penalizes over- and under-shoot alike, which keeps the scale of tau pinned.
// Throws std::domain_error if any speed or target is not strictly positive.
LossTerms speed_match_loss(double s_start, double s_goal, double target_start,
                           double target_goal);

// Relative L1 magnitude loss, kept for ablation runs only.
LossTerms relative_l1_loss(double s_start, double s_goal, double target_start,
                           double target_goal);

}  // namespace eikfield
