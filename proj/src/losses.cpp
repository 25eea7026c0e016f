#include "eikfield/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace eikfield {

namespace {
void check_positive(double s_start, double s_goal, double target_start, double target_goal) {
  if (!(s_start > 0.0) || !(s_goal > 0.0)) {
    throw std::domain_error("loss: model speed must be strictly positive");
  }
  if (!(target_start > 0.0) || !(target_goal > 0.0)) {
    throw std::domain_error("loss: target speed must be strictly positive");
  }
}
}  // namespace

LossTerms speed_match_loss(double s_start, double s_goal, double target_start,
                           double target_goal) {
  check_positive(s_start, s_goal, target_start, target_goal);
  LossTerms t;
  t.value = target_start / s_start + s_start / target_start + target_goal / s_goal +
            s_goal / target_goal - 4.0;
  t.ds_start = -target_start / (s_start * s_start) + 1.0 / target_start;
  t.ds_goal = -target_goal / (s_goal * s_goal) + 1.0 / target_goal;
  return t;
}

LossTerms relative_l1_loss(double s_start, double s_goal, double target_start,
                           double target_goal) {
  check_positive(s_start, s_goal, target_start, target_goal);
  LossTerms t;
  t.value = std::abs(s_start - target_start) / target_start +
            std::abs(s_goal - target_goal) / target_goal;
  t.ds_start = (s_start > target_start ? 1.0 : (s_start < target_start ? -1.0 : 0.0)) / target_start;
  t.ds_goal = (s_goal > target_goal ? 1.0 : (s_goal < target_goal ? -1.0 : 0.0)) / target_goal;
  return t;
}

}  // namespace eikfield
