#pragma once

// Three-stage progressive schedule: image-count milestones to active
// resolution and fade weight.

#include <json.hpp>

namespace snerf {

struct ProgressiveSchedule {
  double T1 = 5000;
  double T2 = 50000;
  double T3 = 250000;

  void validate() const;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ProgressiveSchedule, T1, T2, T3)

struct ScheduleState {
  int resolution = 0;
  double alpha = 1.0;
  int stage = 1;
  /// Completed doublings plus the fade of the current one; continuous in images.
  double level = 0.0;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ScheduleState, resolution, alpha, stage, level)

/// Stage 1 (< T1): base resolution, NeRF path only. Stage 2 (T1 .. T2): one
/// doubling per equal sub-interval, alpha ramping 0 -> 1 within each.
/// Stage 3 (>= T2): target resolution with alpha 1.
ScheduleState schedule_resolve(double images_seen, const ProgressiveSchedule& s, int base,
                               int target);

}  // namespace snerf
