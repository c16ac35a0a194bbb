#include "stylenerf/schedule.hpp"

#include "stylenerf/error.hpp"

#include <algorithm>
#include <cmath>

namespace snerf {

void ProgressiveSchedule::validate() const {
  if (!(T1 > 0 && T1 < T2 && T2 <= T3)) throw ConfigError("schedule needs 0 < T1 < T2 <= T3");
}

ScheduleState schedule_resolve(double images_seen, const ProgressiveSchedule& s, int base,
                               int target) {
  s.validate();
  if (!(images_seen >= 0)) throw ArgumentError("images_seen must be non-negative");
  if (base < 1 || target < base) throw ConfigError("target resolution below base");
  int doublings = 0;
  while ((base << doublings) < target) ++doublings;
  if ((base << doublings) != target) throw ConfigError("target must be base times a power of two");

  ScheduleState st;
  if (images_seen < s.T1) {
    st.resolution = base;
    st.alpha = 1.0;
    st.stage = 1;
    st.level = 0.0;
    return st;
  }
  if (images_seen >= s.T2 || doublings == 0) {
    st.resolution = images_seen >= s.T2 ? target : base;
    st.alpha = 1.0;
    st.stage = images_seen >= s.T2 ? 3 : 2;
    st.level = doublings;
    return st;
  }
  const double sub = (s.T2 - s.T1) / doublings;
  const double x = (images_seen - s.T1) / sub;
  const int j = std::min(static_cast<int>(std::floor(x)), doublings - 1);
  st.resolution = base << (j + 1);
  st.alpha = std::clamp(x - j, 0.0, 1.0);
  st.stage = 2;
  st.level = j + st.alpha;
  return st;
}

}  // namespace snerf
