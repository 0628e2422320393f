#include "sfv/state.hpp"

#include <algorithm>
#include <stdexcept>

namespace sfv {

TrajectorySegment::TrajectorySegment(double t_from, StatePoint start)
    : times_{t_from}, states_{std::move(start)}, end_(t_from) {}

void TrajectorySegment::record_jump(double t, StatePoint state) {
  times_.push_back(t);
  states_.push_back(std::move(state));
  end_ = t;
}

void TrajectorySegment::finish_killed(double death_time) {
  death_time_ = death_time;
  end_ = death_time;
}

void TrajectorySegment::finish_survived(double t_cap) {
  death_time_.reset();
  end_ = t_cap;
}

const StatePoint& TrajectorySegment::state_at(double t) const {
  if (times_.empty() || t < times_.front() || t > end_) {
    throw std::out_of_range("TrajectorySegment::state_at: time outside segment");
  }
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  return states_[static_cast<std::size_t>(it - times_.begin()) - 1];
}

}  // namespace sfv
