#ifndef SFV_STATE_HPP
#define SFV_STATE_HPP

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace sfv {

struct Cemetery {
  friend bool operator==(Cemetery, Cemetery) { return true; }
};

/// A point of F ∪ {∂}: a finite-state index, a real vector, or the cemetery.
class StatePoint {
 public:
  StatePoint() = default;  // cemetery

  static StatePoint cemetery() { return StatePoint{}; }
  static StatePoint at_index(std::size_t index) { return StatePoint{Repr{index}}; }
  static StatePoint at_coords(std::vector<double> coords) {
    return StatePoint{Repr{std::move(coords)}};
  }

  bool is_cemetery() const noexcept { return std::holds_alternative<Cemetery>(repr_); }
  bool is_interior() const noexcept { return !is_cemetery(); }
  bool has_index() const noexcept { return std::holds_alternative<std::size_t>(repr_); }
  bool has_coords() const noexcept {
    return std::holds_alternative<std::vector<double>>(repr_);
  }

  // Throw std::bad_variant_access on the wrong alternative.
  std::size_t index() const { return std::get<std::size_t>(repr_); }
  const std::vector<double>& coords() const { return std::get<std::vector<double>>(repr_); }

  friend bool operator==(const StatePoint&, const StatePoint&) = default;

 private:
  using Repr = std::variant<Cemetery, std::size_t, std::vector<double>>;
  explicit StatePoint(Repr r) : repr_(std::move(r)) {}
  Repr repr_;
};

/// One particle's path on [t_from, end]: a jump skeleton (times and states)
/// ending either in death or at the cap. Queries between jumps return the
/// state of the most recent jump, so the path is right-continuous.
class TrajectorySegment {
 public:
  TrajectorySegment() = default;
  TrajectorySegment(double t_from, StatePoint start);

  void record_jump(double t, StatePoint state);
  void finish_killed(double death_time);
  void finish_survived(double t_cap);

  double t_from() const noexcept { return times_.front(); }
  bool survived() const noexcept { return !death_time_.has_value(); }
  std::optional<double> death_time() const noexcept { return death_time_; }
  // Death time, or the cap for a survivor.
  double end_time() const noexcept { return end_; }

  /// State at time t ∈ [t_from, end_time()]. At the death time itself this is
  /// the last interior state (the left limit), which is what a branching at
  /// that instant must copy when deaths tie.
  const StatePoint& state_at(double t) const;

  // Last interior state. For a survivor this is its state at the cap.
  const StatePoint& last_interior() const noexcept { return states_.back(); }

  std::size_t jump_count() const noexcept { return times_.size() - 1; }
  const std::vector<double>& jump_times() const noexcept { return times_; }
  const std::vector<StatePoint>& jump_states() const noexcept { return states_; }

 private:
  std::vector<double> times_;
  std::vector<StatePoint> states_;
  std::optional<double> death_time_;
  double end_ = 0.0;
};

/// A bounded observable φ on F, extended by φ(∂) = 0.
class TestFunction {
 public:
  using Fn = std::function<double(const StatePoint&)>;

  TestFunction(std::string name, Fn fn, double sup_norm)
      : name_(std::move(name)), fn_(std::move(fn)), sup_norm_(sup_norm) {}

  const std::string& name() const noexcept { return name_; }
  double sup_norm() const noexcept { return sup_norm_; }

  double operator()(const StatePoint& x) const { return x.is_cemetery() ? 0.0 : fn_(x); }

 private:
  std::string name_;
  Fn fn_;
  double sup_norm_;
};

inline TestFunction indicator_of_alive() {
  return TestFunction("1_F", [](const StatePoint&) { return 1.0; }, 1.0);
}

}  // namespace sfv

#endif  // SFV_STATE_HPP
