#ifndef SFV_ERRORS_HPP
#define SFV_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sfv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed model / run / experiment description.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// The particle system failed to reach the horizon (branching ceiling hit).
class NonTermination : public Error {
 public:
  using Error::Error;
};

// The model has no exact finite-state oracle (e.g. a discretized diffusion).
class NoOracle : public Error {
 public:
  using Error::Error;
};

// Survival curve is flat across a quantile level, so t_j is not unique.
class DegenerateQuantile : public Error {
 public:
  using Error::Error;
};

class QuadratureError : public Error {
 public:
  using Error::Error;
};

// An engine failure inside a batch of replicas, tagged with the replica index.
class ReplicaError : public Error {
 public:
  ReplicaError(std::size_t replica, const std::string& what)
      : Error("replica " + std::to_string(replica) + ": " + what), replica_(replica) {}
  std::size_t replica() const noexcept { return replica_; }

 private:
  std::size_t replica_;
};

}  // namespace sfv

#endif  // SFV_ERRORS_HPP
