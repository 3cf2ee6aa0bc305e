#pragma once

#include <stdexcept>
#include <string>

namespace dlnflow {

// Non-finite or runaway state; `time` is the flow time at which it was seen.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, double time)
      : std::runtime_error(what + " at t=" + std::to_string(time)), time_(time) {}
  [[nodiscard]] double time() const { return time_; }

 private:
  double time_;
};

}  // namespace dlnflow
