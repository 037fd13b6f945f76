#ifndef MPCIL_ERRORS_HPP_
#define MPCIL_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace mpcil {

// Frenet singularity 1 - kappa * d <= 1e-6.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidSpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The lane relaxation could not produce a feasible QP.
class InfeasibleStartError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SingularKktError : public std::runtime_error {
 public:
  SingularKktError(const std::string& what, double condition)
      : std::runtime_error(what), condition_(condition) {}
  double condition() const { return condition_; }

 private:
  double condition_;
};

// Malformed or version-mismatched file. line() is 1-based, 0 if unknown.
class FormatError : public std::runtime_error {
 public:
  // what() reads "line N: message" when the line is known.
  FormatError(const std::string& message, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message
                                    : message),
        message_(message),
        line_(line) {}
  int line() const { return line_; }
  const std::string& message() const { return message_; }

 private:
  std::string message_;
  int line_;
};

class RolloutAbortedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mpcil

#endif  // MPCIL_ERRORS_HPP_
