#pragma once

#include <stdexcept>
#include <string>

namespace cbsde {

// Bad user input: malformed config, out-of-range parameters, unordered tuples.
class ValidationError : public std::invalid_argument {
 public:
  ValidationError(const std::string& field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(field) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// A numerical guard tripped (a-priori bound, cap, monotone-step condition).
class BoundViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cbsde
