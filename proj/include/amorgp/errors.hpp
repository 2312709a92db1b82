#pragma once

#include <stdexcept>
#include <string>

namespace amorgp {

struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NonFiniteGradient : std::runtime_error {
  explicit NonFiniteGradient(const std::string& param)
      : std::runtime_error("non-finite gradient in parameter '" + param + "'"),
        param_name(param) {}
  std::string param_name;
};

}  // namespace amorgp
