#pragma once

#include <stdexcept>
#include <string>

namespace h2jet {

// Error taxonomy mirrored by the CLI exit codes: configuration/parse
// problems, physical-domain violations, and optimizer divergence.
struct parse_error : std::runtime_error {
  explicit parse_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct domain_error : std::runtime_error {
  explicit domain_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct divergence_error : std::runtime_error {
  explicit divergence_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace h2jet
