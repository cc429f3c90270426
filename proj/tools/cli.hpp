#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "mdn/field.hpp"
#include "mdn/vote.hpp"

namespace mdn::cli {

// Hand-built input mass and offsets for the `demo` shapes.
struct DemoFields {
  ScalarField c;
  DisplacementField o;
};

// shape: point | line | curve | transfer. Throws ConfigError otherwise.
DemoFields demo_fields(const std::string& shape);

// Pixels of channel 0 above `threshold`.
int support_size(const ScalarField& f, double threshold = 1e-6);

// args excludes the program name. Returns the process exit code:
// 0 success, 1 failed check or runtime error, 2 usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mdn::cli
