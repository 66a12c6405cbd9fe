#pragma once

#include "fodkit/sphere_sh.hpp"

#include <string>
#include <vector>

namespace fodkit {

struct GradientReadResult {
  GradientTable table;
  std::vector<std::string> warnings;  // e.g. renormalized directions
};

/// FSL convention: bvals holds one row of N b-values, bvecs three rows of N
/// components. Throws ParseError with the offending line and column.
GradientReadResult parse_gradients(const std::string& bvals_text, const std::string& bvecs_text,
                                   const std::string& bvals_name = "bvals",
                                   const std::string& bvecs_name = "bvecs");
GradientReadResult read_gradients(const std::string& bvals_path, const std::string& bvecs_path);

void write_gradients(const GradientTable& table, const std::string& bvals_path, const std::string& bvecs_path);

}  // namespace fodkit
