#pragma once

#include <string>

#include "relpos/tensor.hpp"

namespace relpos {

/// Shortest decimal string that parses back to exactly `v`.
std::string format_double(double v);

/// Matrix as CSV with a `row,col_0,...` style header using the given labels.
std::string matrix_csv(const Tensor& m, const std::string& row_label, const std::string& col_prefix);

}  // namespace relpos
