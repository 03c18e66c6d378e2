#pragma once

#include "korr/numeric.hpp"

namespace korr_test {

// Bit-exact matrix comparison (Eigen has no operator== for matrices).
inline bool bit_equal(const korr::Matrix& a, const korr::Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         (a.size() == 0 || (a.array() == b.array()).all());
}

inline double max_abs_diff(const korr::Matrix& a, const korr::Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace korr_test
