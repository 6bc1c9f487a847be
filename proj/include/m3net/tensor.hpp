#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace m3net {

/// Row-major dynamic matrix; every learnable tensor and activation uses it.
template <typename Real>
using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-frame stack of matrices, e.g. t frames of (n^2 x d) patch tokens.
template <typename Real>
using MatSeq = std::vector<Mat<Real>>;

template <typename Real>
Mat<Real> zeros_like(const Mat<Real>& m) {
  return Mat<Real>::Zero(m.rows(), m.cols());
}

template <typename Real>
bool all_finite(const Mat<Real>& m) {
  return m.allFinite();
}

}  // namespace m3net
