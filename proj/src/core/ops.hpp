#pragma once

#include "m3net/errors.hpp"
#include "m3net/tensor.hpp"

#include <string>

namespace m3net::detail {

template <typename Real>
Mat<Real> softmax_rows(const Mat<Real>& s) {
  Mat<Real> out(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const Real mx = s.row(r).maxCoeff();
    out.row(r) = (s.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

/// Gradient of the pre-softmax scores given d(attn).
template <typename Real>
Mat<Real> softmax_rows_backward(const Mat<Real>& attn, const Mat<Real>& d_attn) {
  Mat<Real> ds(attn.rows(), attn.cols());
  for (Eigen::Index r = 0; r < attn.rows(); ++r) {
    const Real dot = attn.row(r).dot(d_attn.row(r));
    ds.row(r) = attn.row(r).array() * (d_attn.row(r).array() - dot);
  }
  return ds;
}

template <typename Real>
Mat<Real> relu(const Mat<Real>& u) {
  return u.cwiseMax(Real(0));
}

/// d(out) masked by the ReLU's active set.
template <typename Real>
Mat<Real> relu_backward(const Mat<Real>& u, const Mat<Real>& d) {
  return (u.array() > Real(0)).select(d, Real(0));
}

inline void expect_shape(long rows, long cols, long want_rows, long want_cols, const char* what) {
  if (rows != want_rows || cols != want_cols)
    throw Error(ErrorCode::kShapeMismatch,
                std::string(what) + ": got " + std::to_string(rows) + "x" + std::to_string(cols) +
                    ", expected " + std::to_string(want_rows) + "x" + std::to_string(want_cols));
}

}  // namespace m3net::detail
