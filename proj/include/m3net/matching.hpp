#pragma once

#include "m3net/encoding.hpp"
#include "m3net/tensor.hpp"

#include <utility>
#include <vector>

namespace m3net {

template <typename Real>
using RowVec = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

// ---------------------------------------------------------------------------
// Instance-specific matching (ordered temporal alignment)

/// m(x, y) = 1 - cos(a_x, b_y). Rows of a index m's rows. Throws ZeroNormFrame
/// when a row norm falls below 1e-12.
template <typename Real>
Mat<Real> cosine_distance_matrix(const Mat<Real>& a, const Mat<Real>& b);

struct DtwResult {
  double cost = 0.0;
  std::vector<std::pair<int, int>> path;  // 0-based (x, y), from (0, 0) to the last cell
};

/// Minimum cumulative cost over monotone paths with diagonal, vertical and
/// horizontal steps. Backtrace ties prefer diagonal, then (x-1, y), then (x, y-1).
template <typename Real>
DtwResult dtw_min_cost(const Mat<Real>& m);

/// Mean cosine distance along the DTW path between support rows and query
/// columns.
template <typename Real>
Real instance_distance(const Mat<Real>& query, const Mat<Real>& support);

/// Gradient of instance_distance with the alignment path held fixed.
template <typename Real>
void instance_distance_backward(const Mat<Real>& query, const Mat<Real>& support, Real grad,
                                Mat<Real>& d_query, Mat<Real>& d_support);

// ---------------------------------------------------------------------------
// Category-specific matching (cross-attention reconstruction)

template <typename Real>
struct CmParams {
  Mat<Real> W_Q, W_K, W_V;  // d x d_k
};

template <typename Real>
struct CmReconstruction {
  Mat<Real> recon;             // a x d_k
  Mat<Real> projected_target;  // a x d_k
  Mat<Real> attn;              // a x b
};

template <typename Real>
CmReconstruction<Real> cm_reconstruct(const CmParams<Real>& p, const Mat<Real>& target,
                                      const Mat<Real>& source);

/// Sum over target rows of ||target_r W_V - recon_r||.
template <typename Real>
Real cm_distance(const CmParams<Real>& p, const Mat<Real>& target, const Mat<Real>& source);

template <typename Real>
void cm_distance_backward(const CmParams<Real>& p, const Mat<Real>& target, const Mat<Real>& source,
                          Real grad, Mat<Real>& d_target, Mat<Real>& d_source, CmParams<Real>& g);

/// Stack of K support clips (each t x d) into one (K*t x d) prototype.
template <typename Real>
Mat<Real> stack_prototype(const MatSeq<Real>& clips, std::size_t first, std::size_t count);

// ---------------------------------------------------------------------------
// Task-specific matching (bidirectional chamfer)

/// (1/|a|) sum_x min_y ||a_x - b_y||.
template <typename Real>
Real chamfer_directed(const Mat<Real>& a, const Mat<Real>& b);

template <typename Real>
void chamfer_directed_backward(const Mat<Real>& a, const Mat<Real>& b, Real grad, Mat<Real>& d_a,
                               Mat<Real>& d_b);

template <typename Real>
Real chamfer_bidirectional(const Mat<Real>& a, const Mat<Real>& b) {
  return chamfer_directed(a, b) + chamfer_directed(b, a);
}

// ---------------------------------------------------------------------------
// Per-class branch distances over one encoded episode context

template <typename Real>
struct BranchScores {
  RowVec<Real> d1, d2, d3;
};

template <typename Real>
RowVec<Real> instance_matching(const EncodedViews<Real>& views, int n_way, int k_shot);

template <typename Real>
RowVec<Real> category_matching(const CmParams<Real>& p, const EncodedViews<Real>& views, int n_way,
                               int k_shot);

template <typename Real>
RowVec<Real> task_matching(const EncodedViews<Real>& views, int n_way, int k_shot);

/// Backward passes accumulate into the view gradient of the same layout.
template <typename Real>
void instance_matching_backward(const EncodedViews<Real>& views, int n_way, int k_shot,
                                const RowVec<Real>& d_scores, MatSeq<Real>& d_instance);

template <typename Real>
void category_matching_backward(const CmParams<Real>& p, const EncodedViews<Real>& views, int n_way,
                                int k_shot, const RowVec<Real>& d_scores, MatSeq<Real>& d_category,
                                CmParams<Real>& g);

template <typename Real>
void task_matching_backward(const EncodedViews<Real>& views, int n_way, int k_shot,
                            const RowVec<Real>& d_scores, MatSeq<Real>& d_task);

}  // namespace m3net
