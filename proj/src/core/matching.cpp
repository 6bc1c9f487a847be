#include "m3net/matching.hpp"

#include "m3net/errors.hpp"
#include "ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace m3net {

namespace {

template <typename Real>
RowVec<Real> row_norms(const Mat<Real>& a) {
  RowVec<Real> n(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    n(i) = a.row(i).norm();
    if (!(static_cast<double>(n(i)) >= 1e-12))
      throw Error(ErrorCode::kZeroNormFrame, "frame " + std::to_string(i) + " has zero norm");
  }
  return n;
}

}  // namespace

template <typename Real>
Mat<Real> cosine_distance_matrix(const Mat<Real>& a, const Mat<Real>& b) {
  detail::expect_shape(b.rows(), b.cols(), b.rows(), a.cols(), "cosine operands");
  const auto na = row_norms(a);
  const auto nb = row_norms(b);
  Mat<Real> m = a * b.transpose();
  for (Eigen::Index x = 0; x < m.rows(); ++x)
    for (Eigen::Index y = 0; y < m.cols(); ++y) {
      const Real cos = std::clamp(m(x, y) / (na(x) * nb(y)), Real(-1), Real(1));
      m(x, y) = Real(1) - cos;
    }
  return m;
}

template <typename Real>
DtwResult dtw_min_cost(const Mat<Real>& m) {
  const auto rows = m.rows(), cols = m.cols();
  if (rows < 1 || cols < 1) throw Error(ErrorCode::kShapeMismatch, "empty DTW matrix");
  Mat<double> D(rows, cols);
  for (Eigen::Index x = 0; x < rows; ++x)
    for (Eigen::Index y = 0; y < cols; ++y) {
      const double v = m(x, y);
      if (x == 0 && y == 0) D(x, y) = v;
      else if (y == 0) D(x, y) = v + D(x - 1, 0);
      else if (x == 0) D(x, y) = v + D(0, y - 1);
      else D(x, y) = v + std::min({D(x - 1, y - 1), D(x - 1, y), D(x, y - 1)});
    }

  DtwResult out;
  out.cost = D(rows - 1, cols - 1);
  auto x = rows - 1, y = cols - 1;
  out.path.emplace_back(static_cast<int>(x), static_cast<int>(y));
  while (x > 0 || y > 0) {
    if (x == 0) --y;
    else if (y == 0) --x;
    else {
      const double diag = D(x - 1, y - 1), up = D(x - 1, y), left = D(x, y - 1);
      if (diag <= up && diag <= left) { --x; --y; }
      else if (up <= left) --x;
      else --y;
    }
    out.path.emplace_back(static_cast<int>(x), static_cast<int>(y));
  }
  std::reverse(out.path.begin(), out.path.end());
  return out;
}

template <typename Real>
Real instance_distance(const Mat<Real>& query, const Mat<Real>& support) {
  const Mat<Real> m = cosine_distance_matrix<Real>(support, query);
  const auto dtw = dtw_min_cost<Real>(m);
  Real sum = 0;
  for (auto [x, y] : dtw.path) sum += m(x, y);
  return sum / static_cast<Real>(dtw.path.size());
}

template <typename Real>
void instance_distance_backward(const Mat<Real>& query, const Mat<Real>& support, Real grad,
                                Mat<Real>& d_query, Mat<Real>& d_support) {
  const Mat<Real> m = cosine_distance_matrix<Real>(support, query);
  const auto dtw = dtw_min_cost<Real>(m);
  const Real g = grad / static_cast<Real>(dtw.path.size());
  const auto ns = row_norms(support);
  const auto nq = row_norms(query);
  for (auto [x, y] : dtw.path) {
    // m = 1 - <s, q> / (|s||q|)
    const RowVec<Real> s_hat = support.row(x) / ns(x);
    const RowVec<Real> q_hat = query.row(y) / nq(y);
    const Real cos = s_hat.dot(q_hat);
    d_support.row(x) -= g * (q_hat - cos * s_hat) / ns(x);
    d_query.row(y) -= g * (s_hat - cos * q_hat) / nq(y);
  }
}

// ---------------------------------------------------------------------------

template <typename Real>
CmReconstruction<Real> cm_reconstruct(const CmParams<Real>& p, const Mat<Real>& target,
                                      const Mat<Real>& source) {
  const auto d = p.W_Q.rows();
  if (target.cols() != d || source.cols() != d)
    throw Error(ErrorCode::kShapeMismatch, "C-M inputs must have " + std::to_string(d) + " channels");
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(p.W_Q.cols()));
  CmReconstruction<Real> r;
  const Mat<Real> q = target * p.W_Q;
  const Mat<Real> k = source * p.W_K;
  r.attn = detail::softmax_rows<Real>((q * k.transpose()) * scale);
  r.recon = r.attn * (source * p.W_V);
  r.projected_target = target * p.W_V;
  return r;
}

template <typename Real>
Real cm_distance(const CmParams<Real>& p, const Mat<Real>& target, const Mat<Real>& source) {
  const auto r = cm_reconstruct(p, target, source);
  return (r.projected_target - r.recon).rowwise().norm().sum();
}

template <typename Real>
void cm_distance_backward(const CmParams<Real>& p, const Mat<Real>& target, const Mat<Real>& source,
                          Real grad, Mat<Real>& d_target, Mat<Real>& d_source, CmParams<Real>& g) {
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(p.W_Q.cols()));
  const Mat<Real> q = target * p.W_Q;
  const Mat<Real> k = source * p.W_K;
  const Mat<Real> v = source * p.W_V;
  const Mat<Real> attn = detail::softmax_rows<Real>((q * k.transpose()) * scale);
  const Mat<Real> diff = target * p.W_V - attn * v;

  Mat<Real> d_proj = Mat<Real>::Zero(diff.rows(), diff.cols());
  for (Eigen::Index r = 0; r < diff.rows(); ++r) {
    const Real norm = diff.row(r).norm();
    if (norm > Real(0)) d_proj.row(r) = grad * diff.row(r) / norm;
  }
  const Mat<Real> d_recon = -d_proj;
  const Mat<Real> d_attn = d_recon * v.transpose();
  const Mat<Real> d_v = attn.transpose() * d_recon;
  const Mat<Real> d_scores = detail::softmax_rows_backward<Real>(attn, d_attn) * scale;
  const Mat<Real> d_q = d_scores * k;
  const Mat<Real> d_k = d_scores.transpose() * q;

  g.W_Q += target.transpose() * d_q;
  g.W_K += source.transpose() * d_k;
  g.W_V += source.transpose() * d_v + target.transpose() * d_proj;
  d_target += d_q * p.W_Q.transpose() + d_proj * p.W_V.transpose();
  d_source += d_k * p.W_K.transpose() + d_v * p.W_V.transpose();
}

template <typename Real>
Mat<Real> stack_prototype(const MatSeq<Real>& clips, std::size_t first, std::size_t count) {
  const auto t = clips[first].rows();
  Mat<Real> proto(t * static_cast<Eigen::Index>(count), clips[first].cols());
  for (std::size_t k = 0; k < count; ++k)
    proto.middleRows(static_cast<Eigen::Index>(k) * t, t) = clips[first + k];
  return proto;
}

// ---------------------------------------------------------------------------

namespace {

template <typename Real>
Eigen::Index nearest_row(const Mat<Real>& b, const RowVec<Real>& x, Real& dist) {
  Eigen::Index best = 0;
  Real best_d = std::numeric_limits<Real>::infinity();
  for (Eigen::Index y = 0; y < b.rows(); ++y) {
    const Real dd = (x - b.row(y)).squaredNorm();
    if (dd < best_d) {
      best_d = dd;
      best = y;
    }
  }
  dist = std::sqrt(best_d);
  return best;
}

}  // namespace

template <typename Real>
Real chamfer_directed(const Mat<Real>& a, const Mat<Real>& b) {
  if (a.rows() < 1 || b.rows() < 1 || a.cols() != b.cols())
    throw Error(ErrorCode::kShapeMismatch, "chamfer operands must be non-empty with equal width");
  Real sum = 0;
  for (Eigen::Index x = 0; x < a.rows(); ++x) {
    Real dist;
    nearest_row<Real>(b, a.row(x), dist);
    sum += dist;
  }
  return sum / static_cast<Real>(a.rows());
}

template <typename Real>
void chamfer_directed_backward(const Mat<Real>& a, const Mat<Real>& b, Real grad, Mat<Real>& d_a,
                               Mat<Real>& d_b) {
  const Real g = grad / static_cast<Real>(a.rows());
  for (Eigen::Index x = 0; x < a.rows(); ++x) {
    Real dist;
    const auto y = nearest_row<Real>(b, a.row(x), dist);
    if (dist > Real(0)) {
      const RowVec<Real> u = (a.row(x) - b.row(y)) * (g / dist);
      d_a.row(x) += u;
      d_b.row(y) -= u;
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

template <typename Real>
void check_views(const EncodedViews<Real>& views, int n_way, int k_shot) {
  if (views.size() != static_cast<std::size_t>(n_way * k_shot + 1))
    throw Error(ErrorCode::kEpisodeSizeMismatch, "views hold " + std::to_string(views.size()) +
                                                     " clips, expected N*K+1");
}

}  // namespace

template <typename Real>
RowVec<Real> instance_matching(const EncodedViews<Real>& views, int n_way, int k_shot) {
  check_views(views, n_way, k_shot);
  const auto& v = views.instance_view;
  const auto& query = v.back();
  RowVec<Real> d(n_way);
  for (int c = 0; c < n_way; ++c) {
    Real sum = 0;
    for (int k = 0; k < k_shot; ++k) sum += instance_distance<Real>(query, v[c * k_shot + k]);
    d(c) = sum / static_cast<Real>(k_shot);
  }
  return d;
}

template <typename Real>
void instance_matching_backward(const EncodedViews<Real>& views, int n_way, int k_shot,
                                const RowVec<Real>& d_scores, MatSeq<Real>& d_instance) {
  const auto& v = views.instance_view;
  const std::size_t qi = v.size() - 1;
  for (int c = 0; c < n_way; ++c)
    for (int k = 0; k < k_shot; ++k) {
      const std::size_t si = c * k_shot + k;
      instance_distance_backward<Real>(v[qi], v[si], d_scores(c) / static_cast<Real>(k_shot),
                                       d_instance[qi], d_instance[si]);
    }
}

template <typename Real>
RowVec<Real> category_matching(const CmParams<Real>& p, const EncodedViews<Real>& views, int n_way,
                               int k_shot) {
  check_views(views, n_way, k_shot);
  const auto& v = views.category_view;
  const auto& query = v.back();
  RowVec<Real> d(n_way);
  for (int c = 0; c < n_way; ++c) {
    const Mat<Real> proto = stack_prototype<Real>(v, static_cast<std::size_t>(c * k_shot), k_shot);
    d(c) = cm_distance<Real>(p, query, proto) + cm_distance<Real>(p, proto, query);
  }
  return d;
}

template <typename Real>
void category_matching_backward(const CmParams<Real>& p, const EncodedViews<Real>& views, int n_way,
                                int k_shot, const RowVec<Real>& d_scores, MatSeq<Real>& d_category,
                                CmParams<Real>& g) {
  const auto& v = views.category_view;
  const std::size_t qi = v.size() - 1;
  const auto t = v[qi].rows();
  for (int c = 0; c < n_way; ++c) {
    const std::size_t first = static_cast<std::size_t>(c * k_shot);
    const Mat<Real> proto = stack_prototype<Real>(v, first, k_shot);
    Mat<Real> d_proto = Mat<Real>::Zero(proto.rows(), proto.cols());
    cm_distance_backward<Real>(p, v[qi], proto, d_scores(c), d_category[qi], d_proto, g);
    cm_distance_backward<Real>(p, proto, v[qi], d_scores(c), d_proto, d_category[qi], g);
    for (int k = 0; k < k_shot; ++k) d_category[first + k] += d_proto.middleRows(k * t, t);
  }
}

template <typename Real>
RowVec<Real> task_matching(const EncodedViews<Real>& views, int n_way, int k_shot) {
  check_views(views, n_way, k_shot);
  const auto& v = views.task_view;
  const auto& query = v.back();
  RowVec<Real> d(n_way);
  for (int c = 0; c < n_way; ++c) {
    Real sum = 0;
    for (int k = 0; k < k_shot; ++k) sum += chamfer_bidirectional<Real>(v[c * k_shot + k], query);
    d(c) = sum / static_cast<Real>(k_shot);
  }
  return d;
}

template <typename Real>
void task_matching_backward(const EncodedViews<Real>& views, int n_way, int k_shot,
                            const RowVec<Real>& d_scores, MatSeq<Real>& d_task) {
  const auto& v = views.task_view;
  const std::size_t qi = v.size() - 1;
  for (int c = 0; c < n_way; ++c)
    for (int k = 0; k < k_shot; ++k) {
      const std::size_t si = c * k_shot + k;
      const Real g = d_scores(c) / static_cast<Real>(k_shot);
      chamfer_directed_backward<Real>(v[si], v[qi], g, d_task[si], d_task[qi]);
      chamfer_directed_backward<Real>(v[qi], v[si], g, d_task[qi], d_task[si]);
    }
}

#define M3NET_INSTANTIATE(Real)                                                                    \
  template Mat<Real> cosine_distance_matrix(const Mat<Real>&, const Mat<Real>&);                   \
  template DtwResult dtw_min_cost(const Mat<Real>&);                                               \
  template Real instance_distance(const Mat<Real>&, const Mat<Real>&);                             \
  template void instance_distance_backward(const Mat<Real>&, const Mat<Real>&, Real, Mat<Real>&,   \
                                           Mat<Real>&);                                            \
  template CmReconstruction<Real> cm_reconstruct(const CmParams<Real>&, const Mat<Real>&,          \
                                                 const Mat<Real>&);                                \
  template Real cm_distance(const CmParams<Real>&, const Mat<Real>&, const Mat<Real>&);            \
  template void cm_distance_backward(const CmParams<Real>&, const Mat<Real>&, const Mat<Real>&,    \
                                     Real, Mat<Real>&, Mat<Real>&, CmParams<Real>&);               \
  template Mat<Real> stack_prototype(const MatSeq<Real>&, std::size_t, std::size_t);               \
  template Real chamfer_directed(const Mat<Real>&, const Mat<Real>&);                              \
  template void chamfer_directed_backward(const Mat<Real>&, const Mat<Real>&, Real, Mat<Real>&,    \
                                          Mat<Real>&);                                             \
  template RowVec<Real> instance_matching(const EncodedViews<Real>&, int, int);                    \
  template RowVec<Real> category_matching(const CmParams<Real>&, const EncodedViews<Real>&, int,   \
                                          int);                                                    \
  template RowVec<Real> task_matching(const EncodedViews<Real>&, int, int);                        \
  template void instance_matching_backward(const EncodedViews<Real>&, int, int,                    \
                                           const RowVec<Real>&, MatSeq<Real>&);                    \
  template void category_matching_backward(const CmParams<Real>&, const EncodedViews<Real>&, int,  \
                                           int, const RowVec<Real>&, MatSeq<Real>&,                \
                                           CmParams<Real>&);                                       \
  template void task_matching_backward(const EncodedViews<Real>&, int, int, const RowVec<Real>&,   \
                                       MatSeq<Real>&);

M3NET_INSTANTIATE(float)
M3NET_INSTANTIATE(double)

}  // namespace m3net
