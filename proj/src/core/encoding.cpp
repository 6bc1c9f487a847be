#include "m3net/encoding.hpp"

#include "m3net/errors.hpp"
#include "ops.hpp"

#include <cmath>

namespace m3net {

using detail::expect_shape;

template <typename Real>
MatSeq<Real> stem_forward(const StemParams<Real>& p, const VideoClip& clip) {
  if (p.W.rows() != clip.c)
    throw Error(ErrorCode::kShapeMismatch, "stem expects " + std::to_string(p.W.rows()) +
                                               " channels, clip has " + std::to_string(clip.c));
  MatSeq<Real> out;
  out.reserve(clip.t);
  for (int tau = 0; tau < clip.t; ++tau) {
    Mat<Real> f = clip.frame_matrix<Real>(tau) * p.W;
    f.rowwise() += p.b.row(0);
    out.push_back(std::move(f));
  }
  return out;
}

template <typename Real>
Mat<Real> pool_matrix(int h, int w, int n) {
  if (n < 1 || n > h || n > w)
    throw Error(ErrorCode::kBadGrid, "grid " + std::to_string(n) + " does not fit " +
                                         std::to_string(h) + "x" + std::to_string(w));
  Mat<Real> pool = Mat<Real>::Zero(n * n, h * w);
  for (int i = 0; i < n; ++i) {
    const int y0 = i * h / n, y1 = (i + 1) * h / n;
    for (int j = 0; j < n; ++j) {
      const int x0 = j * w / n, x1 = (j + 1) * w / n;
      const Real inv = Real(1) / static_cast<Real>((y1 - y0) * (x1 - x0));
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) pool(i * n + j, y * w + x) = inv;
    }
  }
  return pool;
}

template <typename Real>
Mat<Real> adaptive_pool_spatial(const Mat<Real>& feat, int h, int w, int n) {
  if (feat.rows() != static_cast<Eigen::Index>(h) * w)
    throw Error(ErrorCode::kShapeMismatch, "feature map rows != h*w");
  return pool_matrix<Real>(h, w, n) * feat;
}

template <typename Real>
Mat<Real> spatial_squeeze(const MatSeq<Real>& frames) {
  if (frames.empty()) throw Error(ErrorCode::kShapeMismatch, "no frames to squeeze");
  Mat<Real> out(static_cast<Eigen::Index>(frames.size()), frames.front().cols());
  for (std::size_t tau = 0; tau < frames.size(); ++tau)
    out.row(static_cast<Eigen::Index>(tau)) = frames[tau].colwise().mean();
  return out;
}

// ---------------------------------------------------------------------------

template <typename Real>
Mat<Real> ifce_forward(const IfceParams<Real>& p, const Mat<Real>& patches, IfceCache<Real>* cache) {
  const auto d = p.W_Q.rows();
  expect_shape(patches.rows(), patches.cols(), p.P.rows(), d, "ifce input");
  IfceCache<Real> local;
  auto& c = cache ? *cache : local;
  c.Z = patches + p.P;
  c.Q = c.Z * p.W_Q;
  c.K = c.Z * p.W_K;
  c.V = c.Z * p.W_V;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
  c.attn = detail::softmax_rows<Real>((c.Q * c.K.transpose()) * scale);
  c.AV = c.attn * c.V;
  c.Zh = p.alpha(0, 0) * c.AV + c.Z;
  c.U1 = c.Zh * p.W1;
  c.U1.rowwise() += p.b1.row(0);
  c.H1 = detail::relu(c.U1);
  c.U2 = c.H1 * p.W2;
  c.U2.rowwise() += p.b2.row(0);
  c.H2 = detail::relu(c.U2);
  Mat<Real> out = c.H2 * p.W3;
  out.rowwise() += p.b3.row(0);
  out += c.Zh;
  return out;
}

template <typename Real>
Mat<Real> ifce_backward(const IfceParams<Real>& p, const IfceCache<Real>& c, const Mat<Real>& d_out,
                        IfceParams<Real>& g) {
  const auto d = p.W_Q.rows();
  // MLP branch
  g.W3 += c.H2.transpose() * d_out;
  g.b3 += d_out.colwise().sum();
  const Mat<Real> dU2 = detail::relu_backward<Real>(c.U2, d_out * p.W3.transpose());
  g.W2 += c.H1.transpose() * dU2;
  g.b2 += dU2.colwise().sum();
  const Mat<Real> dU1 = detail::relu_backward<Real>(c.U1, dU2 * p.W2.transpose());
  g.W1 += c.Zh.transpose() * dU1;
  g.b1 += dU1.colwise().sum();
  const Mat<Real> dZh = d_out + dU1 * p.W1.transpose();

  // Attention branch
  g.alpha(0, 0) += (dZh.array() * c.AV.array()).sum();
  const Mat<Real> dAV = p.alpha(0, 0) * dZh;
  const Mat<Real> dA = dAV * c.V.transpose();
  const Mat<Real> dV = c.attn.transpose() * dAV;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(d));
  const Mat<Real> dS = detail::softmax_rows_backward<Real>(c.attn, dA) * scale;
  const Mat<Real> dQ = dS * c.K;
  const Mat<Real> dK = dS.transpose() * c.Q;
  g.W_Q += c.Z.transpose() * dQ;
  g.W_K += c.Z.transpose() * dK;
  g.W_V += c.Z.transpose() * dV;
  Mat<Real> dZ = dZh + dQ * p.W_Q.transpose() + dK * p.W_K.transpose() + dV * p.W_V.transpose();
  g.P += dZ;
  return dZ;
}

// ---------------------------------------------------------------------------

template <typename Real>
Mat<Real> mixing_forward(const Mat<Real>& W_tok1, const Mat<Real>& W_tok2, const Mat<Real>& W_ch1,
                         const Mat<Real>& W_ch2, const Mat<Real>& X, MixCache<Real>* cache) {
  MixCache<Real> local;
  auto& c = cache ? *cache : local;
  c.Xt = X.transpose();
  c.U1 = c.Xt * W_tok1;
  c.R1 = detail::relu(c.U1);
  const Mat<Real> Xh = c.R1 * W_tok2 + c.Xt;
  c.Y = Xh.transpose();
  c.U2 = c.Y * W_ch1;
  c.R2 = detail::relu(c.U2);
  return c.R2 * W_ch2 + c.Y;
}

template <typename Real>
Mat<Real> mixing_backward(const Mat<Real>& W_tok1, const Mat<Real>& W_tok2, const Mat<Real>& W_ch1,
                          const Mat<Real>& W_ch2, const MixCache<Real>& c, const Mat<Real>& d_out,
                          Mat<Real>& g_tok1, Mat<Real>& g_tok2, Mat<Real>& g_ch1, Mat<Real>& g_ch2) {
  g_ch2 += c.R2.transpose() * d_out;
  const Mat<Real> dU2 = detail::relu_backward<Real>(c.U2, d_out * W_ch2.transpose());
  g_ch1 += c.Y.transpose() * dU2;
  const Mat<Real> dXh = (d_out + dU2 * W_ch1.transpose()).transpose();
  g_tok2 += c.R1.transpose() * dXh;
  const Mat<Real> dU1 = detail::relu_backward<Real>(c.U1, dXh * W_tok2.transpose());
  g_tok1 += c.Xt.transpose() * dU1;
  return (dXh + dU1 * W_tok1.transpose()).transpose();
}

template <typename Real>
Mat<Real> ivce_forward(const IvceParams<Real>& p, const Mat<Real>& video, MixCache<Real>* cache) {
  expect_shape(video.rows(), video.cols(), p.P.rows(), p.P.cols(), "ivce input");
  return mixing_forward<Real>(p.W_t1, p.W_t2, p.W_c1, p.W_c2, video + p.P, cache);
}

template <typename Real>
Mat<Real> ivce_backward(const IvceParams<Real>& p, const MixCache<Real>& cache, const Mat<Real>& d_out,
                        IvceParams<Real>& g) {
  Mat<Real> dv = mixing_backward<Real>(p.W_t1, p.W_t2, p.W_c1, p.W_c2, cache, d_out, g.W_t1, g.W_t2,
                                       g.W_c1, g.W_c2);
  g.P += dv;
  return dv;
}

// ---------------------------------------------------------------------------

template <typename Real>
MatSeq<Real> iece_forward(const IeceParams<Real>& p, const MatSeq<Real>& frames, IeceCache<Real>* cache) {
  const auto l = p.W_v1.rows();
  if (static_cast<Eigen::Index>(frames.size()) != l)
    throw Error(ErrorCode::kEpisodeSizeMismatch, "IECE built for " + std::to_string(l) +
                                                     " clips, got " + std::to_string(frames.size()));
  const auto d = p.W_e1.rows();
  IeceCache<Real> local;
  auto& c = cache ? *cache : local;
  c.video_means.resize(l, d);
  for (Eigen::Index i = 0; i < l; ++i) {
    expect_shape(frames[i].rows(), frames[i].cols(), frames[0].rows(), d, "iece clip");
    c.video_means.row(i) = frames[i].colwise().mean();
  }
  c.G = mixing_forward<Real>(p.W_v1, p.W_v2, p.W_e1, p.W_e2, c.video_means, &c.mix);

  const auto top = p.W_ctx.topRows(d);
  const auto bottom = p.W_ctx.bottomRows(d);
  MatSeq<Real> out;
  out.reserve(frames.size());
  for (Eigen::Index i = 0; i < l; ++i) {
    const Eigen::Matrix<Real, 1, Eigen::Dynamic> shift = c.G.row(i) * bottom + p.b_ctx.row(0);
    Mat<Real> o = frames[i] * top + frames[i];
    o.rowwise() += shift;
    out.push_back(std::move(o));
  }
  return out;
}

template <typename Real>
MatSeq<Real> iece_backward(const IeceParams<Real>& p, const MatSeq<Real>& frames,
                           const IeceCache<Real>& c, const MatSeq<Real>& d_out, IeceParams<Real>& g) {
  const auto l = p.W_v1.rows();
  const auto d = p.W_e1.rows();
  const auto top = p.W_ctx.topRows(d);
  const auto bottom = p.W_ctx.bottomRows(d);
  MatSeq<Real> d_in(frames.size());
  Mat<Real> dG(l, d);
  for (Eigen::Index i = 0; i < l; ++i) {
    const Eigen::Matrix<Real, 1, Eigen::Dynamic> s = d_out[i].colwise().sum();
    g.W_ctx.topRows(d) += frames[i].transpose() * d_out[i];
    g.W_ctx.bottomRows(d) += c.G.row(i).transpose() * s;
    g.b_ctx.row(0) += s;
    dG.row(i) = s * bottom.transpose();
    d_in[i] = d_out[i] + d_out[i] * top.transpose();
  }
  const Mat<Real> d_means =
      mixing_backward<Real>(p.W_v1, p.W_v2, p.W_e1, p.W_e2, c.mix, dG, g.W_v1, g.W_v2, g.W_e1, g.W_e2);
  for (Eigen::Index i = 0; i < l; ++i) {
    const Real inv_t = Real(1) / static_cast<Real>(frames[i].rows());
    d_in[i].rowwise() += d_means.row(i) * inv_t;
  }
  return d_in;
}

#define M3NET_INSTANTIATE(Real)                                                                   \
  template MatSeq<Real> stem_forward(const StemParams<Real>&, const VideoClip&);                  \
  template Mat<Real> pool_matrix<Real>(int, int, int);                                            \
  template Mat<Real> adaptive_pool_spatial(const Mat<Real>&, int, int, int);                      \
  template Mat<Real> spatial_squeeze(const MatSeq<Real>&);                                        \
  template Mat<Real> ifce_forward(const IfceParams<Real>&, const Mat<Real>&, IfceCache<Real>*);   \
  template Mat<Real> ifce_backward(const IfceParams<Real>&, const IfceCache<Real>&,               \
                                   const Mat<Real>&, IfceParams<Real>&);                          \
  template Mat<Real> mixing_forward(const Mat<Real>&, const Mat<Real>&, const Mat<Real>&,         \
                                    const Mat<Real>&, const Mat<Real>&, MixCache<Real>*);          \
  template Mat<Real> mixing_backward(const Mat<Real>&, const Mat<Real>&, const Mat<Real>&,        \
                                     const Mat<Real>&, const MixCache<Real>&, const Mat<Real>&,   \
                                     Mat<Real>&, Mat<Real>&, Mat<Real>&, Mat<Real>&);             \
  template Mat<Real> ivce_forward(const IvceParams<Real>&, const Mat<Real>&, MixCache<Real>*);    \
  template Mat<Real> ivce_backward(const IvceParams<Real>&, const MixCache<Real>&,                \
                                   const Mat<Real>&, IvceParams<Real>&);                          \
  template MatSeq<Real> iece_forward(const IeceParams<Real>&, const MatSeq<Real>&,                \
                                     IeceCache<Real>*);                                           \
  template MatSeq<Real> iece_backward(const IeceParams<Real>&, const MatSeq<Real>&,               \
                                      const IeceCache<Real>&, const MatSeq<Real>&,                \
                                      IeceParams<Real>&);

M3NET_INSTANTIATE(float)
M3NET_INSTANTIATE(double)

}  // namespace m3net
