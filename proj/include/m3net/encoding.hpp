#pragma once

#include "m3net/episode.hpp"
#include "m3net/tensor.hpp"

namespace m3net {

/// Shape parameters shared by every learnable block.
struct ModelDims {
  int c = 16;      // input channels
  int d = 32;      // embedding width
  int d_k = 32;    // C-M projection width
  int d_mlp = 64;  // IFCE MLP hidden width
  int n = 4;       // patch grid side
  int t = 8;       // frames per clip
  int l = 6;       // clips per IECE context (N*K + 1)

  bool operator==(const ModelDims&) const = default;
};

/// Per-position linear map standing in for the frame backbone.
template <typename Real>
struct StemParams {
  Mat<Real> W;  // c x d
  Mat<Real> b;  // 1 x d
};

/// Patch-mixing block: single-head self-attention over the n*n pooled
/// patches with a learned residual gate, then a three-layer MLP.
template <typename Real>
struct IfceParams {
  Mat<Real> W_Q, W_K, W_V;  // d x d
  Mat<Real> alpha;          // 1 x 1
  Mat<Real> P;              // n^2 x d
  Mat<Real> W1, b1;         // d x d_mlp, 1 x d_mlp
  Mat<Real> W2, b2;         // d_mlp x d_mlp, 1 x d_mlp
  Mat<Real> W3, b3;         // d_mlp x d, 1 x d
};

/// Frame-mixing block: token perception over t frames, channel perception over d.
template <typename Real>
struct IvceParams {
  Mat<Real> W_t1, W_t2;  // t x t
  Mat<Real> W_c1, W_c2;  // d x d
  Mat<Real> P;           // t x d
};

/// Video-mixing block over the l clips of an episode context plus the 1x1
/// contextualization map applied to every frame.
template <typename Real>
struct IeceParams {
  Mat<Real> W_v1, W_v2;  // l x l
  Mat<Real> W_e1, W_e2;  // d x d
  Mat<Real> W_ctx;       // 2d x d
  Mat<Real> b_ctx;       // 1 x d
};

// ---------------------------------------------------------------------------
// Stem and pooling

/// stem output per frame, each (h*w x d).
template <typename Real>
MatSeq<Real> stem_forward(const StemParams<Real>& p, const VideoClip& clip);

/// Averaging operator (n^2 x h*w) for the adaptive pooling bins.
template <typename Real>
Mat<Real> pool_matrix(int h, int w, int n);

/// feat is (h*w x d), row-major over (y, x). Returns (n^2 x d).
template <typename Real>
Mat<Real> adaptive_pool_spatial(const Mat<Real>& feat, int h, int w, int n);

/// Mean over the patch axis of each frame: t frames of (p x d) -> (t x d).
template <typename Real>
Mat<Real> spatial_squeeze(const MatSeq<Real>& frames);

// ---------------------------------------------------------------------------
// IFCE

template <typename Real>
struct IfceCache {
  Mat<Real> Z, Q, K, V, attn, AV, Zh, U1, H1, U2, H2;
};

template <typename Real>
Mat<Real> ifce_forward(const IfceParams<Real>& p, const Mat<Real>& patches,
                       IfceCache<Real>* cache = nullptr);

/// Accumulates parameter gradients into `g`, returns d(patches).
template <typename Real>
Mat<Real> ifce_backward(const IfceParams<Real>& p, const IfceCache<Real>& cache,
                        const Mat<Real>& d_out, IfceParams<Real>& g);

// ---------------------------------------------------------------------------
// Token/channel mixing shared by IVCE and IECE

template <typename Real>
struct MixCache {
  Mat<Real> Xt, U1, R1, Y, U2, R2;
};

/// X (tokens x channels): Xh = ReLU(X^T W_tok1) W_tok2 + X^T, then
/// out = ReLU(Xh^T W_ch1) W_ch2 + Xh^T.
template <typename Real>
Mat<Real> mixing_forward(const Mat<Real>& W_tok1, const Mat<Real>& W_tok2, const Mat<Real>& W_ch1,
                         const Mat<Real>& W_ch2, const Mat<Real>& X, MixCache<Real>* cache);

template <typename Real>
Mat<Real> mixing_backward(const Mat<Real>& W_tok1, const Mat<Real>& W_tok2, const Mat<Real>& W_ch1,
                          const Mat<Real>& W_ch2, const MixCache<Real>& cache, const Mat<Real>& d_out,
                          Mat<Real>& g_tok1, Mat<Real>& g_tok2, Mat<Real>& g_ch1, Mat<Real>& g_ch2);

// ---------------------------------------------------------------------------
// IVCE

template <typename Real>
Mat<Real> ivce_forward(const IvceParams<Real>& p, const Mat<Real>& video,
                       MixCache<Real>* cache = nullptr);

template <typename Real>
Mat<Real> ivce_backward(const IvceParams<Real>& p, const MixCache<Real>& cache,
                        const Mat<Real>& d_out, IvceParams<Real>& g);

// ---------------------------------------------------------------------------
// IECE

template <typename Real>
struct IeceCache {
  Mat<Real> video_means;  // l x d
  MixCache<Real> mix;
  Mat<Real> G;  // l x d
};

/// episode_frames: l clips of (t x d). Throws EpisodeSizeMismatch when l
/// differs from the parameter shapes.
template <typename Real>
MatSeq<Real> iece_forward(const IeceParams<Real>& p, const MatSeq<Real>& episode_frames,
                          IeceCache<Real>* cache = nullptr);

template <typename Real>
MatSeq<Real> iece_backward(const IeceParams<Real>& p, const MatSeq<Real>& episode_frames,
                           const IeceCache<Real>& cache, const MatSeq<Real>& d_out,
                           IeceParams<Real>& g);

/// Per-clip enriched embeddings for one query-centred episode context. Clip
/// i < N*K is support i (grouped by class), the last clip is the query.
template <typename Real>
struct EncodedViews {
  MatSeq<Real> instance_view;  // after IFCE + spatial squeeze
  MatSeq<Real> category_view;  // instance view through IVCE
  MatSeq<Real> task_view;      // instance views contextualized by IECE

  std::size_t size() const { return instance_view.size(); }
};

}  // namespace m3net
