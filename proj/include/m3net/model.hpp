#pragma once

#include "m3net/encoding.hpp"
#include "m3net/matching.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace m3net {

template <typename Real>
struct ModelParams {
  StemParams<Real> stem;
  IfceParams<Real> ifce;
  IvceParams<Real> ivce;
  IeceParams<Real> iece;
  CmParams<Real> cm;
};

/// Visits every learnable tensor as f(name, rank, matrix). Names are the
/// dotted checkpoint paths; rank is 0 for scalars, 1 for vectors (stored 1 x n).
template <typename Params, typename F>
void visit_params(Params& p, F&& f) {
  f("stem.W", 2, p.stem.W);
  f("stem.b", 1, p.stem.b);
  f("ifce.W_Q", 2, p.ifce.W_Q);
  f("ifce.W_K", 2, p.ifce.W_K);
  f("ifce.W_V", 2, p.ifce.W_V);
  f("ifce.alpha", 0, p.ifce.alpha);
  f("ifce.P", 2, p.ifce.P);
  f("ifce.mlp.W1", 2, p.ifce.W1);
  f("ifce.mlp.b1", 1, p.ifce.b1);
  f("ifce.mlp.W2", 2, p.ifce.W2);
  f("ifce.mlp.b2", 1, p.ifce.b2);
  f("ifce.mlp.W3", 2, p.ifce.W3);
  f("ifce.mlp.b3", 1, p.ifce.b3);
  f("ivce.W_t1", 2, p.ivce.W_t1);
  f("ivce.W_t2", 2, p.ivce.W_t2);
  f("ivce.W_c1", 2, p.ivce.W_c1);
  f("ivce.W_c2", 2, p.ivce.W_c2);
  f("ivce.P", 2, p.ivce.P);
  f("iece.W_v1", 2, p.iece.W_v1);
  f("iece.W_v2", 2, p.iece.W_v2);
  f("iece.W_e1", 2, p.iece.W_e1);
  f("iece.W_e2", 2, p.iece.W_e2);
  f("iece.W_ctx", 2, p.iece.W_ctx);
  f("iece.b_ctx", 1, p.iece.b_ctx);
  f("cm.W_Q", 2, p.cm.W_Q);
  f("cm.W_K", 2, p.cm.W_K);
  f("cm.W_V", 2, p.cm.W_V);
}

struct ParamShape {
  std::string name;
  int rank = 2;
  long rows = 0, cols = 0;
};

/// Canonical names and shapes for the given dimensions, in checkpoint order.
std::vector<ParamShape> param_shapes(const ModelDims& dims);

/// Sum of the shape products; the closed-form parameter count.
std::size_t param_count(const ModelDims& dims);

/// Default initialization: fan-in uniform weights, N(0, 0.02) positional
/// embeddings, alpha = 1, zero biases.
template <typename Real>
ModelParams<Real> init_params(const ModelDims& dims, std::uint64_t seed);

template <typename Real>
ModelParams<Real> zero_params(const ModelDims& dims);

template <typename Real>
std::vector<Mat<Real>> flatten_params(const ModelParams<Real>& p) {
  std::vector<Mat<Real>> out;
  visit_params(p, [&](const char*, int, const Mat<Real>& m) { out.push_back(m); });
  return out;
}

template <typename Real>
ModelDims infer_dims(const ModelParams<Real>& p) {
  ModelDims d;
  d.c = static_cast<int>(p.stem.W.rows());
  d.d = static_cast<int>(p.stem.W.cols());
  d.d_k = static_cast<int>(p.cm.W_Q.cols());
  d.d_mlp = static_cast<int>(p.ifce.W1.cols());
  int n = 0;
  while ((n + 1) * (n + 1) <= p.ifce.P.rows()) ++n;
  d.n = n;
  d.t = static_cast<int>(p.ivce.W_t1.rows());
  d.l = static_cast<int>(p.iece.W_v1.rows());
  return d;
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out = zero_params<To>(infer_dims(p));
  auto src = flatten_params(p);
  std::size_t i = 0;
  visit_params(out, [&](const char*, int, Mat<To>& m) { m = src[i++].template cast<To>(); });
  return out;
}

/// Throws ShapeMismatch naming the first tensor that disagrees with `dims`.
template <typename Real>
void validate_params(const ModelParams<Real>& p, const ModelDims& dims);

/// Which encoders run; a disabled encoder is the identity map.
struct EncoderSwitches {
  bool ifce = true;
  bool ivce = true;
  bool iece = true;

  bool operator==(const EncoderSwitches&) const = default;
};

/// Stem, pooling, IFCE and squeeze for one clip: the (t x d) instance view.
/// Pooling is applied to the raw frames before the affine stem, which equals
/// stem-then-pool because both maps are linear in the pixels.
template <typename Real>
Mat<Real> encode_instance(const ModelParams<Real>& p, const VideoClip& clip, int n,
                          const EncoderSwitches& sw = {});

/// All three views for the N*K support clips plus query `query_index`.
template <typename Real>
EncodedViews<Real> encode_episode(const ModelParams<Real>& p, const Episode& episode,
                                  std::size_t query_index, const EncoderSwitches& sw = {});

// Checkpoint: "M3CK", u32 version (1), u32 parameter count, then per tensor
// u16 name length, UTF-8 name, u8 rank, u32 dims, float32 data row-major.
inline constexpr char kCheckpointMagic[4] = {'M', '3', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ModelParams<float>& p);
ModelParams<float> decode_checkpoint(std::vector<std::uint8_t> bytes);

void save_checkpoint(const ModelParams<float>& p, const std::string& path);
ModelParams<float> load_checkpoint(const std::string& path);
/// Loads and validates every tensor shape against `dims`.
ModelParams<float> load_checkpoint(const std::string& path, const ModelDims& dims);

}  // namespace m3net
