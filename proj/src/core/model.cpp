#include "m3net/model.hpp"

#include "m3net/binary_io.hpp"
#include "m3net/errors.hpp"
#include "m3net/rng.hpp"

#include <cmath>
#include <map>

namespace m3net {

std::vector<ParamShape> param_shapes(const ModelDims& d) {
  const long n2 = static_cast<long>(d.n) * d.n;
  return {
      {"stem.W", 2, d.c, d.d},        {"stem.b", 1, 1, d.d},
      {"ifce.W_Q", 2, d.d, d.d},      {"ifce.W_K", 2, d.d, d.d},
      {"ifce.W_V", 2, d.d, d.d},      {"ifce.alpha", 0, 1, 1},
      {"ifce.P", 2, n2, d.d},         {"ifce.mlp.W1", 2, d.d, d.d_mlp},
      {"ifce.mlp.b1", 1, 1, d.d_mlp}, {"ifce.mlp.W2", 2, d.d_mlp, d.d_mlp},
      {"ifce.mlp.b2", 1, 1, d.d_mlp}, {"ifce.mlp.W3", 2, d.d_mlp, d.d},
      {"ifce.mlp.b3", 1, 1, d.d},     {"ivce.W_t1", 2, d.t, d.t},
      {"ivce.W_t2", 2, d.t, d.t},     {"ivce.W_c1", 2, d.d, d.d},
      {"ivce.W_c2", 2, d.d, d.d},     {"ivce.P", 2, d.t, d.d},
      {"iece.W_v1", 2, d.l, d.l},     {"iece.W_v2", 2, d.l, d.l},
      {"iece.W_e1", 2, d.d, d.d},     {"iece.W_e2", 2, d.d, d.d},
      {"iece.W_ctx", 2, 2L * d.d, d.d}, {"iece.b_ctx", 1, 1, d.d},
      {"cm.W_Q", 2, d.d, d.d_k},      {"cm.W_K", 2, d.d, d.d_k},
      {"cm.W_V", 2, d.d, d.d_k},
  };
}

std::size_t param_count(const ModelDims& dims) {
  std::size_t total = 0;
  for (const auto& s : param_shapes(dims)) total += static_cast<std::size_t>(s.rows * s.cols);
  return total;
}

template <typename Real>
ModelParams<Real> zero_params(const ModelDims& dims) {
  const auto shapes = param_shapes(dims);
  ModelParams<Real> p;
  std::size_t i = 0;
  visit_params(p, [&](const char*, int, Mat<Real>& m) {
    m = Mat<Real>::Zero(shapes[i].rows, shapes[i].cols);
    ++i;
  });
  return p;
}

template <typename Real>
ModelParams<Real> init_params(const ModelDims& dims, std::uint64_t seed) {
  if (dims.c < 1 || dims.d < 2 || dims.d_k < 1 || dims.d_mlp < 1 || dims.n < 1 || dims.t < 1 ||
      dims.l < 2)
    throw Error(ErrorCode::kInvalidArgument, "invalid model dimensions");
  Rng rng(seed);
  std::normal_distribution<double> pos(0.0, 0.02);
  ModelParams<Real> p = zero_params<Real>(dims);
  visit_params(p, [&](const char* name, int rank, Mat<Real>& m) {
    const std::string s(name);
    if (s == "ifce.alpha") {
      m(0, 0) = Real(1);
    } else if (s == "ifce.P" || s == "ivce.P") {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(pos(rng));
    } else if (rank == 2) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(m.rows()));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Real>(u(rng));
    }
  });
  return p;
}

template <typename Real>
void validate_params(const ModelParams<Real>& p, const ModelDims& dims) {
  const auto shapes = param_shapes(dims);
  std::size_t i = 0;
  visit_params(p, [&](const char* name, int, const Mat<Real>& m) {
    const auto& s = shapes[i++];
    if (m.rows() != s.rows || m.cols() != s.cols)
      throw Error(ErrorCode::kShapeMismatch,
                  std::string(name) + " is " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()) + ", config expects " + std::to_string(s.rows) +
                      "x" + std::to_string(s.cols));
  });
}

// ---------------------------------------------------------------------------

template <typename Real>
Mat<Real> encode_instance(const ModelParams<Real>& p, const VideoClip& clip, int n,
                          const EncoderSwitches& sw) {
  if (p.stem.W.rows() != clip.c)
    throw Error(ErrorCode::kShapeMismatch, "clip channels do not match the stem");
  const Mat<Real> pool = pool_matrix<Real>(clip.h, clip.w, n);
  MatSeq<Real> frames;
  frames.reserve(clip.t);
  for (int tau = 0; tau < clip.t; ++tau) {
    Mat<Real> f = (pool * clip.frame_matrix<Real>(tau)) * p.stem.W;
    f.rowwise() += p.stem.b.row(0);
    frames.push_back(sw.ifce ? ifce_forward(p.ifce, f) : f);
  }
  return spatial_squeeze(frames);
}

template <typename Real>
EncodedViews<Real> encode_episode(const ModelParams<Real>& p, const Episode& episode,
                                  std::size_t query_index, const EncoderSwitches& sw) {
  if (query_index >= episode.query.size())
    throw Error(ErrorCode::kInvalidArgument, "query index out of range");
  const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(p.ifce.P.rows()))));
  EncodedViews<Real> v;
  for (const auto& clip : episode.support) v.instance_view.push_back(encode_instance(p, clip, n, sw));
  v.instance_view.push_back(encode_instance(p, episode.query[query_index], n, sw));
  for (const auto& inst : v.instance_view)
    v.category_view.push_back(sw.ivce ? ivce_forward(p.ivce, inst) : inst);
  v.task_view = sw.iece ? iece_forward(p.iece, v.instance_view) : v.instance_view;
  return v;
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_checkpoint(const ModelParams<float>& p) {
  io::Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.uint<std::uint32_t>(kCheckpointVersion);
  std::uint32_t count = 0;
  visit_params(p, [&](const char*, int, const Mat<float>&) { ++count; });
  w.uint<std::uint32_t>(count);
  visit_params(p, [&](const char* name, int rank, const Mat<float>& m) {
    const std::string s(name);
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    w.bytes(s.data(), s.size());
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(rank));
    if (rank == 1) w.uint<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    if (rank == 2) {
      w.uint<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
      w.uint<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    }
    for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(m.data()[i]);
  });
  return w.data();
}

ModelParams<float> decode_checkpoint(std::vector<std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw Error(ErrorCode::kBadMagic, "not a checkpoint");
  io::Reader r(std::move(bytes));
  r.str(4, "magic");
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::kUnsupportedVersion, "checkpoint version " + std::to_string(version));
  const auto count = r.uint<std::uint32_t>("parameter count");
  std::map<std::string, std::pair<int, Mat<float>>> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.uint<std::uint16_t>("name length");
    std::string name = r.str(len, "name");
    const int rank = r.uint<std::uint8_t>("rank");
    if (rank > 2) throw Error(ErrorCode::kShapeMismatch, name + " has rank " + std::to_string(rank));
    std::uint32_t rows = 1, cols = 1;
    if (rank == 1) cols = r.uint<std::uint32_t>("dim");
    if (rank == 2) {
      rows = r.uint<std::uint32_t>("dim");
      cols = r.uint<std::uint32_t>("dim");
    }
    r.need(static_cast<std::size_t>(rows) * cols * 4, "tensor data");
    Mat<float> m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.f32("tensor data");
    tensors[name] = {rank, std::move(m)};
  }
  if (r.remaining() != 0)
    throw Error(ErrorCode::kShapeMismatch, std::to_string(r.remaining()) + " trailing bytes");

  ModelParams<float> p;
  visit_params(p, [&](const char* name, int rank, Mat<float>& m) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw Error(ErrorCode::kShapeMismatch, std::string("missing ") + name);
    if (it->second.first != rank)
      throw Error(ErrorCode::kShapeMismatch, std::string("wrong rank for ") + name);
    m = std::move(it->second.second);
    tensors.erase(it);
  });
  if (!tensors.empty())
    throw Error(ErrorCode::kShapeMismatch, "unknown tensor " + tensors.begin()->first);
  validate_params(p, infer_dims(p));
  return p;
}

void save_checkpoint(const ModelParams<float>& p, const std::string& path) {
  io::write_file(path, encode_checkpoint(p));
}

ModelParams<float> load_checkpoint(const std::string& path) {
  return decode_checkpoint(io::read_file(path));
}

ModelParams<float> load_checkpoint(const std::string& path, const ModelDims& dims) {
  auto p = load_checkpoint(path);
  validate_params(p, dims);
  return p;
}

#define M3NET_INSTANTIATE(Real)                                                                   \
  template ModelParams<Real> zero_params<Real>(const ModelDims&);                                 \
  template ModelParams<Real> init_params<Real>(const ModelDims&, std::uint64_t);                  \
  template void validate_params(const ModelParams<Real>&, const ModelDims&);                      \
  template Mat<Real> encode_instance(const ModelParams<Real>&, const VideoClip&, int,             \
                                     const EncoderSwitches&);                                     \
  template EncodedViews<Real> encode_episode(const ModelParams<Real>&, const Episode&,            \
                                             std::size_t, const EncoderSwitches&);

M3NET_INSTANTIATE(float)
M3NET_INSTANTIATE(double)

}  // namespace m3net
