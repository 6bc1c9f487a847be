#include "m3net/binary_io.hpp"
#include "m3net/model.hpp"

#include "test_util.hpp"

#include <cstring>
#include <filesystem>

using namespace m3net;
using m3test::error_of;

namespace {

ModelDims small_dims() {
  ModelDims d;
  d.c = 3;
  d.d = 6;
  d.d_k = 4;
  d.d_mlp = 10;
  d.n = 2;
  d.t = 3;
  d.l = 5;
  return d;
}

const std::vector<std::string> kCanonicalNames = {
    "stem.W",      "stem.b",      "ifce.W_Q",    "ifce.W_K",    "ifce.W_V",    "ifce.alpha", "ifce.P",
    "ifce.mlp.W1", "ifce.mlp.b1", "ifce.mlp.W2", "ifce.mlp.b2", "ifce.mlp.W3", "ifce.mlp.b3", "ivce.W_t1",
    "ivce.W_t2",   "ivce.W_c1",   "ivce.W_c2",   "ivce.P",      "iece.W_v1",   "iece.W_v2",  "iece.W_e1",
    "iece.W_e2",   "iece.W_ctx",  "iece.b_ctx",  "cm.W_Q",      "cm.W_K",      "cm.W_V"};

std::string tmp(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

}  // namespace

TEST(Params, CanonicalNamesAndClosedFormCount) {
  const auto dims = small_dims();
  std::vector<std::string> names;
  for (const auto& s : param_shapes(dims)) names.push_back(s.name);
  EXPECT_EQ(names, kCanonicalNames);

  const std::size_t c = 3, d = 6, dk = 4, dm = 10, n = 2, t = 3, l = 5;
  const std::size_t expected = c * d + d                              // stem
                               + 3 * d * d + 1 + n * n * d            // attention, gate, positions
                               + d * dm + dm + dm * dm + dm + dm * d + d  // mlp
                               + 2 * t * t + 2 * d * d + t * d        // ivce
                               + 2 * l * l + 2 * d * d + 2 * d * d + d  // iece
                               + 3 * d * dk;                          // cm
  EXPECT_EQ(param_count(dims), expected);
}

TEST(Params, InitializationContract) {
  const auto dims = small_dims();
  const auto p = init_params<double>(dims, 42);
  EXPECT_EQ(p.ifce.alpha(0, 0), 1.0);
  for (const auto* b : {&p.stem.b, &p.ifce.b1, &p.ifce.b2, &p.ifce.b3, &p.iece.b_ctx})
    EXPECT_EQ(*b, Mat<double>::Zero(b->rows(), b->cols()));
  EXPECT_LE(p.stem.W.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(3.0));
  EXPECT_LE(p.ifce.W1.cwiseAbs().maxCoeff(), 1.0 / std::sqrt(6.0));
  EXPECT_LT(p.ifce.P.cwiseAbs().maxCoeff(), 0.2);
  EXPECT_GT(p.ifce.P.cwiseAbs().maxCoeff(), 0.0);
  validate_params(p, dims);

  const auto q = init_params<double>(dims, 42), r = init_params<double>(dims, 43);
  EXPECT_EQ(flatten_params(p), flatten_params(q));
  EXPECT_NE(flatten_params(p), flatten_params(r));
  EXPECT_EQ(infer_dims(p), dims);
}

TEST(Params, ValidateRejectsWrongShapes) {
  auto p = init_params<double>(small_dims(), 1);
  p.ivce.W_t1 = Mat<double>::Zero(4, 4);
  EXPECT_EQ(error_of([&] { validate_params(p, small_dims()); }), ErrorCode::kShapeMismatch);
}

TEST(Checkpoint, HeaderAndFirstTensorLayout) {
  const auto p = init_params<float>(small_dims(), 3);
  const auto bytes = encode_checkpoint(p);
  ASSERT_GT(bytes.size(), 30u);
  EXPECT_EQ(std::memcmp(bytes.data(), "M3CK", 4), 0);
  auto u32 = [&](std::size_t at) {
    return std::uint32_t(bytes[at]) | std::uint32_t(bytes[at + 1]) << 8 | std::uint32_t(bytes[at + 2]) << 16 |
           std::uint32_t(bytes[at + 3]) << 24;
  };
  EXPECT_EQ(u32(4), 1u);
  EXPECT_EQ(u32(8), 27u);
  EXPECT_EQ(bytes[12], 6);  // u16 name length of "stem.W"
  EXPECT_EQ(bytes[13], 0);
  EXPECT_EQ(std::string(bytes.begin() + 14, bytes.begin() + 20), "stem.W");
  EXPECT_EQ(bytes[20], 2);  // rank
  EXPECT_EQ(u32(21), 3u);
  EXPECT_EQ(u32(25), 6u);
  float first;
  std::memcpy(&first, bytes.data() + 29, 4);
  EXPECT_EQ(first, p.stem.W(0, 0));

  // total size: header + per tensor (2 + name + 1 + 4*rank + 4*size)
  std::size_t size = 12;
  for (const auto& s : param_shapes(small_dims()))
    size += 2 + s.name.size() + 1 + 4 * static_cast<std::size_t>(s.rank) + 4 * static_cast<std::size_t>(s.rows * s.cols);
  EXPECT_EQ(bytes.size(), size);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto p = init_params<float>(small_dims(), 4);
  const auto path = tmp("m3net_ckpt_rt.m3ck");
  save_checkpoint(p, path);
  const auto back = load_checkpoint(path, small_dims());
  EXPECT_EQ(flatten_params(back), flatten_params(p));
  EXPECT_EQ(encode_checkpoint(back), io::read_file(path));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptInput) {
  const auto good = encode_checkpoint(init_params<float>(small_dims(), 5));
  auto bad = good;
  std::memcpy(bad.data(), "M3FA", 4);
  EXPECT_EQ(error_of([&] { decode_checkpoint(bad); }), ErrorCode::kBadMagic);
  bad = good;
  bad[4] = 9;
  EXPECT_EQ(error_of([&] { decode_checkpoint(bad); }), ErrorCode::kUnsupportedVersion);
  bad = good;
  bad.resize(good.size() - 3);
  EXPECT_EQ(error_of([&] { decode_checkpoint(bad); }), ErrorCode::kTruncatedRecord);
  bad = good;
  bad[14] = 'X';  // "Xtem.W": unknown tensor, stem.W missing
  EXPECT_EQ(error_of([&] { decode_checkpoint(bad); }), ErrorCode::kShapeMismatch);

  const auto path = tmp("m3net_ckpt_dims.m3ck");
  io::write_file(path, good);
  auto other = small_dims();
  other.l = 3;
  EXPECT_EQ(error_of([&] { load_checkpoint(path, other); }), ErrorCode::kShapeMismatch);
  std::filesystem::remove(path);
}

TEST(EncodeEpisode, ShapesAndIdentityComposition) {
  const auto data = m3test::random_dataset(4, 3, 3, 4, 4, 3, 9);
  const Episode ep = sample_episode(data, EpisodeSpec{2, 2, 1, 1});
  ModelDims dims;
  dims.c = 3;
  dims.d = 3;
  dims.d_k = 3;
  dims.d_mlp = 6;
  dims.n = 2;
  dims.t = 3;
  dims.l = 5;
  auto p = zero_params<double>(dims);
  p.stem.W = Mat<double>::Identity(3, 3);
  const auto views = encode_episode(p, ep, 1);
  ASSERT_EQ(views.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    const VideoClip& clip = i < 4 ? ep.support[i] : ep.query[1];
    // raw frames pooled then averaged over patches
    Mat<double> expected(3, 3);
    for (int tau = 0; tau < 3; ++tau)
      expected.row(tau) = adaptive_pool_spatial(clip.frame_matrix<double>(tau), 4, 4, 2).colwise().mean();
    EXPECT_LT((views.instance_view[i] - expected).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(views.category_view[i], views.instance_view[i]);
    EXPECT_EQ(views.task_view[i], views.instance_view[i]);
  }
}

TEST(EncodeEpisode, OtherQueriesDoNotLeak) {
  const auto data = m3test::random_dataset(4, 4, 3, 4, 4, 3, 10);
  Episode ep = sample_episode(data, EpisodeSpec{2, 1, 2, 2});
  ModelDims dims;
  dims.c = 3;
  dims.d = 4;
  dims.d_k = 4;
  dims.d_mlp = 8;
  dims.n = 2;
  dims.t = 3;
  dims.l = 3;
  const auto p = init_params<double>(dims, 7);
  const auto before = encode_episode(p, ep, 0);
  std::mt19937_64 rng(3);
  for (std::size_t j = 1; j < ep.query.size(); ++j) ep.query[j] = m3test::random_clip(0, 999, 3, 4, 4, 3, rng);
  const auto after = encode_episode(p, ep, 0);
  EXPECT_EQ(before.instance_view, after.instance_view);
  EXPECT_EQ(before.category_view, after.category_view);
  EXPECT_EQ(before.task_view, after.task_view);
}
