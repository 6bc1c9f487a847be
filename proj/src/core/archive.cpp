#include "m3net/archive.hpp"

#include "m3net/binary_io.hpp"

#include <limits>

namespace m3net {

std::vector<std::uint8_t> encode_feature_archive(const Dataset& dataset) {
  io::Writer w;
  w.bytes(kArchiveMagic, 4);
  w.uint<std::uint32_t>(kArchiveVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(dataset.clips().size()));
  for (const auto& clip : dataset.clips()) {
    for (int dim : {clip.t, clip.h, clip.w, clip.c})
      if (dim < 1 || dim > std::numeric_limits<std::uint16_t>::max())
        throw Error(ErrorCode::kShapeMismatch, "clip dimension does not fit u16");
    w.uint<std::uint32_t>(clip.class_id);
    w.uint<std::uint32_t>(clip.clip_id);
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(clip.t));
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(clip.h));
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(clip.w));
    w.uint<std::uint16_t>(static_cast<std::uint16_t>(clip.c));
    for (float v : clip.frames) w.f32(v);
  }
  return w.data();
}

Dataset decode_feature_archive(std::vector<std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kArchiveMagic, 4) != 0)
    throw Error(ErrorCode::kBadMagic, "not a feature archive");
  io::Reader r(std::move(bytes));
  r.str(4, "magic");
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kArchiveVersion)
    throw Error(ErrorCode::kUnsupportedVersion, "archive version " + std::to_string(version));
  const auto count = r.uint<std::uint32_t>("clip count");
  std::vector<VideoClip> clips;
  for (std::uint32_t i = 0; i < count; ++i) {
    VideoClip clip;
    clip.class_id = r.uint<std::uint32_t>("class_id");
    clip.clip_id = r.uint<std::uint32_t>("clip_id");
    clip.t = r.uint<std::uint16_t>("t");
    clip.h = r.uint<std::uint16_t>("h");
    clip.w = r.uint<std::uint16_t>("w");
    clip.c = r.uint<std::uint16_t>("c");
    if (clip.t == 0 || clip.h == 0 || clip.w == 0 || clip.c == 0)
      throw Error(ErrorCode::kShapeMismatch, "zero dimension in clip record " + std::to_string(i));
    const std::size_t n = static_cast<std::size_t>(clip.t) * clip.frame_size();
    r.need(n * 4, "clip frames");
    clip.frames.resize(n);
    for (auto& v : clip.frames) v = r.f32("frame value");
    clips.push_back(std::move(clip));
  }
  if (r.remaining() != 0)
    throw Error(ErrorCode::kShapeMismatch, std::to_string(r.remaining()) + " trailing bytes");
  return Dataset(std::move(clips), Split::kBase);
}

void save_feature_archive(const Dataset& dataset, const std::string& path) {
  io::write_file(path, encode_feature_archive(dataset));
}

Dataset load_feature_archive(const std::string& path) {
  return decode_feature_archive(io::read_file(path));
}

}  // namespace m3net
