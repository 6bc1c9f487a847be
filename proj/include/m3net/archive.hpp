#pragma once

#include "m3net/episode.hpp"

#include <string>

namespace m3net {

// Feature archive: "M3FA", u32 version (1), u32 clip count, then per clip
// u32 class_id, u32 clip_id, u16 t, h, w, c and t*h*w*c float32 values.
// All little-endian, no padding.
inline constexpr char kArchiveMagic[4] = {'M', '3', 'F', 'A'};
inline constexpr std::uint32_t kArchiveVersion = 1;

std::vector<std::uint8_t> encode_feature_archive(const Dataset& dataset);
Dataset decode_feature_archive(std::vector<std::uint8_t> bytes);

void save_feature_archive(const Dataset& dataset, const std::string& path);
Dataset load_feature_archive(const std::string& path);

}  // namespace m3net
