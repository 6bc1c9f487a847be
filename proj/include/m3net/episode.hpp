#pragma once

#include "m3net/rng.hpp"
#include "m3net/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace m3net {

/// One video's frame feature maps, stored (t, h, w, c) row-major.
struct VideoClip {
  std::uint32_t class_id = 0;
  std::uint32_t clip_id = 0;
  int t = 0, h = 0, w = 0, c = 0;
  std::vector<float> frames;

  std::size_t frame_size() const { return static_cast<std::size_t>(h) * w * c; }
  const float* frame(int tau) const { return frames.data() + tau * frame_size(); }
  float* frame(int tau) { return frames.data() + tau * frame_size(); }
  float at(int tau, int y, int x, int ch) const {
    return frames[((static_cast<std::size_t>(tau) * h + y) * w + x) * c + ch];
  }

  /// Frame tau as a (h*w x c) matrix.
  template <typename Real>
  Mat<Real> frame_matrix(int tau) const {
    Mat<Real> m(h * w, c);
    const float* p = frame(tau);
    for (int i = 0; i < h * w; ++i)
      for (int j = 0; j < c; ++j) m(i, j) = static_cast<Real>(p[i * c + j]);
    return m;
  }

  bool operator==(const VideoClip&) const = default;
};

enum class Split { kBase, kNovelVal, kNovelTest };

const char* split_name(Split s);

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<VideoClip> clips, Split split);

  const std::vector<VideoClip>& clips() const { return clips_; }
  Split split() const { return split_; }
  /// class_id -> clip indices, keys ascending.
  const std::map<std::uint32_t, std::vector<std::size_t>>& class_index() const {
    return class_index_;
  }
  std::vector<std::uint32_t> class_ids() const;
  const VideoClip* find_clip(std::uint32_t clip_id) const;

  /// Sub-dataset holding only the given classes, tagged with `split`.
  Dataset subset(const std::vector<std::uint32_t>& classes, Split split) const;

  bool operator==(const Dataset& o) const { return clips_ == o.clips_; }

 private:
  std::vector<VideoClip> clips_;
  Split split_ = Split::kBase;
  std::map<std::uint32_t, std::vector<std::size_t>> class_index_;
};

struct EpisodeSpec {
  int n_way = 5;
  int k_shot = 1;
  int n_query = 1;
  std::uint64_t seed = 0;
};

struct Episode {
  std::vector<VideoClip> support;  // n_way * k_shot, grouped by class in class_ids order
  std::vector<VideoClip> query;    // n_way * n_query
  std::vector<std::uint32_t> class_ids;
  std::vector<int> query_labels;
  int n_way = 0;
  int k_shot = 0;

  bool operator==(const Episode&) const = default;
};

Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec, Rng& rng);

/// Convenience overload seeding the stream from spec.seed.
Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec);

struct SyntheticBank {
  Mat<double> subaction_protos;  // P x c, unit-norm rows
  std::vector<double> background;  // c
  std::vector<std::vector<int>> class_defs;  // per class, m subaction indices
  double noise_sigma = 0.0;
  double warp_strength = 0.0;

  int n_classes() const { return static_cast<int>(class_defs.size()); }
  int m() const { return class_defs.empty() ? 0 : static_cast<int>(class_defs.front().size()); }
  int channels() const { return static_cast<int>(subaction_protos.cols()); }
};

SyntheticBank generate_synthetic_bank(int n_classes, int n_subactions, int m, int c,
                                      double noise_sigma, double warp_strength, Rng& rng);

/// Per-segment frame counts for an m-segment schedule over t frames.
std::vector<int> segment_lengths(int t, int m, double warp_strength, Rng& rng);

VideoClip render_synthetic_video(const SyntheticBank& bank, int class_id, int t, int h, int w,
                                 Rng& rng);

/// Index of the prototype best matching frame tau after background removal.
int decode_frame_subaction(const SyntheticBank& bank, const VideoClip& clip, int tau);

}  // namespace m3net
