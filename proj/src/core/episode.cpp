#include "m3net/episode.hpp"

#include "m3net/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace m3net {

const char* split_name(Split s) {
  switch (s) {
    case Split::kBase: return "base";
    case Split::kNovelVal: return "novel-val";
    case Split::kNovelTest: return "novel-test";
  }
  return "?";
}

Dataset::Dataset(std::vector<VideoClip> clips, Split split)
    : clips_(std::move(clips)), split_(split) {
  for (std::size_t i = 0; i < clips_.size(); ++i) {
    const auto& c = clips_[i];
    if (c.t < 1 || c.h < 1 || c.w < 1 || c.c < 1 ||
        c.frames.size() != static_cast<std::size_t>(c.t) * c.frame_size())
      throw Error(ErrorCode::kShapeMismatch, "clip " + std::to_string(c.clip_id) + " has bad shape");
    const auto& f = clips_.front();
    if (c.t != f.t || c.h != f.h || c.w != f.w || c.c != f.c)
      throw Error(ErrorCode::kShapeMismatch, "clips in one dataset must share (t, h, w, c)");
    class_index_[c.class_id].push_back(i);
  }
}

std::vector<std::uint32_t> Dataset::class_ids() const {
  std::vector<std::uint32_t> ids;
  ids.reserve(class_index_.size());
  for (const auto& [id, _] : class_index_) ids.push_back(id);
  return ids;
}

const VideoClip* Dataset::find_clip(std::uint32_t clip_id) const {
  for (const auto& c : clips_)
    if (c.clip_id == clip_id) return &c;
  return nullptr;
}

Dataset Dataset::subset(const std::vector<std::uint32_t>& classes, Split split) const {
  std::vector<VideoClip> out;
  for (const auto& c : clips_)
    if (std::find(classes.begin(), classes.end(), c.class_id) != classes.end()) out.push_back(c);
  return Dataset(std::move(out), split);
}

Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec, Rng& rng) {
  if (spec.n_way < 2 || spec.k_shot < 1 || spec.n_query < 1)
    throw Error(ErrorCode::kInvalidArgument, "episode spec needs N >= 2, K >= 1, Q >= 1");
  auto classes = dataset.class_ids();
  if (classes.size() < static_cast<std::size_t>(spec.n_way))
    throw Error(ErrorCode::kInsufficientClasses,
                std::to_string(classes.size()) + " classes available, " +
                    std::to_string(spec.n_way) + " requested");

  // Partial Fisher-Yates over the class list, then canonical ascending order.
  for (int i = 0; i < spec.n_way; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, classes.size() - 1);
    std::swap(classes[i], classes[pick(rng)]);
  }
  classes.resize(spec.n_way);
  std::sort(classes.begin(), classes.end());

  Episode ep;
  ep.class_ids = classes;
  ep.n_way = spec.n_way;
  ep.k_shot = spec.k_shot;
  const auto need = static_cast<std::size_t>(spec.k_shot + spec.n_query);
  std::vector<std::vector<std::size_t>> picked(spec.n_way);
  for (int ci = 0; ci < spec.n_way; ++ci) {
    auto idx = dataset.class_index().at(classes[ci]);
    if (idx.size() < need)
      throw Error(ErrorCode::kInsufficientClipsPerClass,
                  "class " + std::to_string(classes[ci]) + " has " + std::to_string(idx.size()) +
                      " clips, needs " + std::to_string(need));
    for (std::size_t i = 0; i < need; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(need);
    picked[ci] = std::move(idx);
  }
  for (int ci = 0; ci < spec.n_way; ++ci)
    for (int k = 0; k < spec.k_shot; ++k) ep.support.push_back(dataset.clips()[picked[ci][k]]);
  for (int ci = 0; ci < spec.n_way; ++ci)
    for (int q = 0; q < spec.n_query; ++q) {
      ep.query.push_back(dataset.clips()[picked[ci][spec.k_shot + q]]);
      ep.query_labels.push_back(ci);
    }
  return ep;
}

Episode sample_episode(const Dataset& dataset, const EpisodeSpec& spec) {
  Rng rng(spec.seed);
  return sample_episode(dataset, spec, rng);
}

namespace {

bool has_adjacent_repeat(const std::vector<int>& tuple) {
  for (std::size_t i = 1; i < tuple.size(); ++i)
    if (tuple[i] == tuple[i - 1]) return true;
  return false;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(v[i - 1], v[pick(rng)]);
  }
}

}  // namespace

SyntheticBank generate_synthetic_bank(int n_classes, int n_subactions, int m, int c,
                                      double noise_sigma, double warp_strength, Rng& rng) {
  if (n_classes < 1 || n_subactions < 2 || m < 2 || c < 4)
    throw Error(ErrorCode::kInvalidArgument,
                "synthetic bank needs n_classes >= 1, n_subactions >= 2, m >= 2, c >= 4");
  if (!(noise_sigma >= 0.0) || !(warp_strength >= 0.0 && warp_strength <= 1.0))
    throw Error(ErrorCode::kInvalidArgument, "noise_sigma must be >= 0 and warp_strength in [0, 1]");
  const double orderings = std::pow(static_cast<double>(n_subactions), m);
  if (orderings < n_classes)
    throw Error(ErrorCode::kTooFewDistinctOrderings,
                std::to_string(n_subactions) + "^" + std::to_string(m) + " < " +
                    std::to_string(n_classes));

  SyntheticBank bank;
  bank.noise_sigma = noise_sigma;
  bank.warp_strength = warp_strength;
  std::normal_distribution<double> gauss(0.0, 1.0);
  bank.subaction_protos.resize(n_subactions, c);
  for (int p = 0; p < n_subactions; ++p) {
    for (int j = 0; j < c; ++j) bank.subaction_protos(p, j) = gauss(rng);
    bank.subaction_protos.row(p).normalize();
  }
  bank.background.resize(c);
  for (auto& b : bank.background) b = gauss(rng) / std::sqrt(static_cast<double>(c));

  // Tuples without adjacent repeats come first: a repeat collapses into a
  // duration change, which makes classes harder to tell apart.
  std::vector<std::vector<int>> clean, rest;
  std::vector<int> tuple(m, 0);
  const auto total = static_cast<long long>(orderings);
  for (long long code = 0; code < total; ++code) {
    long long x = code;
    for (int i = m - 1; i >= 0; --i) {
      tuple[i] = static_cast<int>(x % n_subactions);
      x /= n_subactions;
    }
    (has_adjacent_repeat(tuple) ? rest : clean).push_back(tuple);
  }
  shuffle(clean, rng);
  shuffle(rest, rng);
  clean.insert(clean.end(), rest.begin(), rest.end());
  clean.resize(n_classes);
  bank.class_defs = std::move(clean);
  return bank;
}

std::vector<int> segment_lengths(int t, int m, double warp_strength, Rng& rng) {
  if (m < 1 || t < m) throw Error(ErrorCode::kInvalidArgument, "need t >= m >= 1");
  std::vector<double> weight(m, 1.0 / m);
  if (warp_strength > 0.0) {
    std::gamma_distribution<double> gamma(1.0 / warp_strength, 1.0);
    double sum = 0.0;
    for (auto& x : weight) sum += (x = gamma(rng));
    for (auto& x : weight) x /= sum;
  }
  // Every segment keeps one frame; the rest is apportioned by largest remainder.
  const int spare = t - m;
  std::vector<int> len(m, 1);
  std::vector<std::pair<double, int>> remainder;
  int used = 0;
  for (int i = 0; i < m; ++i) {
    const double share = spare * weight[i];
    const int whole = static_cast<int>(std::floor(share));
    len[i] += whole;
    used += whole;
    remainder.emplace_back(share - whole, i);
  }
  std::stable_sort(remainder.begin(), remainder.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; k < spare - used; ++k) ++len[remainder[k].second];
  return len;
}

VideoClip render_synthetic_video(const SyntheticBank& bank, int class_id, int t, int h, int w,
                                 Rng& rng) {
  if (class_id < 0 || class_id >= bank.n_classes())
    throw Error(ErrorCode::kUnknownClass, "class " + std::to_string(class_id));
  const int m = bank.m();
  if (t < m || h < 1 || w < 1)
    throw Error(ErrorCode::kInvalidArgument, "render needs t >= m and h, w >= 1");
  const int c = bank.channels();

  const auto lengths = segment_lengths(t, m, bank.warp_strength, rng);

  // The actor block varies in size and position per video; only the temporal
  // subaction schedule identifies the class.
  auto side = [&](int dim) {
    const int lo = std::max(1, (dim + 3) / 4);
    const int hi = std::max(lo, (dim + 1) / 2);
    return std::uniform_int_distribution<int>(lo, hi)(rng);
  };
  const int bh = side(h), bw = side(w);
  const int by = std::uniform_int_distribution<int>(0, h - bh)(rng);
  const int bx = std::uniform_int_distribution<int>(0, w - bw)(rng);

  VideoClip clip;
  clip.class_id = static_cast<std::uint32_t>(class_id);
  clip.t = t;
  clip.h = h;
  clip.w = w;
  clip.c = c;
  clip.frames.resize(static_cast<std::size_t>(t) * h * w * c);

  std::normal_distribution<double> noise(0.0, bank.noise_sigma > 0.0 ? bank.noise_sigma : 1.0);
  int tau = 0;
  for (int seg = 0; seg < m; ++seg) {
    const auto proto = bank.subaction_protos.row(bank.class_defs[class_id][seg]);
    for (int f = 0; f < lengths[seg]; ++f, ++tau) {
      float* frame = clip.frame(tau);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const bool inside = y >= by && y < by + bh && x >= bx && x < bx + bw;
          float* px = frame + (y * w + x) * c;
          for (int j = 0; j < c; ++j) {
            double v = bank.background[j] + (inside ? proto(j) : 0.0);
            if (bank.noise_sigma > 0.0) v += noise(rng);
            px[j] = static_cast<float>(v);
          }
        }
    }
  }
  return clip;
}

int decode_frame_subaction(const SyntheticBank& bank, const VideoClip& clip, int tau) {
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(clip.c);
  const float* frame = clip.frame(tau);
  for (int p = 0; p < clip.h * clip.w; ++p)
    for (int j = 0; j < clip.c; ++j) acc(j) += frame[p * clip.c + j] - bank.background[j];
  int best = 0;
  double best_score = -1e300;
  for (int p = 0; p < bank.subaction_protos.rows(); ++p) {
    const double s = acc.dot(bank.subaction_protos.row(p));
    if (s > best_score) {
      best_score = s;
      best = p;
    }
  }
  return best;
}

}  // namespace m3net
