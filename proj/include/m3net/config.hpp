#pragma once

#include "m3net/encoding.hpp"
#include "m3net/episode.hpp"
#include "m3net/fusion.hpp"
#include "m3net/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace m3net {

/// Every tunable of a run. Serialized as a flat "key = value" text file.
struct RunConfig {
  // episode
  int n_way = 5;
  int k_shot = 1;
  int n_query = 1;
  // model
  int d = 32;
  int d_k = 32;
  int d_mlp = 64;
  int n_grid = 4;
  int frames = 8;
  int height = 8;
  int width = 8;
  int channels = 16;
  // optimization
  double learning_rate = 1e-4;
  double decay_factor = 0.5;
  int decay_every = 2000;
  int total_episodes = 5000;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;
  int val_episodes = 200;
  int eval_episodes = 1000;
  // data
  std::string archive;  // empty: render the synthetic bank
  int train_classes = 61;
  int val_classes = 12;
  int test_classes = 26;
  int n_subactions = 6;
  int subaction_count = 3;
  double noise_sigma = 0.1;
  double warp_strength = 0.3;
  int clips_per_class = 10;
  // ablation switches
  bool use_ifce = true;
  bool use_ivce = true;
  bool use_iece = true;
  bool use_instance_matching = true;
  bool use_category_matching = true;
  bool use_task_matching = true;

  ModelDims dims() const;
  EpisodeSpec episode_spec(std::uint64_t episode_seed) const;
  EncoderSwitches encoders() const { return {use_ifce, use_ivce, use_iece}; }
  BranchSwitches branches() const {
    return {use_instance_matching, use_category_matching, use_task_matching};
  }

  /// Throws ConfigError on any out-of-range field.
  void validate() const;

  /// Sets one field from its textual value; unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);

  /// Textual value of one field, as written by to_string().
  std::string get(const std::string& key) const;

  std::string to_string() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::string& path);
  void save(const std::string& path) const;

  static std::vector<std::string> keys();

  /// Tiny configuration used by the gradient check.
  static RunConfig grad_check_preset();

  bool operator==(const RunConfig&) const = default;
};

}  // namespace m3net
