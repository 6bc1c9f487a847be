#pragma once

#include "m3net/config.hpp"
#include "m3net/fusion.hpp"
#include "m3net/model.hpp"

#include <array>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace m3net {

struct RunSwitches {
  EncoderSwitches encoders;
  BranchSwitches branches;
};

template <typename Real>
struct QueryOutcome {
  BranchScores<Real> scores;
  FusedPrediction<Real> prediction;
  LossReport loss;
  int label = 0;
};

/// Encodes the episode once, scores each listed query against the support
/// set in its own N*K+1 context, and (when `grads` is non-null) accumulates
/// the gradient of the mean loss over those queries. DTW paths and chamfer
/// nearest neighbours are held fixed during differentiation.
template <typename Real>
std::vector<QueryOutcome<Real>> run_episode(const ModelParams<Real>& params, const Episode& episode,
                                            std::span<const std::size_t> queries, Real temperature,
                                            const RunSwitches& switches, ModelParams<Real>* grads);

template <typename Real>
std::pair<FusedPrediction<Real>, LossReport> forward_episode(const ModelParams<Real>& params,
                                                             const Episode& episode,
                                                             std::size_t query_index, Real temperature,
                                                             const RunSwitches& switches = {});

/// Gradient of the query's total loss with respect to every parameter.
template <typename Real>
ModelParams<Real> backward_episode(const ModelParams<Real>& params, const Episode& episode,
                                   std::size_t query_index, Real temperature,
                                   const RunSwitches& switches = {});

/// p <- p - lr * g.
template <typename Real>
void sgd_step(ModelParams<Real>& params, const ModelParams<Real>& grads, Real lr);

/// learning_rate * decay_factor ^ floor(episode / decay_every).
double lr_at(const RunConfig& config, long episode_index);

struct DataSplits {
  Dataset train, val, test;
};

/// Renders every class of the synthetic bank described by `config`;
/// clip ids are assigned sequentially.
Dataset generate_synthetic_dataset(const RunConfig& config);

/// Loads or renders the data and partitions classes by ascending id into
/// train / val / test counts from the config.
DataSplits build_splits(const RunConfig& config);
DataSplits split_dataset(const Dataset& all, const RunConfig& config);

/// One-query pseudo-episode built from named clips. Supports are grouped by
/// ascending class id (input order kept within a class) and every class needs
/// the same number of shots. The query label is its class's position when
/// that class is among the supports, else 0.
Episode make_match_episode(const Dataset& data, std::uint32_t query_clip_id,
                           const std::vector<std::uint32_t>& support_clip_ids);

struct TraceRecord {
  long episode = 0;
  double lr = 0, l1 = 0, l2 = 0, l3 = 0, total = 0;
};

/// "episode_index, lr, l1, l2, l3, total"
std::string format_trace_record(const TraceRecord& r);

struct EvalReport {
  double mean_accuracy = 0;
  double ci95_halfwidth = 0;
  int n_episodes = 0;
  std::array<double, 3> per_branch_accuracy{};
};

/// Per-query evaluation record written by evaluate(): tab-separated
/// episode_seed, query_index, y1, y2, y3, y, predicted, true; the vectors
/// are comma-separated.
std::string format_eval_record(std::uint64_t episode_seed, std::size_t query_index,
                               const FusedPrediction<float>& p, int label);

EvalReport evaluate(const RunConfig& config, const ModelParams<float>& params, const Dataset& data,
                    int n_episodes, std::uint64_t stream, std::ostream* records = nullptr);

/// Evaluates a checkpoint on the config's test split.
EvalReport evaluate(const RunConfig& config, const std::string& checkpoint_path, int n_episodes,
                    std::ostream* records = nullptr);

struct TrainResult {
  ModelParams<float> params;  // the selected (best-validation or final) parameters
  std::vector<TraceRecord> trace;
  double best_val_accuracy = -1;  // -1 when validation was not possible
  long best_episode = -1;
};

/// Episodic SGD. Writes the selected checkpoint to `checkpoint_path` and the
/// latest one to `checkpoint_path + ".last"` (both skipped when the path is
/// empty). Trace records stream to `trace_out` as they are produced.
TrainResult train(const RunConfig& config, const DataSplits& data,
                  const std::string& checkpoint_path = "", std::ostream* trace_out = nullptr,
                  const std::function<void(const std::string&)>& log = {});

TrainResult train(const RunConfig& config, const std::string& checkpoint_path = "",
                  std::ostream* trace_out = nullptr,
                  const std::function<void(const std::string&)>& log = {});

struct GradCheckReport {
  std::vector<std::pair<std::string, double>> group_errors;  // per tensor relative error
  double max_error = 0;
  double tolerance = 1e-4;
  bool passed() const { return max_error < tolerance; }
};

/// Central finite differences (eps = 1e-5, 64-bit) of the full pipeline loss
/// against backward_episode on a random episode with the config's shapes.
/// Relative error per tensor is ||g_analytic - g_numeric|| / max(||g_analytic||, ||g_numeric||).
GradCheckReport grad_check(const RunConfig& config, double eps = 1e-5);

}  // namespace m3net
