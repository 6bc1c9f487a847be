#include "m3net/training.hpp"

#include "m3net/archive.hpp"
#include "m3net/errors.hpp"
#include "m3net/rng.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

namespace m3net {

namespace {

// Seed streams derived from RunConfig::seed.
constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kValStream = 2;
constexpr std::uint64_t kTestStream = 3;
constexpr std::uint64_t kBankStream = 10;
constexpr std::uint64_t kRenderStream = 11;
constexpr std::uint64_t kGradCheckStream = 20;

template <typename Real>
struct ClipState {
  MatSeq<Real> pooled;  // per frame (n^2 x c), raw input pooled
  std::vector<IfceCache<Real>> ifce;
  Mat<Real> instance;
  MixCache<Real> ivce;
  Mat<Real> category;
  Mat<Real> d_instance, d_category;
};

template <typename Real>
void encode_clip(const ModelParams<Real>& p, const VideoClip& clip, const Mat<Real>& pool,
                 const EncoderSwitches& sw, ClipState<Real>& s) {
  if (p.stem.W.rows() != clip.c)
    throw Error(ErrorCode::kShapeMismatch, "clip channels do not match the stem");
  if (p.ivce.W_t1.rows() != clip.t)
    throw Error(ErrorCode::kShapeMismatch, "clip frame count does not match the model");
  MatSeq<Real> frames;
  frames.reserve(clip.t);
  s.pooled.clear();
  s.ifce.assign(sw.ifce ? clip.t : 0, {});
  for (int tau = 0; tau < clip.t; ++tau) {
    s.pooled.push_back(pool * clip.frame_matrix<Real>(tau));
    Mat<Real> f = s.pooled.back() * p.stem.W;
    f.rowwise() += p.stem.b.row(0);
    frames.push_back(sw.ifce ? ifce_forward(p.ifce, f, &s.ifce[tau]) : std::move(f));
  }
  s.instance = spatial_squeeze(frames);
  s.category = sw.ivce ? ivce_forward(p.ivce, s.instance, &s.ivce) : s.instance;
  s.d_instance = zeros_like(s.instance);
  s.d_category = zeros_like(s.category);
}

template <typename Real>
void backward_clip(const ModelParams<Real>& p, const EncoderSwitches& sw, const ClipState<Real>& s,
                   ModelParams<Real>& g) {
  Mat<Real> d_inst = s.d_instance;
  if (sw.ivce) d_inst += ivce_backward(p.ivce, s.ivce, s.d_category, g.ivce);
  else d_inst += s.d_category;
  const auto patches = s.pooled.front().rows();
  const Real inv = Real(1) / static_cast<Real>(patches);
  for (std::size_t tau = 0; tau < s.pooled.size(); ++tau) {
    Mat<Real> d_frame = d_inst.row(static_cast<Eigen::Index>(tau)).replicate(patches, 1) * inv;
    if (sw.ifce) d_frame = ifce_backward(p.ifce, s.ifce[tau], d_frame, g.ifce);
    g.stem.W += s.pooled[tau].transpose() * d_frame;
    g.stem.b += d_frame.colwise().sum();
  }
}

template <typename Real>
void set_zero(ModelParams<Real>& g) {
  visit_params(g, [](const char*, int, Mat<Real>& m) { m.setZero(); });
}

}  // namespace

template <typename Real>
std::vector<QueryOutcome<Real>> run_episode(const ModelParams<Real>& p, const Episode& ep,
                                            std::span<const std::size_t> queries, Real temperature,
                                            const RunSwitches& sw, ModelParams<Real>* grads) {
  if (ep.support.empty() || ep.query.empty())
    throw Error(ErrorCode::kInvalidArgument, "episode has no clips");
  const int n_way = ep.n_way, k_shot = ep.k_shot;
  if (static_cast<Eigen::Index>(ep.support.size()) + 1 != p.iece.W_v1.rows())
    throw Error(ErrorCode::kEpisodeSizeMismatch,
                "model was built for N*K = " + std::to_string(p.iece.W_v1.rows() - 1) +
                    " support clips, episode has " + std::to_string(ep.support.size()));
  const int n = static_cast<int>(std::lround(std::sqrt(static_cast<double>(p.ifce.P.rows()))));
  const auto& first = ep.support.front();
  const Mat<Real> pool = pool_matrix<Real>(first.h, first.w, n);

  std::vector<ClipState<Real>> support(ep.support.size());
  for (std::size_t i = 0; i < support.size(); ++i) encode_clip(p, ep.support[i], pool, sw.encoders, support[i]);
  std::vector<ClipState<Real>> query(queries.size());
  for (std::size_t j = 0; j < queries.size(); ++j) {
    if (queries[j] >= ep.query.size()) throw Error(ErrorCode::kInvalidArgument, "query index out of range");
    encode_clip(p, ep.query[queries[j]], pool, sw.encoders, query[j]);
  }

  const Real scale = Real(1) / static_cast<Real>(queries.size());
  const std::size_t l = support.size() + 1;
  std::vector<QueryOutcome<Real>> out;
  out.reserve(queries.size());
  for (std::size_t j = 0; j < queries.size(); ++j) {
    EncodedViews<Real> views;
    for (const auto& s : support) {
      views.instance_view.push_back(s.instance);
      views.category_view.push_back(s.category);
    }
    views.instance_view.push_back(query[j].instance);
    views.category_view.push_back(query[j].category);
    IeceCache<Real> iece_cache;
    views.task_view =
        sw.encoders.iece ? iece_forward(p.iece, views.instance_view, &iece_cache) : views.instance_view;

    QueryOutcome<Real> o;
    o.label = ep.query_labels[queries[j]];
    o.scores.d1 = instance_matching(views, n_way, k_shot);
    o.scores.d2 = category_matching(p.cm, views, n_way, k_shot);
    o.scores.d3 = task_matching(views, n_way, k_shot);
    o.prediction = fuse(o.scores, temperature, sw.branches);
    o.loss = multiview_loss(o.scores, o.label, temperature, sw.branches);

    if (grads) {
      const auto d_scores = multiview_loss_backward(o.scores, o.label, temperature, sw.branches, scale);
      MatSeq<Real> d_inst(l), d_cat(l), d_task(l);
      for (std::size_t i = 0; i < l; ++i) {
        d_inst[i] = zeros_like(views.instance_view[i]);
        d_cat[i] = zeros_like(views.instance_view[i]);
        d_task[i] = zeros_like(views.instance_view[i]);
      }
      if (sw.branches.instance) instance_matching_backward(views, n_way, k_shot, d_scores.d1, d_inst);
      if (sw.branches.category)
        category_matching_backward(p.cm, views, n_way, k_shot, d_scores.d2, d_cat, grads->cm);
      if (sw.branches.task) {
        task_matching_backward(views, n_way, k_shot, d_scores.d3, d_task);
        if (sw.encoders.iece) {
          const auto back = iece_backward(p.iece, views.instance_view, iece_cache, d_task, grads->iece);
          for (std::size_t i = 0; i < l; ++i) d_inst[i] += back[i];
        } else {
          for (std::size_t i = 0; i < l; ++i) d_inst[i] += d_task[i];
        }
      }
      for (std::size_t i = 0; i + 1 < l; ++i) {
        support[i].d_instance += d_inst[i];
        support[i].d_category += d_cat[i];
      }
      query[j].d_instance += d_inst[l - 1];
      query[j].d_category += d_cat[l - 1];
    }
    out.push_back(std::move(o));
  }

  if (grads) {
    for (const auto& s : support) backward_clip(p, sw.encoders, s, *grads);
    for (const auto& q : query) backward_clip(p, sw.encoders, q, *grads);
  }
  return out;
}

template <typename Real>
std::pair<FusedPrediction<Real>, LossReport> forward_episode(const ModelParams<Real>& p,
                                                             const Episode& ep, std::size_t query_index,
                                                             Real temperature, const RunSwitches& sw) {
  const std::size_t q[] = {query_index};
  auto out = run_episode<Real>(p, ep, q, temperature, sw, nullptr);
  return {std::move(out[0].prediction), out[0].loss};
}

template <typename Real>
ModelParams<Real> backward_episode(const ModelParams<Real>& p, const Episode& ep, std::size_t query_index,
                                   Real temperature, const RunSwitches& sw) {
  ModelParams<Real> g = zero_params<Real>(infer_dims(p));
  const std::size_t q[] = {query_index};
  run_episode<Real>(p, ep, q, temperature, sw, &g);
  return g;
}

template <typename Real>
void sgd_step(ModelParams<Real>& params, const ModelParams<Real>& grads, Real lr) {
  std::vector<const Mat<Real>*> g;
  visit_params(grads, [&](const char*, int, const Mat<Real>& m) { g.push_back(&m); });
  std::size_t i = 0;
  visit_params(params, [&](const char* name, int, Mat<Real>& m) {
    if (g[i]->rows() != m.rows() || g[i]->cols() != m.cols())
      throw Error(ErrorCode::kShapeMismatch, std::string("gradient shape differs for ") + name);
    m -= lr * *g[i++];
  });
}

double lr_at(const RunConfig& config, long episode_index) {
  return config.learning_rate *
         std::pow(config.decay_factor, static_cast<double>(episode_index / config.decay_every));
}

// ---------------------------------------------------------------------------

Dataset generate_synthetic_dataset(const RunConfig& c) {
  const int total = c.train_classes + c.val_classes + c.test_classes;
  Rng bank_rng(derive_seed(c.seed, {kBankStream}));
  const auto bank = generate_synthetic_bank(total, c.n_subactions, c.subaction_count, c.channels,
                                            c.noise_sigma, c.warp_strength, bank_rng);
  std::vector<VideoClip> clips;
  clips.reserve(static_cast<std::size_t>(total) * c.clips_per_class);
  for (int cls = 0; cls < total; ++cls)
    for (int k = 0; k < c.clips_per_class; ++k) {
      Rng rng(derive_seed(c.seed, {kRenderStream, static_cast<std::uint64_t>(cls),
                                   static_cast<std::uint64_t>(k)}));
      auto clip = render_synthetic_video(bank, cls, c.frames, c.height, c.width, rng);
      clip.clip_id = static_cast<std::uint32_t>(cls * c.clips_per_class + k);
      clips.push_back(std::move(clip));
    }
  return Dataset(std::move(clips), Split::kBase);
}

DataSplits split_dataset(const Dataset& all, const RunConfig& c) {
  const auto ids = all.class_ids();
  const auto need = static_cast<std::size_t>(c.train_classes + c.val_classes + c.test_classes);
  if (ids.size() < need)
    throw Error(ErrorCode::kInsufficientClasses, "data has " + std::to_string(ids.size()) +
                                                     " classes, splits need " + std::to_string(need));
  // train and test splits must fill an episode when present; a short val split only disables validation
  for (int count : {c.train_classes, c.test_classes})
    if (count > 0 && count < c.n_way)
      throw Error(ErrorCode::kInsufficientClasses, "a split of " + std::to_string(count) +
                                                       " classes cannot form a " + std::to_string(c.n_way) +
                                                       "-way episode");
  auto range = [&](std::size_t from, int count) {
    return std::vector<std::uint32_t>(ids.begin() + static_cast<long>(from),
                                      ids.begin() + static_cast<long>(from + count));
  };
  DataSplits s;
  s.train = all.subset(range(0, c.train_classes), Split::kBase);
  s.val = all.subset(range(c.train_classes, c.val_classes), Split::kNovelVal);
  s.test = all.subset(range(c.train_classes + c.val_classes, c.test_classes), Split::kNovelTest);
  return s;
}

DataSplits build_splits(const RunConfig& c) {
  c.validate();
  const Dataset all = c.archive.empty() ? generate_synthetic_dataset(c) : load_feature_archive(c.archive);
  return split_dataset(all, c);
}

Episode make_match_episode(const Dataset& data, std::uint32_t query_clip_id,
                           const std::vector<std::uint32_t>& support_clip_ids) {
  auto lookup = [&](std::uint32_t id) {
    const VideoClip* clip = data.find_clip(id);
    if (!clip) throw Error(ErrorCode::kInvalidArgument, "no clip with id " + std::to_string(id));
    return clip;
  };
  if (support_clip_ids.empty()) throw Error(ErrorCode::kInvalidArgument, "no support clips");
  std::map<std::uint32_t, std::vector<const VideoClip*>> by_class;
  for (auto id : support_clip_ids) {
    const VideoClip* clip = lookup(id);
    by_class[clip->class_id].push_back(clip);
  }
  const std::size_t shots = by_class.begin()->second.size();
  Episode ep;
  ep.n_way = static_cast<int>(by_class.size());
  ep.k_shot = static_cast<int>(shots);
  for (const auto& [cls, clips] : by_class) {
    if (clips.size() != shots)
      throw Error(ErrorCode::kEpisodeSizeMismatch, "class " + std::to_string(cls) + " has " +
                                                       std::to_string(clips.size()) + " shots, expected " +
                                                       std::to_string(shots));
    ep.class_ids.push_back(cls);
    for (const VideoClip* c : clips) ep.support.push_back(*c);
  }
  const VideoClip* query = lookup(query_clip_id);
  ep.query.push_back(*query);
  int label = 0;
  for (std::size_t i = 0; i < ep.class_ids.size(); ++i)
    if (ep.class_ids[i] == query->class_id) label = static_cast<int>(i);
  ep.query_labels.push_back(label);
  return ep;
}

std::string format_trace_record(const TraceRecord& r) {
  std::ostringstream out;
  out.precision(9);
  out << r.episode << ", " << r.lr << ", " << r.l1 << ", " << r.l2 << ", " << r.l3 << ", " << r.total;
  return out.str();
}

std::string format_eval_record(std::uint64_t episode_seed, std::size_t query_index,
                               const FusedPrediction<float>& p, int label) {
  std::ostringstream out;
  out.precision(7);
  auto list = [&](const RowVec<float>& v) {
    for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? "," : "") << v(i);
  };
  out << episode_seed << '\t' << query_index << '\t';
  list(p.y1);
  out << '\t';
  list(p.y2);
  out << '\t';
  list(p.y3);
  out << '\t';
  list(p.y);
  out << '\t' << p.predicted_class << '\t' << label;
  return out.str();
}

EvalReport evaluate(const RunConfig& config, const ModelParams<float>& params, const Dataset& data,
                    int n_episodes, std::uint64_t stream, std::ostream* records) {
  if (n_episodes < 1) throw Error(ErrorCode::kInvalidArgument, "need at least one episode");
  const RunSwitches sw{config.encoders(), config.branches()};
  const auto temperature = static_cast<float>(config.temperature);
  double acc_sum = 0;
  std::array<double, 3> branch_sum{};
  for (int e = 0; e < n_episodes; ++e) {
    const auto seed = derive_seed(config.seed, {stream, static_cast<std::uint64_t>(e)});
    const Episode ep = sample_episode(data, config.episode_spec(seed));
    std::vector<std::size_t> queries(ep.query.size());
    std::iota(queries.begin(), queries.end(), 0);
    const auto out = run_episode<float>(params, ep, queries, temperature, sw, nullptr);
    double correct = 0;
    std::array<double, 3> branch_correct{};
    for (std::size_t j = 0; j < out.size(); ++j) {
      const auto& o = out[j];
      correct += o.prediction.predicted_class == o.label;
      branch_correct[0] += argmax_lowest(o.prediction.y1) == o.label;
      branch_correct[1] += argmax_lowest(o.prediction.y2) == o.label;
      branch_correct[2] += argmax_lowest(o.prediction.y3) == o.label;
      if (records) *records << format_eval_record(seed, j, o.prediction, o.label) << '\n';
    }
    acc_sum += correct / static_cast<double>(out.size());
    for (int b = 0; b < 3; ++b) branch_sum[b] += branch_correct[b] / static_cast<double>(out.size());
  }
  EvalReport r;
  r.n_episodes = n_episodes;
  r.mean_accuracy = acc_sum / n_episodes;
  r.ci95_halfwidth = 1.96 * std::sqrt(r.mean_accuracy * (1.0 - r.mean_accuracy) / n_episodes);
  for (int b = 0; b < 3; ++b) r.per_branch_accuracy[b] = branch_sum[b] / n_episodes;
  return r;
}

EvalReport evaluate(const RunConfig& config, const std::string& checkpoint_path, int n_episodes,
                    std::ostream* records) {
  const auto params = load_checkpoint(checkpoint_path, config.dims());
  const auto splits = build_splits(config);
  return evaluate(config, params, splits.test, n_episodes, kTestStream, records);
}

TrainResult train(const RunConfig& config, const DataSplits& data, const std::string& checkpoint_path,
                  std::ostream* trace_out, const std::function<void(const std::string&)>& log) {
  config.validate();
  const RunSwitches sw{config.encoders(), config.branches()};
  const auto temperature = static_cast<float>(config.temperature);
  const bool can_validate = config.val_episodes > 0 &&
                            data.val.class_ids().size() >= static_cast<std::size_t>(config.n_way);

  TrainResult result;
  auto params = init_params<float>(config.dims(), derive_seed(config.seed, {kInitStream}));
  auto grads = zero_params<float>(config.dims());
  result.params = params;

  std::vector<std::size_t> queries(static_cast<std::size_t>(config.n_way * config.n_query));
  std::iota(queries.begin(), queries.end(), 0);

  auto checkpoint = [&](long episode) {
    if (!checkpoint_path.empty()) save_checkpoint(params, checkpoint_path + ".last");
    if (!can_validate) {
      result.params = params;
      result.best_episode = episode;
      return;
    }
    const auto val = evaluate(config, params, data.val, config.val_episodes, kValStream);
    if (log) log("episode " + std::to_string(episode) + ": val accuracy " + std::to_string(val.mean_accuracy));
    if (val.mean_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = val.mean_accuracy;
      result.best_episode = episode;
      result.params = params;
    }
  };

  for (long e = 0; e < config.total_episodes; ++e) {
    const auto seed = derive_seed(config.seed, {kTrainStream, static_cast<std::uint64_t>(e)});
    const Episode ep = sample_episode(data.train, config.episode_spec(seed));
    set_zero(grads);
    const auto out = run_episode<float>(params, ep, queries, temperature, sw, &grads);
    TraceRecord rec;
    rec.episode = e;
    rec.lr = lr_at(config, e);
    for (const auto& o : out) {
      rec.l1 += o.loss.l1;
      rec.l2 += o.loss.l2;
      rec.l3 += o.loss.l3;
      rec.total += o.loss.total;
    }
    const double inv = 1.0 / static_cast<double>(out.size());
    rec.l1 *= inv;
    rec.l2 *= inv;
    rec.l3 *= inv;
    rec.total *= inv;
    if (!std::isfinite(rec.total))
      throw Error(ErrorCode::kCheckFailed, "non-finite loss at episode " + std::to_string(e));
    result.trace.push_back(rec);
    if (trace_out) *trace_out << format_trace_record(rec) << '\n';
    sgd_step(params, grads, static_cast<float>(rec.lr));

    const bool last = e + 1 == config.total_episodes;
    if (last || (config.checkpoint_every > 0 && (e + 1) % config.checkpoint_every == 0)) checkpoint(e + 1);
  }
  if (config.total_episodes == 0) checkpoint(0);
  if (!checkpoint_path.empty()) save_checkpoint(result.params, checkpoint_path);
  return result;
}

TrainResult train(const RunConfig& config, const std::string& checkpoint_path, std::ostream* trace_out,
                  const std::function<void(const std::string&)>& log) {
  return train(config, build_splits(config), checkpoint_path, trace_out, log);
}

// ---------------------------------------------------------------------------

GradCheckReport grad_check(const RunConfig& config, double eps) {
  config.validate();
  const auto dims = config.dims();
  Rng rng(derive_seed(config.seed, {kGradCheckStream}));
  std::normal_distribution<double> gauss(0.0, 1.0);

  Episode ep;
  ep.n_way = config.n_way;
  ep.k_shot = config.k_shot;
  auto random_clip = [&](std::uint32_t cls, std::uint32_t id) {
    VideoClip clip;
    clip.class_id = cls;
    clip.clip_id = id;
    clip.t = config.frames;
    clip.h = config.height;
    clip.w = config.width;
    clip.c = config.channels;
    clip.frames.resize(static_cast<std::size_t>(clip.t) * clip.frame_size());
    for (auto& v : clip.frames) v = static_cast<float>(gauss(rng));
    return clip;
  };
  std::uint32_t id = 0;
  for (int c = 0; c < config.n_way; ++c) {
    ep.class_ids.push_back(static_cast<std::uint32_t>(c));
    for (int k = 0; k < config.k_shot; ++k) ep.support.push_back(random_clip(c, id++));
  }
  ep.query.push_back(random_clip(0, id++));
  ep.query_labels.push_back(0);

  const RunSwitches sw{config.encoders(), config.branches()};
  auto params = init_params<double>(dims, derive_seed(config.seed, {kGradCheckStream, 1}));
  const double temperature = config.temperature;
  const auto analytic = backward_episode<double>(params, ep, 0, temperature, sw);
  const auto analytic_flat = flatten_params(analytic);

  std::vector<std::pair<std::string, Mat<double>*>> tensors;
  visit_params(params, [&](const char* name, int, Mat<double>& m) { tensors.emplace_back(name, &m); });

  auto loss = [&] { return forward_episode<double>(params, ep, 0, temperature, sw).second.total; };

  GradCheckReport report;
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    auto& m = *tensors[k].second;
    Mat<double> numeric(m.rows(), m.cols());
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double orig = m.data()[i];
      m.data()[i] = orig + eps;
      const double up = loss();
      m.data()[i] = orig - eps;
      const double down = loss();
      m.data()[i] = orig;
      numeric.data()[i] = (up - down) / (2 * eps);
    }
    const double scale = std::max(analytic_flat[k].norm(), numeric.norm());
    const double err = scale < 1e-12 ? 0.0 : (analytic_flat[k] - numeric).norm() / scale;
    report.group_errors.emplace_back(tensors[k].first, err);
    report.max_error = std::max(report.max_error, err);
  }
  return report;
}

#define M3NET_INSTANTIATE(Real)                                                                    \
  template std::vector<QueryOutcome<Real>> run_episode(const ModelParams<Real>&, const Episode&,   \
                                                       std::span<const std::size_t>, Real,         \
                                                       const RunSwitches&, ModelParams<Real>*);    \
  template std::pair<FusedPrediction<Real>, LossReport> forward_episode(                           \
      const ModelParams<Real>&, const Episode&, std::size_t, Real, const RunSwitches&);            \
  template ModelParams<Real> backward_episode(const ModelParams<Real>&, const Episode&,            \
                                              std::size_t, Real, const RunSwitches&);              \
  template void sgd_step(ModelParams<Real>&, const ModelParams<Real>&, Real);

M3NET_INSTANTIATE(float)
M3NET_INSTANTIATE(double)

}  // namespace m3net
