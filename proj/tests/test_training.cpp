#include "m3net/archive.hpp"
#include "m3net/binary_io.hpp"
#include "m3net/training.hpp"

#include "test_util.hpp"

#include <filesystem>
#include <regex>
#include <sstream>

using namespace m3net;
using m3test::error_of;

namespace {

RunConfig tiny_config() {
  RunConfig c = RunConfig::grad_check_preset();
  c.train_classes = 4;
  c.val_classes = 0;
  c.test_classes = 2;
  c.n_subactions = 3;
  c.clips_per_class = 4;
  c.total_episodes = 30;
  c.checkpoint_every = 10;
  c.val_episodes = 0;
  c.learning_rate = 0.01;
  c.seed = 5;
  c.channels = 4;
  return c;
}

Episode tiny_episode(const RunConfig& c, std::uint64_t seed) {
  const auto data = m3test::random_dataset(4, 3, c.frames, c.height, c.width, c.channels, seed);
  return sample_episode(data, EpisodeSpec{c.n_way, c.k_shot, 2, seed});
}

std::string tmp(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

// Full forward pass assembled from the individual blocks, stem before pooling,
// with loop-based matchers and cross-entropy.
double recomputed_loss(const ModelParams<double>& p, const Episode& ep, std::size_t q, double temperature) {
  const int n = infer_dims(p).n;
  auto instance = [&](const VideoClip& clip) {
    MatSeq<double> frames;
    for (const auto& f : stem_forward(p.stem, clip))
      frames.push_back(ifce_forward(p.ifce, adaptive_pool_spatial(f, clip.h, clip.w, n)));
    return spatial_squeeze(frames);
  };
  MatSeq<double> inst;
  for (const auto& s : ep.support) inst.push_back(instance(s));
  inst.push_back(instance(ep.query[q]));
  MatSeq<double> cat;
  for (const auto& v : inst) cat.push_back(ivce_forward(p.ivce, v));
  const auto task = iece_forward(p.iece, inst);

  const int label = ep.query_labels[q];
  const std::size_t last = inst.size() - 1;
  std::vector<double> z1, z2, z3;
  for (int c = 0; c < ep.n_way; ++c) {
    double d1 = 0, d3 = 0;
    Mat<double> proto(0, cat[0].cols());
    for (int k = 0; k < ep.k_shot; ++k) {
      const std::size_t i = static_cast<std::size_t>(c * ep.k_shot + k);
      d1 += m3test::naive_instance_distance(inst[last], inst[i]);
      d3 += m3test::naive_chamfer(task[i], task[last]) + m3test::naive_chamfer(task[last], task[i]);
      Mat<double> grown(proto.rows() + cat[i].rows(), proto.cols());
      grown << proto, cat[i];
      proto = grown;
    }
    const double d2 = m3test::naive_cm_distance(p.cm.W_Q, p.cm.W_K, p.cm.W_V, cat[last], proto) +
                      m3test::naive_cm_distance(p.cm.W_Q, p.cm.W_K, p.cm.W_V, proto, cat[last]);
    z1.push_back(-d1 / ep.k_shot / temperature);
    z2.push_back(-d2 / temperature);
    z3.push_back(-d3 / ep.k_shot / temperature);
  }
  return -std::log(m3test::naive_softmax(z1)[label]) - std::log(m3test::naive_softmax(z2)[label]) -
         std::log(m3test::naive_softmax(z3)[label]);
}

}  // namespace

TEST(LearningRate, StepDecay) {
  RunConfig c;
  EXPECT_DOUBLE_EQ(lr_at(c, 0), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(c, 1999), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(c, 2000), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(c, 4500), 2.5e-5);
}

TEST(SgdStep, Examples) {
  const auto dims = tiny_config().dims();
  auto p = init_params<double>(dims, 1);
  const auto before = flatten_params(p);
  sgd_step(p, zero_params<double>(dims), 0.5);
  EXPECT_EQ(flatten_params(p), before);
  auto g = init_params<double>(dims, 2);
  sgd_step(p, g, 0.0);
  EXPECT_EQ(flatten_params(p), before);

  p.ifce.alpha(0, 0) = 1.0;
  g = zero_params<double>(dims);
  g.ifce.alpha(0, 0) = 2.0;
  sgd_step(p, g, 0.1);
  EXPECT_DOUBLE_EQ(p.ifce.alpha(0, 0), 0.8);
}

TEST(ForwardEpisode, MatchesIndependentRecomputation) {
  const auto c = tiny_config();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto ep = tiny_episode(c, seed);
    const auto p = init_params<double>(c.dims(), 100 + seed);
    for (std::size_t q = 0; q < ep.query.size(); ++q) {
      const auto [pred, loss] = forward_episode<double>(p, ep, q, 0.7);
      EXPECT_NEAR(loss.total, recomputed_loss(p, ep, q, 0.7), 1e-9);
      EXPECT_EQ(pred.y1.size(), c.n_way);
      EXPECT_NEAR(loss.total, loss.l1 + loss.l2 + loss.l3, 1e-12);
    }
  }
}

TEST(ForwardEpisode, ZeroEncodersOnNoiselessDataAreFinite) {
  RunConfig c;
  c.train_classes = 5;
  c.val_classes = 0;
  c.test_classes = 0;
  c.n_subactions = 3;
  c.noise_sigma = 0;
  c.clips_per_class = 3;
  c.n_grid = 2;
  const auto data = generate_synthetic_dataset(c);
  const auto ep = sample_episode(data, c.episode_spec(3));
  auto p = zero_params<float>(c.dims());
  p.stem.W = init_params<float>(c.dims(), 1).stem.W;
  p.cm = init_params<float>(c.dims(), 1).cm;
  for (std::size_t q = 0; q < ep.query.size(); ++q)
    EXPECT_TRUE(std::isfinite(forward_episode<float>(p, ep, q, 1.0f).second.total));
}

TEST(BackwardEpisode, ShapesAndDisabledBranches) {
  const auto c = tiny_config();
  const auto ep = tiny_episode(c, 1);
  const auto p = init_params<double>(c.dims(), 3);
  const auto g = backward_episode<double>(p, ep, 0, 1.0);
  const auto gf = flatten_params(g), pf = flatten_params(p);
  for (std::size_t i = 0; i < gf.size(); ++i) {
    EXPECT_EQ(gf[i].rows(), pf[i].rows());
    EXPECT_EQ(gf[i].cols(), pf[i].cols());
  }

  RunSwitches no_cat;
  no_cat.branches.category = false;
  const auto g2 = backward_episode<double>(p, ep, 0, 1.0, no_cat);
  EXPECT_EQ(g2.cm.W_V, Mat<double>::Zero(p.cm.W_V.rows(), p.cm.W_V.cols()));
  EXPECT_EQ(g2.cm.W_Q, Mat<double>::Zero(p.cm.W_Q.rows(), p.cm.W_Q.cols()));
  EXPECT_EQ(g2.ivce.W_c1, Mat<double>::Zero(p.ivce.W_c1.rows(), p.ivce.W_c1.cols()));

  RunSwitches no_task;
  no_task.branches.task = false;
  const auto g3 = backward_episode<double>(p, ep, 0, 1.0, no_task);
  EXPECT_EQ(g3.iece.W_ctx, Mat<double>::Zero(p.iece.W_ctx.rows(), p.iece.W_ctx.cols()));
  const auto full = forward_episode<double>(p, ep, 0, 1.0).second;
  const auto ablated = forward_episode<double>(p, ep, 0, 1.0, no_task).second;
  EXPECT_EQ(ablated.l3, 0.0);
  EXPECT_EQ(ablated.total, full.l1 + full.l2);
}

TEST(GradCheck, TinyConfigPasses) {
  const auto r = grad_check(RunConfig::grad_check_preset());
  EXPECT_EQ(r.group_errors.size(), 27u);
  EXPECT_LT(r.max_error, 1e-4);
  EXPECT_TRUE(r.passed());
}

TEST(GradCheck, PassesWithEncodersAndBranchesToggled) {
  auto c = RunConfig::grad_check_preset();
  c.use_ivce = false;
  c.use_instance_matching = false;
  c.k_shot = 2;
  const auto r = grad_check(c);
  EXPECT_LT(r.max_error, 1e-4);
}

TEST(Train, DeterministicCheckpointsAndFiniteTrace) {
  const auto c = tiny_config();
  const auto a = tmp("m3net_train_a.m3ck"), b = tmp("m3net_train_b.m3ck");
  std::ostringstream ta, tb;
  const auto ra = train(c, a, &ta);
  train(c, b, &tb);
  EXPECT_EQ(io::read_file(a), io::read_file(b));
  EXPECT_EQ(ta.str(), tb.str());
  EXPECT_TRUE(std::filesystem::exists(a + ".last"));
  ASSERT_EQ(ra.trace.size(), 30u);
  const std::regex line(R"(^\d+, [-+0-9.e]+, [-+0-9.e]+, [-+0-9.e]+, [-+0-9.e]+, [-+0-9.e]+$)");
  std::istringstream in(ta.str());
  std::string s;
  int count = 0;
  while (std::getline(in, s)) {
    EXPECT_TRUE(std::regex_match(s, line)) << s;
    ++count;
  }
  EXPECT_EQ(count, 30);
  for (const auto& r : ra.trace) {
    EXPECT_TRUE(std::isfinite(r.total));
    EXPECT_NEAR(r.total, r.l1 + r.l2 + r.l3, 1e-6 * std::max(1.0, std::abs(r.total)));
    EXPECT_DOUBLE_EQ(r.lr, lr_at(c, r.episode));
  }
  for (const auto& p : {a, b, a + ".last", b + ".last"}) std::filesystem::remove(p);
}

TEST(Train, NoiselessTwoClassBankIsLearnedPerfectly) {
  RunConfig c = RunConfig::grad_check_preset();
  c.train_classes = 2;
  c.val_classes = 0;
  c.test_classes = 0;
  c.n_subactions = 2;
  c.subaction_count = 2;
  c.noise_sigma = 0;
  c.warp_strength = 0;
  c.clips_per_class = 6;
  c.total_episodes = 1000;
  c.learning_rate = 0.05;
  c.checkpoint_every = 0;
  c.val_episodes = 0;
  c.channels = 4;
  const auto data = generate_synthetic_dataset(c);
  DataSplits s{data, Dataset(), Dataset()};
  const auto r = train(c, s);
  const auto report = evaluate(c, r.params, data, 200, 1);
  EXPECT_EQ(report.mean_accuracy, 1.0);
}

TEST(Evaluate, RecordsAndConfidenceInterval) {
  auto c = tiny_config();
  const auto splits = build_splits(c);
  const auto p = init_params<float>(c.dims(), 1);
  std::ostringstream rec;
  const auto r = evaluate(c, p, splits.test, 20, 3, &rec);
  EXPECT_EQ(r.n_episodes, 20);
  EXPECT_NEAR(r.ci95_halfwidth, 1.96 * std::sqrt(r.mean_accuracy * (1 - r.mean_accuracy) / 20), 1e-12);
  std::istringstream in(rec.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, '\t')) fields.push_back(f);
    ASSERT_EQ(fields.size(), 8u) << line;
    EXPECT_EQ(std::count(fields[2].begin(), fields[2].end(), ','), c.n_way - 1);
  }
  EXPECT_EQ(lines, 20 * c.n_way * c.n_query);
}

TEST(Evaluate, MatchEpisodeReproducesEvaluationRecord) {
  auto c = tiny_config();
  const auto splits = build_splits(c);
  const auto p = init_params<float>(c.dims(), 2);
  std::ostringstream rec;
  evaluate(c, p, splits.test, 1, 3, &rec);
  std::istringstream in(rec.str());
  std::string line;
  std::getline(in, line);
  std::vector<std::string> fields;
  std::stringstream ls(line);
  for (std::string f; std::getline(ls, f, '\t');) fields.push_back(f);
  const auto seed = std::stoull(fields[0]);

  const auto ep = sample_episode(splits.test, c.episode_spec(seed));
  std::vector<std::uint32_t> support;
  for (const auto& s : ep.support) support.push_back(s.clip_id);
  const auto pseudo = make_match_episode(splits.test, ep.query[0].clip_id, support);
  EXPECT_EQ(pseudo.class_ids, ep.class_ids);
  EXPECT_EQ(pseudo.query_labels[0], ep.query_labels[0]);
  const auto [pred, loss] = forward_episode<float>(p, pseudo, 0, static_cast<float>(c.temperature));
  FusedPrediction<float> same = pred;
  EXPECT_EQ(format_eval_record(seed, 0, same, pseudo.query_labels[0]), line);
}

TEST(MatchEpisode, GroupsByClassAndValidates) {
  const auto data = m3test::random_dataset(3, 3, 1, 1, 1, 4, 1);
  // clip ids are class * 3 + k
  const auto ep = make_match_episode(data, 4, {7, 0, 6, 1});
  EXPECT_EQ(ep.class_ids, (std::vector<std::uint32_t>{0, 2}));
  EXPECT_EQ(ep.support[0].clip_id, 0u);
  EXPECT_EQ(ep.support[1].clip_id, 1u);
  EXPECT_EQ(ep.support[2].clip_id, 7u);
  EXPECT_EQ(ep.support[3].clip_id, 6u);
  EXPECT_EQ(ep.k_shot, 2);
  EXPECT_EQ(error_of([&] { make_match_episode(data, 4, {0, 1, 6}); }), ErrorCode::kEpisodeSizeMismatch);
  EXPECT_EQ(error_of([&] { make_match_episode(data, 99, {0}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(error_of([&] { make_match_episode(data, 4, {}); }), ErrorCode::kInvalidArgument);
}

TEST(Splits, DisjointAscendingClassRanges) {
  RunConfig c;
  c.train_classes = 6;
  c.val_classes = 2;
  c.test_classes = 3;
  c.n_subactions = 4;
  c.clips_per_class = 2;
  c.n_way = 2;
  const auto s = build_splits(c);
  EXPECT_EQ(s.train.class_ids(), (std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(s.val.class_ids(), (std::vector<std::uint32_t>{6, 7}));
  EXPECT_EQ(s.test.class_ids(), (std::vector<std::uint32_t>{8, 9, 10}));
  EXPECT_EQ(s.test.split(), Split::kNovelTest);

  const auto path = tmp("m3net_splits.m3fa");
  save_feature_archive(generate_synthetic_dataset(c), path);
  auto from_file = c;
  from_file.archive = path;
  const auto t = build_splits(from_file);
  EXPECT_EQ(t.test, s.test);
  from_file.train_classes = 20;
  EXPECT_EQ(error_of([&] { build_splits(from_file); }), ErrorCode::kInsufficientClasses);
  std::filesystem::remove(path);
}

TEST(Splits, DefaultCountsAccepted) {
  RunConfig c;
  c.clips_per_class = 1;
  c.frames = 3;
  c.height = c.width = 4;
  c.n_grid = 2;
  EXPECT_EQ(c.train_classes, 61);
  EXPECT_EQ(c.val_classes, 12);
  EXPECT_EQ(c.test_classes, 26);
  const auto data = generate_synthetic_dataset(c);
  EXPECT_EQ(data.class_ids().size(), 99u);
}

TEST(Evaluate, UntrainedModelOnNoiseDominatedBankIsAtChance) {
  // noise far above the subaction signal: nothing left to match on
  RunConfig c;
  c.n_way = 5;
  c.k_shot = 1;
  c.n_query = 1;
  c.d = 8;
  c.d_k = 8;
  c.d_mlp = 16;
  c.frames = 4;
  c.height = c.width = 4;
  c.n_grid = 2;
  c.channels = 4;
  c.train_classes = 0;
  c.val_classes = 0;
  c.test_classes = 5;
  c.n_subactions = 3;
  c.subaction_count = 3;
  c.clips_per_class = 20;
  c.noise_sigma = 1000.0;
  c.seed = 11;
  const auto splits = build_splits(c);
  const auto params = init_params<float>(c.dims(), derive_seed(c.seed, {0}));
  const auto r = evaluate(c, params, splits.test, 500, 3);
  EXPECT_NEAR(r.mean_accuracy, 0.20, 0.06);
}
