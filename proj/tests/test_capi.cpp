// Exercises the shared library through m3net.h only.
#include "m3net/m3net.h"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace {

struct ConfigDel {
  void operator()(m3_config* c) const { m3_config_destroy(c); }
};
struct DataDel {
  void operator()(m3_dataset* d) const { m3_dataset_destroy(d); }
};
struct ModelDel {
  void operator()(m3_model* m) const { m3_model_destroy(m); }
};
struct MatchDel {
  void operator()(m3_match_result* r) const { m3_match_result_destroy(r); }
};
using Config = std::unique_ptr<m3_config, ConfigDel>;
using Data = std::unique_ptr<m3_dataset, DataDel>;
using Model = std::unique_ptr<m3_model, ModelDel>;
using Match = std::unique_ptr<m3_match_result, MatchDel>;

std::string tmp(const char* name) { return (std::filesystem::temp_directory_path() / name).string(); }

std::string take(char* s) {
  std::string out = s ? s : "";
  m3_string_free(s);
  return out;
}

// Small bank: 2-way 1-shot, d=8, t=3.
Config small_config() {
  m3_config* raw = nullptr;
  EXPECT_EQ(m3_config_grad_check_preset(&raw), M3_OK);
  Config c(raw);
  const char* kv[][2] = {{"channels", "4"},      {"train_classes", "3"}, {"val_classes", "0"},
                         {"test_classes", "2"},  {"n_subactions", "3"},  {"clips_per_class", "3"},
                         {"total_episodes", "5"}, {"val_episodes", "0"}, {"seed", "9"}};
  for (auto& p : kv) EXPECT_EQ(m3_config_set(c.get(), p[0], p[1]), M3_OK) << p[0];
  return c;
}

std::string get(const m3_config* c, const char* key) {
  char* v = nullptr;
  EXPECT_EQ(m3_config_get(c, key, &v), M3_OK);
  return take(v);
}

std::vector<double> values(const m3_match_result* r, int which) {
  std::vector<double> v(m3_match_result_n_way(r));
  EXPECT_EQ(m3_match_result_values(r, which, v.data(), v.size()), M3_OK);
  return v;
}

}  // namespace

TEST(CApi, StatusNamesAndNullArguments) {
  EXPECT_STREQ(m3_status_name(M3_OK), "Ok");
  EXPECT_STRNE(m3_status_name(M3_ERR_BAD_MAGIC), m3_status_name(M3_ERR_IO));
  EXPECT_EQ(m3_config_create(nullptr), M3_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(m3_dataset_load(nullptr, nullptr), M3_ERR_INVALID_ARGUMENT);
  EXPECT_EQ(m3_inspect(nullptr, nullptr), M3_ERR_INVALID_ARGUMENT);
  EXPECT_NE(std::string(m3_last_error()), "");
  m3_config_destroy(nullptr);
  m3_dataset_destroy(nullptr);
  m3_model_destroy(nullptr);
  m3_match_result_destroy(nullptr);
  m3_string_free(nullptr);
}

TEST(CApi, ConfigSetGetAndErrors) {
  m3_config* raw = nullptr;
  ASSERT_EQ(m3_config_create(&raw), M3_OK);
  Config c(raw);
  EXPECT_EQ(get(c.get(), "n_way"), "5");
  EXPECT_EQ(m3_config_set(c.get(), "n_way", "3"), M3_OK);
  EXPECT_EQ(get(c.get(), "n_way"), "3");
  EXPECT_EQ(m3_config_set(c.get(), "no_such_key", "1"), M3_ERR_CONFIG);
  EXPECT_EQ(m3_config_set(c.get(), "n_way", "three"), M3_ERR_CONFIG);
  char* v = nullptr;
  EXPECT_EQ(m3_config_get(c.get(), "no_such_key", &v), M3_ERR_CONFIG);
  char* text = nullptr;
  ASSERT_EQ(m3_config_to_string(c.get(), &text), M3_OK);
  m3_config* back_raw = nullptr;
  ASSERT_EQ(m3_config_parse(text, &back_raw), M3_OK);
  m3_string_free(text);
  Config back(back_raw);
  EXPECT_EQ(get(back.get(), "n_way"), "3");
  EXPECT_EQ(m3_config_set(c.get(), "temperature", "0"), M3_OK);
  EXPECT_EQ(m3_config_validate(c.get()), M3_ERR_CONFIG);

  m3_config* missing = nullptr;
  EXPECT_EQ(m3_config_load(tmp("m3_capi_missing.cfg").c_str(), &missing), M3_ERR_CONFIG);
}

TEST(CApi, DatasetRoundTrip) {
  auto cfg = small_config();
  m3_dataset* raw = nullptr;
  ASSERT_EQ(m3_dataset_generate(cfg.get(), &raw), M3_OK);
  Data data(raw);
  EXPECT_EQ(m3_dataset_clip_count(data.get()), 15u);
  int dims[4];
  ASSERT_EQ(m3_dataset_shape(data.get(), dims), M3_OK);
  EXPECT_EQ(dims[0], 3);
  EXPECT_EQ(dims[1], 4);
  EXPECT_EQ(dims[2], 4);
  EXPECT_EQ(dims[3], 4);

  const auto path = tmp("m3_capi_bank.m3fa");
  ASSERT_EQ(m3_dataset_save(data.get(), path.c_str()), M3_OK);
  m3_dataset* back_raw = nullptr;
  ASSERT_EQ(m3_dataset_load(path.c_str(), &back_raw), M3_OK);
  Data back(back_raw);
  ASSERT_EQ(m3_dataset_clip_count(back.get()), 15u);
  for (size_t i = 0; i < 15; ++i) {
    uint32_t c1, k1, c2, k2;
    ASSERT_EQ(m3_dataset_clip_info(data.get(), i, &c1, &k1), M3_OK);
    ASSERT_EQ(m3_dataset_clip_info(back.get(), i, &c2, &k2), M3_OK);
    EXPECT_EQ(c1, c2);
    EXPECT_EQ(k1, k2);
  }
  uint32_t a, b;
  EXPECT_EQ(m3_dataset_clip_info(data.get(), 15, &a, &b), M3_ERR_INVALID_ARGUMENT);

  const auto again = tmp("m3_capi_bank2.m3fa");
  ASSERT_EQ(m3_dataset_save(back.get(), again.c_str()), M3_OK);
  std::ifstream f1(path, std::ios::binary), f2(again, std::ios::binary);
  const std::string s1((std::istreambuf_iterator<char>(f1)), {}), s2((std::istreambuf_iterator<char>(f2)), {});
  EXPECT_EQ(s1, s2);
}

TEST(CApi, SplitSmallerThanEpisodeRefused) {
  auto cfg = small_config();
  ASSERT_EQ(m3_config_set(cfg.get(), "test_classes", "1"), M3_OK);
  m3_dataset* raw = nullptr;
  EXPECT_EQ(m3_dataset_generate(cfg.get(), &raw), M3_ERR_INSUFFICIENT_CLASSES);
  EXPECT_EQ(raw, nullptr);
}

TEST(CApi, TooManyClassesForSubactions) {
  auto cfg = small_config();
  ASSERT_EQ(m3_config_set(cfg.get(), "n_subactions", "2"), M3_OK);
  ASSERT_EQ(m3_config_set(cfg.get(), "train_classes", "20"), M3_OK);
  m3_dataset* raw = nullptr;
  EXPECT_EQ(m3_dataset_generate(cfg.get(), &raw), M3_ERR_TOO_FEW_ORDERINGS);
  EXPECT_EQ(raw, nullptr);
}

TEST(CApi, ModelInitSaveLoad) {
  auto cfg = small_config();
  m3_model* raw = nullptr;
  ASSERT_EQ(m3_model_init(cfg.get(), &raw), M3_OK);
  Model model(raw);
  ASSERT_EQ(m3_model_tensor_count(model.get()), 27u);

  // d=8, d_k=4, d_mlp=16, c=4, n=2, t=3, l=N*K+1=3
  const size_t c = 4, d = 8, dk = 4, dm = 16, n = 2, t = 3, l = 3;
  const size_t expected = c * d + d + 3 * d * d + 1 + n * n * d + d * dm + dm + dm * dm + dm + dm * d + d +
                          2 * t * t + 2 * d * d + t * d + 2 * l * l + 4 * d * d + d + 3 * d * dk;
  EXPECT_EQ(m3_model_param_count(model.get()), expected);

  size_t total = 0;
  for (size_t i = 0; i < 27; ++i) {
    const char* name = nullptr;
    int rank = -1;
    size_t dims[2];
    ASSERT_EQ(m3_model_tensor_info(model.get(), i, &name, &rank, dims), M3_OK);
    ASSERT_NE(name, nullptr);
    EXPECT_GE(rank, 0);
    EXPECT_LE(rank, 2);
    total += dims[0] * dims[1];
  }
  EXPECT_EQ(total, expected);
  const char* first = nullptr;
  int rank;
  size_t dims[2];
  m3_model_tensor_info(model.get(), 0, &first, &rank, dims);
  EXPECT_STREQ(first, "stem.W");
  EXPECT_EQ(m3_model_tensor_info(model.get(), 27, &first, &rank, dims), M3_ERR_INVALID_ARGUMENT);

  const auto path = tmp("m3_capi_model.m3ck");
  ASSERT_EQ(m3_model_save(model.get(), path.c_str()), M3_OK);
  m3_model* back_raw = nullptr;
  ASSERT_EQ(m3_model_load(path.c_str(), &back_raw), M3_OK);
  Model back(back_raw);
  EXPECT_EQ(m3_model_param_count(back.get()), expected);

  char* summary = nullptr;
  ASSERT_EQ(m3_inspect(path.c_str(), &summary), M3_OK);
  const auto s = take(summary);
  EXPECT_EQ(s.rfind("checkpoint", 0), 0u);
  EXPECT_NE(s.find("cm.W_V"), std::string::npos);
  EXPECT_NE(s.find("parameters: " + std::to_string(expected)), std::string::npos);
}

TEST(CApi, BadMagicAndMissingFiles) {
  const auto path = tmp("m3_capi_bad.bin");
  std::ofstream(path, std::ios::binary) << "XXXXjunkjunk";
  m3_model* m = nullptr;
  EXPECT_EQ(m3_model_load(path.c_str(), &m), M3_ERR_BAD_MAGIC);
  m3_dataset* d = nullptr;
  EXPECT_EQ(m3_dataset_load(path.c_str(), &d), M3_ERR_BAD_MAGIC);
  char* s = nullptr;
  EXPECT_EQ(m3_inspect(path.c_str(), &s), M3_ERR_BAD_MAGIC);
  EXPECT_EQ(m3_model_load(tmp("m3_capi_absent.m3ck").c_str(), &m), M3_ERR_IO);
}

TEST(CApi, MatchScoresAreConsistent) {
  auto cfg = small_config();
  m3_dataset* draw = nullptr;
  ASSERT_EQ(m3_dataset_generate(cfg.get(), &draw), M3_OK);
  Data data(draw);
  m3_model* mraw = nullptr;
  ASSERT_EQ(m3_model_init(cfg.get(), &mraw), M3_OK);
  Model model(mraw);

  // clips are class-major, three per class: clip ids of class 1 and class 4
  uint32_t q_class, q_id, s_class[2], s_id[2];
  ASSERT_EQ(m3_dataset_clip_info(data.get(), 3, &q_class, &q_id), M3_OK);
  ASSERT_EQ(m3_dataset_clip_info(data.get(), 12, &s_class[1], &s_id[1]), M3_OK);
  ASSERT_EQ(m3_dataset_clip_info(data.get(), 4, &s_class[0], &s_id[0]), M3_OK);
  ASSERT_EQ(q_class, s_class[0]);
  ASSERT_NE(s_class[0], s_class[1]);

  // supports given in reverse class order get regrouped by ascending class id
  const uint32_t supports[2] = {s_id[1], s_id[0]};
  m3_match_result* rraw = nullptr;
  ASSERT_EQ(m3_match(model.get(), data.get(), cfg.get(), q_id, supports, 2, &rraw), M3_OK);
  Match res(rraw);
  ASSERT_EQ(m3_match_result_n_way(res.get()), 2u);
  EXPECT_LT(m3_match_result_class_id(res.get(), 0), m3_match_result_class_id(res.get(), 1));

  const auto y1 = values(res.get(), M3_BRANCH_Y1), y2 = values(res.get(), M3_BRANCH_Y2),
             y3 = values(res.get(), M3_BRANCH_Y3), y = values(res.get(), M3_BRANCH_Y);
  for (const auto* p : {&y1, &y2, &y3}) EXPECT_NEAR((*p)[0] + (*p)[1], 1.0, 1e-6);
  for (size_t i = 0; i < 2; ++i) EXPECT_NEAR(y[i], y1[i] + y2[i] + y3[i], 1e-6);
  const int pred = m3_match_result_predicted(res.get());
  EXPECT_EQ(pred, y[0] >= y[1] ? 0 : 1);
  for (double v : values(res.get(), M3_BRANCH_D1)) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 2.0 + 1e-6);
  }

  double buf[8];
  EXPECT_EQ(m3_match_result_values(res.get(), 7, buf, 8), M3_ERR_INVALID_ARGUMENT);

  const uint32_t unequal[3] = {s_id[0], q_id, s_id[1]};
  m3_match_result* bad = nullptr;
  EXPECT_EQ(m3_match(model.get(), data.get(), cfg.get(), q_id, unequal, 3, &bad), M3_ERR_EPISODE_SIZE_MISMATCH);
  const uint32_t unknown[2] = {s_id[0], 9999};
  EXPECT_EQ(m3_match(model.get(), data.get(), cfg.get(), q_id, unknown, 2, &bad), M3_ERR_INVALID_ARGUMENT);
}

TEST(CApi, QueryMatchedAgainstItself) {
  auto cfg = small_config();
  ASSERT_EQ(m3_config_set(cfg.get(), "use_iece", "false"), M3_OK);
  m3_dataset* draw = nullptr;
  ASSERT_EQ(m3_dataset_generate(cfg.get(), &draw), M3_OK);
  Data data(draw);
  m3_model* mraw = nullptr;
  ASSERT_EQ(m3_model_init(cfg.get(), &mraw), M3_OK);
  Model model(mraw);

  uint32_t qc, q, oc, other;
  ASSERT_EQ(m3_dataset_clip_info(data.get(), 0, &qc, &q), M3_OK);
  ASSERT_EQ(m3_dataset_clip_info(data.get(), 6, &oc, &other), M3_OK);
  const uint32_t supports[2] = {q, other};
  m3_match_result* rraw = nullptr;
  ASSERT_EQ(m3_match(model.get(), data.get(), cfg.get(), q, supports, 2, &rraw), M3_OK);
  Match res(rraw);
  const int self = m3_match_result_class_id(res.get(), 0) == qc ? 0 : 1;
  EXPECT_LT(values(res.get(), M3_BRANCH_D1)[self], 1e-6);
  EXPECT_NEAR(values(res.get(), M3_BRANCH_D3)[self], 0.0, 1e-6);
}

TEST(CApi, GradCheckPasses) {
  m3_config* raw = nullptr;
  ASSERT_EQ(m3_config_grad_check_preset(&raw), M3_OK);
  Config cfg(raw);
  double max_error = 1;
  char* report = nullptr;
  ASSERT_EQ(m3_grad_check(cfg.get(), &max_error, &report), M3_OK);
  const auto r = take(report);
  EXPECT_LT(max_error, 1e-4);
  EXPECT_NE(r.find("ifce.mlp.W3"), std::string::npos);
}

TEST(CApi, TrainAndEvaluate) {
  auto cfg = small_config();
  const auto ckpt = tmp("m3_capi_train.m3ck");
  const auto trace = tmp("m3_capi_train.trace");
  int lines = 0;
  auto log = [](const char*, void* user) { ++*static_cast<int*>(user); };
  ASSERT_EQ(m3_train(cfg.get(), ckpt.c_str(), trace.c_str(), log, &lines), M3_OK);
  EXPECT_TRUE(std::filesystem::exists(ckpt));
  EXPECT_TRUE(std::filesystem::exists(ckpt + ".last"));
  std::ifstream in(trace);
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  EXPECT_EQ(n, 5);

  m3_eval_report rep{};
  const auto records = tmp("m3_capi_eval.tsv");
  ASSERT_EQ(m3_evaluate(cfg.get(), ckpt.c_str(), 4, records.c_str(), &rep), M3_OK);
  EXPECT_EQ(rep.n_episodes, 4);
  EXPECT_GE(rep.mean_accuracy, 0.0);
  EXPECT_LE(rep.mean_accuracy, 1.0);
  EXPECT_EQ(m3_evaluate(cfg.get(), ckpt.c_str(), 0, nullptr, &rep), M3_ERR_INVALID_ARGUMENT);
}
