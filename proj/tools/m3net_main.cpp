// m3net command-line tool. Talks to the library only through m3net.h.
#include "m3net/m3net.h"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheck = 3;

int exit_code_for(m3_status s) {
  switch (s) {
    case M3_OK:
      return kExitOk;
    case M3_ERR_CONFIG:
    case M3_ERR_INVALID_ARGUMENT:
      return kExitUsage;
    case M3_ERR_CHECK_FAILED:
      return kExitCheck;
    default:
      return kExitData;
  }
}

struct Failure {
  int code;
};

void check(m3_status s) {
  if (s == M3_OK) return;
  std::cerr << "m3net: " << m3_last_error() << "\n";
  throw Failure{exit_code_for(s)};
}

struct ConfigDeleter {
  void operator()(m3_config* c) const { m3_config_destroy(c); }
};
struct DatasetDeleter {
  void operator()(m3_dataset* d) const { m3_dataset_destroy(d); }
};
struct ModelDeleter {
  void operator()(m3_model* m) const { m3_model_destroy(m); }
};
struct MatchDeleter {
  void operator()(m3_match_result* r) const { m3_match_result_destroy(r); }
};
using ConfigPtr = std::unique_ptr<m3_config, ConfigDeleter>;
using DatasetPtr = std::unique_ptr<m3_dataset, DatasetDeleter>;
using ModelPtr = std::unique_ptr<m3_model, ModelDeleter>;
using MatchPtr = std::unique_ptr<m3_match_result, MatchDeleter>;

std::string take_string(char* s) {
  std::string out = s ? s : "";
  m3_string_free(s);
  return out;
}

// Flags shared by every subcommand.
struct CommonFlags {
  std::string config_path;
  std::optional<unsigned long long> seed;
  std::string out;
  std::vector<std::string> sets;  // key=value overrides
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "key = value configuration file");
  cmd->add_option("--seed", f.seed, "base seed (overrides the config)");
  cmd->add_option("--out", f.out, "output path");
  cmd->add_option("--set", f.sets, "override one config key, KEY=VALUE (repeatable)");
}

// Precedence: flag > config file > default (or the grad-check preset).
ConfigPtr build_config(const CommonFlags& f, bool grad_check_preset = false) {
  m3_config* raw = nullptr;
  if (!f.config_path.empty())
    check(m3_config_load(f.config_path.c_str(), &raw));
  else if (grad_check_preset)
    check(m3_config_grad_check_preset(&raw));
  else
    check(m3_config_create(&raw));
  ConfigPtr cfg(raw);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "m3net: --set expects KEY=VALUE, got '" << kv << "'\n";
      throw Failure{kExitUsage};
    }
    check(m3_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  if (f.seed) check(m3_config_set(cfg.get(), "seed", std::to_string(*f.seed).c_str()));
  check(m3_config_validate(cfg.get()));
  return cfg;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) {
    std::cerr << "m3net: " << flag << " is required\n";
    throw Failure{kExitUsage};
  }
}

int cmd_gen_data(const CommonFlags& f) {
  require(f.out, "--out");
  auto cfg = build_config(f);
  m3_dataset* raw = nullptr;
  check(m3_dataset_generate(cfg.get(), &raw));
  DatasetPtr data(raw);
  check(m3_dataset_save(data.get(), f.out.c_str()));
  int dims[4];
  check(m3_dataset_shape(data.get(), dims));
  auto get = [&](const char* key) {
    char* v = nullptr;
    check(m3_config_get(cfg.get(), key, &v));
    return take_string(v);
  };
  std::cout << "wrote " << f.out << "\n";
  std::cout << "clips " << m3_dataset_clip_count(data.get()) << "\n";
  std::cout << "classes train " << get("train_classes") << " val " << get("val_classes") << " test "
            << get("test_classes") << "\n";
  std::cout << "shape " << dims[0] << " " << dims[1] << " " << dims[2] << " " << dims[3] << "\n";
  return kExitOk;
}

int cmd_train(const CommonFlags& f, const std::string& trace) {
  require(f.out, "--out");
  auto cfg = build_config(f);
  auto log = [](const char* line, void*) { std::cerr << line << "\n"; };
  check(m3_train(cfg.get(), f.out.c_str(), trace.empty() ? nullptr : trace.c_str(), log, nullptr));
  std::cout << "checkpoint " << f.out << "\n";
  return kExitOk;
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, int episodes) {
  require(checkpoint, "--checkpoint");
  auto cfg = build_config(f);
  m3_eval_report r{};
  check(m3_evaluate(cfg.get(), checkpoint.c_str(), episodes, f.out.empty() ? nullptr : f.out.c_str(), &r));
  std::printf("episodes %d\n", r.n_episodes);
  std::printf("accuracy %.6f\n", r.mean_accuracy);
  std::printf("ci95 %.6f\n", r.ci95_halfwidth);
  std::printf("instance %.6f\n", r.per_branch_accuracy[0]);
  std::printf("category %.6f\n", r.per_branch_accuracy[1]);
  std::printf("task %.6f\n", r.per_branch_accuracy[2]);
  return kExitOk;
}

int cmd_match(const CommonFlags& f, const std::string& checkpoint, const std::string& archive,
              unsigned query, const std::vector<unsigned>& supports) {
  require(checkpoint, "--checkpoint");
  require(archive, "--archive");
  auto cfg = build_config(f);
  m3_model* mraw = nullptr;
  check(m3_model_load(checkpoint.c_str(), &mraw));
  ModelPtr model(mraw);
  m3_dataset* draw = nullptr;
  check(m3_dataset_load(archive.c_str(), &draw));
  DatasetPtr data(draw);
  std::vector<uint32_t> ids(supports.begin(), supports.end());
  m3_match_result* rraw = nullptr;
  check(m3_match(model.get(), data.get(), cfg.get(), query, ids.data(), ids.size(), &rraw));
  MatchPtr res(rraw);

  const size_t n = m3_match_result_n_way(res.get());
  std::printf("classes");
  for (size_t i = 0; i < n; ++i) std::printf(" %u", m3_match_result_class_id(res.get(), i));
  std::printf("\n");
  const char* labels[7] = {"D1", "D2", "D3", "Y1", "Y2", "Y3", "Y"};
  std::vector<double> v(n);
  for (int k = M3_BRANCH_D1; k <= M3_BRANCH_Y; ++k) {
    check(m3_match_result_values(res.get(), k, v.data(), v.size()));
    std::printf("%s", labels[k]);
    for (double x : v) std::printf(" %.9g", x);
    std::printf("\n");
  }
  std::printf("predicted %u\n",
              m3_match_result_class_id(res.get(), static_cast<size_t>(m3_match_result_predicted(res.get()))));
  return kExitOk;
}

int cmd_grad_check(const CommonFlags& f) {
  auto cfg = build_config(f, /*grad_check_preset=*/true);
  double max_error = 0;
  char* report = nullptr;
  const m3_status s = m3_grad_check(cfg.get(), &max_error, &report);
  std::cout << take_string(report);
  if (s == M3_ERR_CHECK_FAILED) {
    std::cerr << "m3net: gradient check failed (max relative error " << max_error << ")\n";
    return kExitCheck;
  }
  check(s);
  std::cout << "PASS\n";
  return kExitOk;
}

int cmd_inspect(const std::string& path) {
  char* summary = nullptr;
  check(m3_inspect(path.c_str(), &summary));
  std::cout << take_string(summary);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"m3net: few-shot fine-grained action matching"};
  app.require_subcommand(1);

  CommonFlags gen_flags, train_flags, eval_flags, match_flags, gc_flags;
  std::string trace_path, eval_ckpt, match_ckpt, match_archive, inspect_path;
  int eval_episodes = 1000;
  unsigned match_query = 0;
  std::vector<unsigned> match_support;

  auto* gen = app.add_subcommand("gen-data", "render the synthetic bank to a feature archive");
  add_common(gen, gen_flags);

  auto* train = app.add_subcommand("train", "episodic training; --out is the checkpoint path");
  add_common(train, train_flags);
  train->add_option("--trace", trace_path, "loss trace output");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split; --out gets per-query records");
  add_common(eval, eval_flags);
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint to evaluate");
  eval->add_option("--episodes", eval_episodes, "number of test episodes")->check(CLI::PositiveNumber);

  auto* match = app.add_subcommand("match", "score one query clip against named support clips");
  add_common(match, match_flags);
  match->add_option("--checkpoint", match_ckpt, "checkpoint");
  match->add_option("--archive", match_archive, "feature archive holding the clips");
  match->add_option("--query", match_query, "query clip id")->required();
  match->add_option("--support", match_support, "support clip ids")->required();

  auto* gc = app.add_subcommand("grad-check", "finite-difference gradient check");
  add_common(gc, gc_flags);

  auto* inspect = app.add_subcommand("inspect", "summarize an archive or checkpoint");
  inspect->add_option("path", inspect_path, "file to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(gen_flags);
    if (*train) return cmd_train(train_flags, trace_path);
    if (*eval) return cmd_eval(eval_flags, eval_ckpt, eval_episodes);
    if (*match) return cmd_match(match_flags, match_ckpt, match_archive, match_query, match_support);
    if (*gc) return cmd_grad_check(gc_flags);
    if (*inspect) return cmd_inspect(inspect_path);
  } catch (const Failure& f) {
    return f.code;
  }
  return kExitUsage;
}
