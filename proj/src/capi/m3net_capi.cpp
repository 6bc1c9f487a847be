#include "m3net/m3net.h"

#include "m3net/archive.hpp"
#include "m3net/binary_io.hpp"
#include "m3net/config.hpp"
#include "m3net/errors.hpp"
#include "m3net/model.hpp"
#include "m3net/training.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <new>
#include <sstream>
#include <string>
#include <vector>

struct m3_config {
  m3net::RunConfig value;
};

struct m3_dataset {
  m3net::Dataset value;
};

struct m3_model {
  m3net::ModelParams<float> params;
  std::vector<std::string> names;  // canonical order, for m3_model_tensor_info
};

struct m3_match_result {
  std::vector<std::uint32_t> class_ids;
  std::vector<double> values[7];
  int predicted = 0;
};

namespace {

thread_local std::string g_last_error;

m3_status fail(m3_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

// Runs `body`, translating exceptions into status codes.
template <typename F>
m3_status guarded(F&& body) {
  g_last_error.clear();
  try {
    body();
    return M3_OK;
  } catch (const m3net::Error& e) {
    return fail(static_cast<m3_status>(static_cast<int>(e.code())), e.what());
  } catch (const std::bad_alloc&) {
    return fail(M3_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(M3_ERR_INTERNAL, e.what());
  }
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

#define REQUIRE_ARG(cond)                                                  \
  do {                                                                     \
    if (!(cond)) return fail(M3_ERR_INVALID_ARGUMENT, "null argument: " #cond); \
  } while (0)

m3_model* wrap_model(m3net::ModelParams<float> params) {
  auto m = std::make_unique<m3_model>();
  m->params = std::move(params);
  m3net::visit_params(m->params, [&](const char* name, int, const auto&) { m->names.emplace_back(name); });
  return m.release();
}

std::string summarize_archive(const m3net::Dataset& data) {
  std::ostringstream out;
  out << "feature archive\n";
  out << "clips: " << data.clips().size() << "\n";
  if (!data.clips().empty()) {
    const auto& c = data.clips().front();
    out << "shape (t,h,w,c): " << c.t << " " << c.h << " " << c.w << " " << c.c << "\n";
  }
  out << "classes: " << data.class_index().size() << "\n";
  for (const auto& [cls, idx] : data.class_index()) out << "class " << cls << ": " << idx.size() << "\n";
  return out.str();
}

std::string summarize_checkpoint(const m3net::ModelParams<float>& p) {
  std::ostringstream out;
  out << "checkpoint\n";
  std::size_t total = 0;
  int tensors = 0;
  m3net::visit_params(p, [&](const char* name, int rank, const m3net::Mat<float>& m) {
    out << name << " rank " << rank << " shape ";
    if (rank == 0)
      out << "()";
    else if (rank == 1)
      out << "(" << m.cols() << ")";
    else
      out << "(" << m.rows() << "," << m.cols() << ")";
    out << "\n";
    total += static_cast<std::size_t>(m.size());
    ++tensors;
  });
  out << "tensors: " << tensors << "\n";
  out << "parameters: " << total << "\n";
  return out.str();
}

}  // namespace

extern "C" {

const char* m3_last_error(void) { return g_last_error.c_str(); }

const char* m3_status_name(m3_status status) {
  if (status == M3_OK) return "Ok";
  if (status == M3_ERR_INTERNAL) return "InternalError";
  if (status >= M3_ERR_INVALID_ARGUMENT && status <= M3_ERR_CHECK_FAILED)
    return m3net::error_code_name(static_cast<m3net::ErrorCode>(static_cast<int>(status)));
  return "Unknown";
}

void m3_string_free(char* s) { delete[] s; }

// ---- config

m3_status m3_config_create(m3_config** out) {
  REQUIRE_ARG(out);
  return guarded([&] { *out = new m3_config{}; });
}

m3_status m3_config_grad_check_preset(m3_config** out) {
  REQUIRE_ARG(out);
  return guarded([&] { *out = new m3_config{m3net::RunConfig::grad_check_preset()}; });
}

m3_status m3_config_load(const char* path, m3_config** out) {
  REQUIRE_ARG(path && out);
  return guarded([&] { *out = new m3_config{m3net::RunConfig::load(path)}; });
}

m3_status m3_config_parse(const char* text, m3_config** out) {
  REQUIRE_ARG(text && out);
  return guarded([&] { *out = new m3_config{m3net::RunConfig::parse(text)}; });
}

m3_status m3_config_set(m3_config* config, const char* key, const char* value) {
  REQUIRE_ARG(config && key && value);
  return guarded([&] { config->value.set(key, value); });
}

m3_status m3_config_get(const m3_config* config, const char* key, char** value) {
  REQUIRE_ARG(config && key && value);
  return guarded([&] { *value = dup_string(config->value.get(key)); });
}

m3_status m3_config_validate(const m3_config* config) {
  REQUIRE_ARG(config);
  return guarded([&] { config->value.validate(); });
}

m3_status m3_config_to_string(const m3_config* config, char** text) {
  REQUIRE_ARG(config && text);
  return guarded([&] { *text = dup_string(config->value.to_string()); });
}

void m3_config_destroy(m3_config* config) { delete config; }

// ---- datasets

m3_status m3_dataset_generate(const m3_config* config, m3_dataset** out) {
  REQUIRE_ARG(config && out);
  return guarded([&] {
    config->value.validate();
    auto data = m3net::generate_synthetic_dataset(config->value);
    m3net::split_dataset(data, config->value);  // refuses too few classes
    *out = new m3_dataset{std::move(data)};
  });
}

m3_status m3_dataset_load(const char* path, m3_dataset** out) {
  REQUIRE_ARG(path && out);
  return guarded([&] { *out = new m3_dataset{m3net::load_feature_archive(path)}; });
}

m3_status m3_dataset_save(const m3_dataset* dataset, const char* path) {
  REQUIRE_ARG(dataset && path);
  return guarded([&] { m3net::save_feature_archive(dataset->value, path); });
}

size_t m3_dataset_clip_count(const m3_dataset* dataset) {
  return dataset ? dataset->value.clips().size() : 0;
}

m3_status m3_dataset_shape(const m3_dataset* dataset, int dims[4]) {
  REQUIRE_ARG(dataset && dims);
  const auto& clips = dataset->value.clips();
  if (clips.empty()) {
    dims[0] = dims[1] = dims[2] = dims[3] = 0;
  } else {
    dims[0] = clips[0].t;
    dims[1] = clips[0].h;
    dims[2] = clips[0].w;
    dims[3] = clips[0].c;
  }
  return M3_OK;
}

m3_status m3_dataset_clip_info(const m3_dataset* dataset, size_t index, uint32_t* class_id,
                               uint32_t* clip_id) {
  REQUIRE_ARG(dataset);
  const auto& clips = dataset->value.clips();
  if (index >= clips.size()) return fail(M3_ERR_INVALID_ARGUMENT, "clip index out of range");
  if (class_id) *class_id = clips[index].class_id;
  if (clip_id) *clip_id = clips[index].clip_id;
  return M3_OK;
}

void m3_dataset_destroy(m3_dataset* dataset) { delete dataset; }

// ---- models

m3_status m3_model_init(const m3_config* config, m3_model** out) {
  REQUIRE_ARG(config && out);
  return guarded([&] {
    config->value.validate();
    *out = wrap_model(m3net::init_params<float>(config->value.dims(),
                                                m3net::derive_seed(config->value.seed, {0})));
  });
}

m3_status m3_model_load(const char* path, m3_model** out) {
  REQUIRE_ARG(path && out);
  return guarded([&] { *out = wrap_model(m3net::load_checkpoint(path)); });
}

m3_status m3_model_save(const m3_model* model, const char* path) {
  REQUIRE_ARG(model && path);
  return guarded([&] { m3net::save_checkpoint(model->params, path); });
}

size_t m3_model_tensor_count(const m3_model* model) { return model ? model->names.size() : 0; }

m3_status m3_model_tensor_info(const m3_model* model, size_t index, const char** name, int* rank,
                               size_t dims[2]) {
  REQUIRE_ARG(model);
  if (index >= model->names.size()) return fail(M3_ERR_INVALID_ARGUMENT, "tensor index out of range");
  size_t i = 0;
  m3net::visit_params(model->params, [&](const char*, int r, const m3net::Mat<float>& m) {
    if (i++ != index) return;
    if (name) *name = model->names[index].c_str();
    if (rank) *rank = r;
    if (dims) {
      dims[0] = static_cast<size_t>(m.rows());
      dims[1] = static_cast<size_t>(m.cols());
    }
  });
  return M3_OK;
}

size_t m3_model_param_count(const m3_model* model) {
  if (!model) return 0;
  size_t total = 0;
  m3net::visit_params(model->params,
                      [&](const char*, int, const m3net::Mat<float>& m) { total += static_cast<size_t>(m.size()); });
  return total;
}

void m3_model_destroy(m3_model* model) { delete model; }

// ---- training and evaluation

m3_status m3_train(const m3_config* config, const char* checkpoint_path, const char* trace_path,
                   m3_log_fn log, void* user) {
  REQUIRE_ARG(config && checkpoint_path);
  return guarded([&] {
    std::ofstream trace;
    if (trace_path) {
      trace.open(trace_path);
      if (!trace) throw m3net::Error(m3net::ErrorCode::kIo, std::string("cannot open ") + trace_path);
    }
    std::function<void(const std::string&)> sink;
    if (log) sink = [&](const std::string& line) { log(line.c_str(), user); };
    m3net::train(config->value, checkpoint_path, trace_path ? &trace : nullptr, sink);
    if (trace_path && !trace.flush())
      throw m3net::Error(m3net::ErrorCode::kIo, std::string("cannot write ") + trace_path);
  });
}

m3_status m3_evaluate(const m3_config* config, const char* checkpoint_path, int n_episodes,
                      const char* records_path, m3_eval_report* out) {
  REQUIRE_ARG(config && checkpoint_path && out);
  return guarded([&] {
    std::ofstream records;
    if (records_path) {
      records.open(records_path);
      if (!records) throw m3net::Error(m3net::ErrorCode::kIo, std::string("cannot open ") + records_path);
    }
    const auto r = m3net::evaluate(config->value, checkpoint_path, n_episodes,
                                   records_path ? &records : nullptr);
    if (records_path && !records.flush())
      throw m3net::Error(m3net::ErrorCode::kIo, std::string("cannot write ") + records_path);
    out->mean_accuracy = r.mean_accuracy;
    out->ci95_halfwidth = r.ci95_halfwidth;
    out->n_episodes = r.n_episodes;
    for (int b = 0; b < 3; ++b) out->per_branch_accuracy[b] = r.per_branch_accuracy[b];
  });
}

m3_status m3_grad_check(const m3_config* config, double* max_error, char** report) {
  REQUIRE_ARG(config);
  m3_status s = M3_OK;
  const m3_status run = guarded([&] {
    const auto r = m3net::grad_check(config->value);
    std::ostringstream out;
    out.precision(6);
    for (const auto& [name, err] : r.group_errors) out << name << " " << std::scientific << err << "\n";
    out << "max " << std::scientific << r.max_error << " tolerance " << r.tolerance << "\n";
    if (max_error) *max_error = r.max_error;
    if (report) *report = dup_string(out.str());
    if (!r.passed()) s = M3_ERR_CHECK_FAILED;
  });
  if (run != M3_OK) return run;
  if (s != M3_OK) return fail(s, "gradient check exceeded tolerance");
  return M3_OK;
}

// ---- matching

m3_status m3_match(const m3_model* model, const m3_dataset* dataset, const m3_config* config,
                   uint32_t query_clip_id, const uint32_t* support_clip_ids, size_t n_support,
                   m3_match_result** out) {
  REQUIRE_ARG(model && dataset && out && (support_clip_ids || n_support == 0));
  return guarded([&] {
    const m3net::RunConfig cfg = config ? config->value : m3net::RunConfig{};
    const auto ep = m3net::make_match_episode(
        dataset->value, query_clip_id,
        std::vector<std::uint32_t>(support_clip_ids, support_clip_ids + n_support));
    const m3net::RunSwitches sw{cfg.encoders(), cfg.branches()};
    const std::size_t q = 0;
    const auto outcome = m3net::run_episode<float>(model->params, ep, std::span<const std::size_t>(&q, 1),
                                                   static_cast<float>(cfg.temperature), sw, nullptr);
    const auto& o = outcome.front();
    auto res = std::make_unique<m3_match_result>();
    res->class_ids = ep.class_ids;
    const m3net::RowVec<float>* vecs[7] = {&o.scores.d1,     &o.scores.d2,     &o.scores.d3, &o.prediction.y1,
                                           &o.prediction.y2, &o.prediction.y3, &o.prediction.y};
    for (int k = 0; k < 7; ++k) res->values[k].assign(vecs[k]->data(), vecs[k]->data() + vecs[k]->size());
    res->predicted = o.prediction.predicted_class;
    *out = res.release();
  });
}

size_t m3_match_result_n_way(const m3_match_result* result) {
  return result ? result->class_ids.size() : 0;
}

uint32_t m3_match_result_class_id(const m3_match_result* result, size_t index) {
  if (!result || index >= result->class_ids.size()) return 0;
  return result->class_ids[index];
}

m3_status m3_match_result_values(const m3_match_result* result, int which, double* values,
                                 size_t capacity) {
  REQUIRE_ARG(result && (values || capacity == 0));
  if (which < M3_BRANCH_D1 || which > M3_BRANCH_Y) return fail(M3_ERR_INVALID_ARGUMENT, "unknown vector");
  const auto& v = result->values[which];
  for (size_t i = 0; i < v.size() && i < capacity; ++i) values[i] = v[i];
  return M3_OK;
}

int m3_match_result_predicted(const m3_match_result* result) { return result ? result->predicted : -1; }

void m3_match_result_destroy(m3_match_result* result) { delete result; }

// ---- inspection

m3_status m3_inspect(const char* path, char** summary) {
  REQUIRE_ARG(path && summary);
  return guarded([&] {
    auto bytes = m3net::io::read_file(path);
    const bool is_ckpt = bytes.size() >= 4 && std::memcmp(bytes.data(), m3net::kCheckpointMagic, 4) == 0;
    if (is_ckpt)
      *summary = dup_string(summarize_checkpoint(m3net::decode_checkpoint(std::move(bytes))));
    else  // anything else must be an archive; a bad header raises BadMagic
      *summary = dup_string(summarize_archive(m3net::decode_feature_archive(std::move(bytes))));
  });
}

}  // extern "C"
