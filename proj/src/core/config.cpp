#include "m3net/config.hpp"

#include "m3net/errors.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace m3net {

namespace {

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::kConfig, msg); }

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* first = text.data();
  const char* last = first + text.size();
  std::from_chars_result res;
  if constexpr (std::is_floating_point_v<T>) {
    // from_chars for double is not available on every libstdc++; strtod is.
    char* end = nullptr;
    v = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size())
      config_error("bad value for " + key + ": '" + text + "'");
    return v;
  } else {
    res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
      config_error("bad value for " + key + ": '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  config_error("bad boolean for " + key + ": '" + text + "'");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define INT_FIELD(name)                                                                      \
  Field {                                                                                    \
    #name, [](RunConfig& c, const std::string& v) { c.name = parse_number<int>(#name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.name); }                            \
  }
#define REAL_FIELD(name)                                                                        \
  Field {                                                                                       \
    #name, [](RunConfig& c, const std::string& v) { c.name = parse_number<double>(#name, v); }, \
        [](const RunConfig& c) { return format_double(c.name); }                                \
  }
#define BOOL_FIELD(name)                                                              \
  Field {                                                                             \
    #name, [](RunConfig& c, const std::string& v) { c.name = parse_bool(#name, v); }, \
        [](const RunConfig& c) { return std::string(c.name ? "true" : "false"); }     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      INT_FIELD(n_way),
      INT_FIELD(k_shot),
      INT_FIELD(n_query),
      INT_FIELD(d),
      INT_FIELD(d_k),
      INT_FIELD(d_mlp),
      INT_FIELD(n_grid),
      INT_FIELD(frames),
      INT_FIELD(height),
      INT_FIELD(width),
      INT_FIELD(channels),
      REAL_FIELD(learning_rate),
      REAL_FIELD(decay_factor),
      INT_FIELD(decay_every),
      INT_FIELD(total_episodes),
      REAL_FIELD(temperature),
      Field{"seed",
            [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      INT_FIELD(checkpoint_every),
      INT_FIELD(val_episodes),
      INT_FIELD(eval_episodes),
      Field{"archive", [](RunConfig& c, const std::string& v) { c.archive = v; },
            [](const RunConfig& c) { return c.archive; }},
      INT_FIELD(train_classes),
      INT_FIELD(val_classes),
      INT_FIELD(test_classes),
      INT_FIELD(n_subactions),
      INT_FIELD(subaction_count),
      REAL_FIELD(noise_sigma),
      REAL_FIELD(warp_strength),
      INT_FIELD(clips_per_class),
      BOOL_FIELD(use_ifce),
      BOOL_FIELD(use_ivce),
      BOOL_FIELD(use_iece),
      BOOL_FIELD(use_instance_matching),
      BOOL_FIELD(use_category_matching),
      BOOL_FIELD(use_task_matching),
  };
  return f;
}

}  // namespace

ModelDims RunConfig::dims() const {
  return {channels, d, d_k, d_mlp, n_grid, frames, n_way * k_shot + 1};
}

EpisodeSpec RunConfig::episode_spec(std::uint64_t episode_seed) const {
  return {n_way, k_shot, n_query, episode_seed};
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) config_error(what);
  };
  require(n_way >= 2, "n_way must be >= 2");
  require(k_shot >= 1, "k_shot must be >= 1");
  require(n_query >= 1, "n_query must be >= 1");
  require(d >= 2, "d must be >= 2");
  require(d_k >= 1, "d_k must be >= 1");
  require(d_mlp >= 1, "d_mlp must be >= 1");
  require(frames >= 1 && frames <= 65535, "frames must be in [1, 65535]");
  require(height >= 1 && height <= 65535 && width >= 1 && width <= 65535, "height/width out of range");
  require(channels >= 1 && channels <= 65535, "channels out of range");
  require(n_grid >= 1 && n_grid <= height && n_grid <= width, "n_grid must be in [1, min(h, w)]");
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(decay_factor > 0.0 && decay_factor <= 1.0, "decay_factor must be in (0, 1]");
  require(decay_every >= 1, "decay_every must be >= 1");
  require(total_episodes >= 0, "total_episodes must be >= 0");
  require(temperature > 0.0, "temperature must be > 0");
  require(checkpoint_every >= 0, "checkpoint_every must be >= 0");
  require(val_episodes >= 0, "val_episodes must be >= 0");
  require(eval_episodes >= 1, "eval_episodes must be >= 1");
  require(train_classes >= 0 && val_classes >= 0 && test_classes >= 0, "class counts must be >= 0");
  require(n_subactions >= 2, "n_subactions must be >= 2");
  require(subaction_count >= 2 && subaction_count <= frames, "subaction_count must be in [2, frames]");
  require(noise_sigma >= 0.0, "noise_sigma must be >= 0");
  require(warp_strength >= 0.0 && warp_strength <= 1.0, "warp_strength must be in [0, 1]");
  require(clips_per_class >= 1, "clips_per_class must be >= 1");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  config_error("unknown key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  for (const auto& f : fields())
    if (f.key == key) return f.get(*this);
  config_error("unknown key '" + key + "'");
}

std::string RunConfig::to_string() const {
  std::ostringstream out;
  for (const auto& f : fields()) out << f.key << " = " << f.get(*this) << "\n";
  return out.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) config_error("line " + std::to_string(lineno) + ": expected key = value");
    c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "cannot create " + path);
  out << to_string();
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.emplace_back(f.key);
  return k;
}

RunConfig RunConfig::grad_check_preset() {
  RunConfig c;
  c.n_way = 2;
  c.k_shot = 1;
  c.n_query = 1;
  c.d = 8;
  c.d_k = 4;
  c.d_mlp = 16;
  c.n_grid = 2;
  c.frames = 3;
  c.height = 4;
  c.width = 4;
  c.channels = 3;
  c.subaction_count = 2;
  return c;
}

}  // namespace m3net
