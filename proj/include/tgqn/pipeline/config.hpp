#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tgqn::pipeline {

enum class Variant { kTgqn, kGqn, kSeqGqn };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kTgqn: return "tgqn";
    case Variant::kGqn: return "gqn";
    case Variant::kSeqGqn: return "seqgqn";
  }
  return "tgqn";
}

inline Variant variant_from(const std::string& s) {
  if (s == "tgqn") return Variant::kTgqn;
  if (s == "gqn") return Variant::kGqn;
  if (s == "seqgqn") return Variant::kSeqGqn;
  throw std::invalid_argument("unknown variant: " + s);
}

// Every knob of a run. The text form is "key = value" lines; unknown keys
// are rejected so typos fail loudly.
struct RunConfig {
  Variant variant = Variant::kTgqn;
  bool masked_train = true;
  bool masked_eval = true;
  int n_views = 3;
  int max_views = 8;
  int m_cores = 4;
  int image_size = 32;
  int d = 256;
  int enc_base = 32;
  int attn_layers = 2;
  int attn_heads = 4;
  int attn_ff_mult = 4;
  int z_channels = 3;
  int core_channels = 64;
  int canvas_channels = 64;
  int core_kernel = 3;
  int head_kernel = 5;
  int target_embed = 8;
  int canvas_embed = 8;
  double beta = 250.0;
  double sigma_start = 2.0;
  double sigma_end = 0.7;
  double sigma_anneal_frac = 0.8;
  double lr_start = 5e-4;
  double lr_end = 5e-5;
  int batch_size = 16;
  long long max_steps = 20000;
  std::uint64_t seed = 0;
  std::string train_dataset;
  std::string eval_dataset;
  int eval_scenes = 50;
  int eval_repeats = 5;
  int eval_context_views = 3;
  long long eval_interval = 2000;
  long long checkpoint_interval = 0;  // 0: final checkpoint only
  long long log_interval = 100;
  int shards = 2;  // deterministic batch split across worker threads
  bool order_train = true;
  bool order_eval = false;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
  std::istringstream is(v);
  T out;
  is >> out;
  if (is.fail() || !is.eof())
    throw std::invalid_argument("config: bad value for " + key + ": " + v);
  return out;
}

}  // namespace detail

// Field table shared by the parser, serialiser, and the checkpoint manifest
// diff. Values travel as strings.
inline std::vector<std::string> config_keys() {
  return {"variant",        "masked_train",    "masked_eval",
          "n_views",        "max_views",       "m_cores",
          "image_size",     "d",               "enc_base",
          "attn_layers",    "attn_heads",      "attn_ff_mult",
          "z_channels",     "core_channels",   "canvas_channels",
          "core_kernel",    "head_kernel",     "target_embed",
          "canvas_embed",   "beta",            "sigma_start",
          "sigma_end",      "sigma_anneal_frac", "lr_start",
          "lr_end",         "batch_size",      "max_steps",
          "seed",           "train_dataset",   "eval_dataset",
          "eval_scenes",    "eval_repeats",    "eval_context_views",
          "eval_interval",  "checkpoint_interval", "log_interval",
          "shards",         "order_train",     "order_eval"};
}

inline std::string config_get(const RunConfig& c, const std::string& key) {
  std::ostringstream os;
  os.precision(17);
  if (key == "variant") os << variant_name(c.variant);
  else if (key == "masked_train") os << (c.masked_train ? "true" : "false");
  else if (key == "masked_eval") os << (c.masked_eval ? "true" : "false");
  else if (key == "n_views") os << c.n_views;
  else if (key == "max_views") os << c.max_views;
  else if (key == "m_cores") os << c.m_cores;
  else if (key == "image_size") os << c.image_size;
  else if (key == "d") os << c.d;
  else if (key == "enc_base") os << c.enc_base;
  else if (key == "attn_layers") os << c.attn_layers;
  else if (key == "attn_heads") os << c.attn_heads;
  else if (key == "attn_ff_mult") os << c.attn_ff_mult;
  else if (key == "z_channels") os << c.z_channels;
  else if (key == "core_channels") os << c.core_channels;
  else if (key == "canvas_channels") os << c.canvas_channels;
  else if (key == "core_kernel") os << c.core_kernel;
  else if (key == "head_kernel") os << c.head_kernel;
  else if (key == "target_embed") os << c.target_embed;
  else if (key == "canvas_embed") os << c.canvas_embed;
  else if (key == "beta") os << c.beta;
  else if (key == "sigma_start") os << c.sigma_start;
  else if (key == "sigma_end") os << c.sigma_end;
  else if (key == "sigma_anneal_frac") os << c.sigma_anneal_frac;
  else if (key == "lr_start") os << c.lr_start;
  else if (key == "lr_end") os << c.lr_end;
  else if (key == "batch_size") os << c.batch_size;
  else if (key == "max_steps") os << c.max_steps;
  else if (key == "seed") os << c.seed;
  else if (key == "train_dataset") os << c.train_dataset;
  else if (key == "eval_dataset") os << c.eval_dataset;
  else if (key == "eval_scenes") os << c.eval_scenes;
  else if (key == "eval_repeats") os << c.eval_repeats;
  else if (key == "eval_context_views") os << c.eval_context_views;
  else if (key == "eval_interval") os << c.eval_interval;
  else if (key == "checkpoint_interval") os << c.checkpoint_interval;
  else if (key == "log_interval") os << c.log_interval;
  else if (key == "shards") os << c.shards;
  else if (key == "order_train") os << (c.order_train ? "true" : "false");
  else if (key == "order_eval") os << (c.order_eval ? "true" : "false");
  else throw std::invalid_argument("config: unknown key " + key);
  return os.str();
}

inline void config_set(RunConfig& c, const std::string& key,
                       const std::string& v) {
  using detail::parse_bool;
  using detail::parse_num;
  if (key == "variant") c.variant = variant_from(v);
  else if (key == "masked_train") c.masked_train = parse_bool(v, key);
  else if (key == "masked_eval") c.masked_eval = parse_bool(v, key);
  else if (key == "n_views") c.n_views = parse_num<int>(v, key);
  else if (key == "max_views") c.max_views = parse_num<int>(v, key);
  else if (key == "m_cores") c.m_cores = parse_num<int>(v, key);
  else if (key == "image_size") c.image_size = parse_num<int>(v, key);
  else if (key == "d") c.d = parse_num<int>(v, key);
  else if (key == "enc_base") c.enc_base = parse_num<int>(v, key);
  else if (key == "attn_layers") c.attn_layers = parse_num<int>(v, key);
  else if (key == "attn_heads") c.attn_heads = parse_num<int>(v, key);
  else if (key == "attn_ff_mult") c.attn_ff_mult = parse_num<int>(v, key);
  else if (key == "z_channels") c.z_channels = parse_num<int>(v, key);
  else if (key == "core_channels") c.core_channels = parse_num<int>(v, key);
  else if (key == "canvas_channels") c.canvas_channels = parse_num<int>(v, key);
  else if (key == "core_kernel") c.core_kernel = parse_num<int>(v, key);
  else if (key == "head_kernel") c.head_kernel = parse_num<int>(v, key);
  else if (key == "target_embed") c.target_embed = parse_num<int>(v, key);
  else if (key == "canvas_embed") c.canvas_embed = parse_num<int>(v, key);
  else if (key == "beta") c.beta = parse_num<double>(v, key);
  else if (key == "sigma_start") c.sigma_start = parse_num<double>(v, key);
  else if (key == "sigma_end") c.sigma_end = parse_num<double>(v, key);
  else if (key == "sigma_anneal_frac")
    c.sigma_anneal_frac = parse_num<double>(v, key);
  else if (key == "lr_start") c.lr_start = parse_num<double>(v, key);
  else if (key == "lr_end") c.lr_end = parse_num<double>(v, key);
  else if (key == "batch_size") c.batch_size = parse_num<int>(v, key);
  else if (key == "max_steps") c.max_steps = parse_num<long long>(v, key);
  else if (key == "seed") c.seed = parse_num<std::uint64_t>(v, key);
  else if (key == "train_dataset") c.train_dataset = v;
  else if (key == "eval_dataset") c.eval_dataset = v;
  else if (key == "eval_scenes") c.eval_scenes = parse_num<int>(v, key);
  else if (key == "eval_repeats") c.eval_repeats = parse_num<int>(v, key);
  else if (key == "eval_context_views")
    c.eval_context_views = parse_num<int>(v, key);
  else if (key == "eval_interval") c.eval_interval = parse_num<long long>(v, key);
  else if (key == "checkpoint_interval")
    c.checkpoint_interval = parse_num<long long>(v, key);
  else if (key == "log_interval") c.log_interval = parse_num<long long>(v, key);
  else if (key == "shards") c.shards = parse_num<int>(v, key);
  else if (key == "order_train") c.order_train = parse_bool(v, key);
  else if (key == "order_eval") c.order_eval = parse_bool(v, key);
  else throw std::invalid_argument("config: unknown key " + key);
}

inline void validate_config(const RunConfig& c) {
  if (c.n_views < 1 || c.n_views > c.max_views)
    throw std::invalid_argument("config: n_views out of [1, max_views]");
  if (c.image_size % 4 != 0 || c.image_size < 4)
    throw std::invalid_argument("config: image_size must be a multiple of 4");
  if (c.d % c.attn_heads != 0)
    throw std::invalid_argument("config: d must be divisible by attn_heads");
  if (c.m_cores < 1) throw std::invalid_argument("config: m_cores must be >= 1");
  if (c.batch_size < 1 || c.shards < 1 || c.shards > c.batch_size)
    throw std::invalid_argument("config: bad batch_size/shards");
  if (c.max_steps < 1) throw std::invalid_argument("config: max_steps must be >= 1");
  if (c.beta < 0) throw std::invalid_argument("config: beta must be >= 0");
  if (c.sigma_start <= 0 || c.sigma_end <= 0)
    throw std::invalid_argument("config: sigma must be positive");
  if (c.eval_context_views < 1)
    throw std::invalid_argument("config: eval_context_views must be >= 1");
}

inline std::string config_text(const RunConfig& c) {
  std::ostringstream os;
  for (const auto& key : config_keys())
    os << key << " = " << config_get(c, key) << "\n";
  return os.str();
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not 'key = value': " + line);
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    config_set(c, key, value);
  }
  validate_config(c);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("config '" + path + "': cannot open");
  std::stringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str());
}

// Architecture-determining fields; a checkpoint refuses to load under a
// config that disagrees on any of these.
inline std::vector<std::string> model_shape_keys() {
  return {"variant",      "m_cores",       "image_size",    "d",
          "enc_base",     "attn_layers",   "attn_heads",    "attn_ff_mult",
          "z_channels",   "core_channels", "canvas_channels", "core_kernel",
          "head_kernel",  "target_embed",  "canvas_embed"};
}

}  // namespace tgqn::pipeline
