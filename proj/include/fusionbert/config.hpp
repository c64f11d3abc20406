#pragma once

// Flat `key = value` run configuration. Keys are dotted (`stage1.epochs`);
// `#` starts a comment; unknown keys and malformed values are errors.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fusionbert/dataset.hpp"
#include "fusionbert/model.hpp"
#include "fusionbert/training.hpp"

namespace fusionbert {

struct RunConfig {
  std::string profile = "desk";
  std::uint64_t seed = 0;
  data::DatasetOptions data;
  ModelConfig model;
  training::TrainConfig stage1;
  training::TrainConfig stage2;
  std::vector<std::size_t> eval_views{1, 2, 3, 6, 12};
  std::vector<std::size_t> eval_ks{1, 3, 5, 10};

  RunConfig() {
    stage1.stage = 1;
    stage1.epochs = 80;
    stage1.lr = 1e-3;
    stage2.stage = 2;
    stage2.epochs = 600;
    stage2.batch_size = 32;
    stage2.lr = 1e-3;
  }

  // Re-applies the seed to every component that carries one.
  void set_seed(std::uint64_t s) {
    seed = s;
    data.seed = s;
    stage1.seed = s;
    stage2.seed = s;
  }

  void validate() const {
    if (profile != "desk" && profile != "paper-shape")
      throw UsageError("config: profile must be 'desk' or 'paper-shape'");
    try {
      data.validate();
      model.validate();
      stage1.validate();
      stage2.validate();
    } catch (const DataError& e) {
      throw UsageError(e.what());
    }
    if (data.feature_dim != model.aggregator.feature_dim)
      throw UsageError("config: data.feature_dim must equal the model joint dimension");
    if (eval_views.empty() || eval_ks.empty()) throw UsageError("config: eval lists must be nonempty");
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <typename I>
I parse_uint(const std::string& key, const std::string& v) {
  I out{};
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw UsageError("config: " + key + " expects an integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw UsageError("config: " + key + " expects a number, got '" + v + "'");
  return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config: " + key + " expects true/false, got '" + v + "'");
}

}  // namespace config_detail

inline std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ','))
    out.push_back(config_detail::parse_uint<std::size_t>(key, config_detail::trim(item)));
  if (out.empty()) throw UsageError("config: " + key + " expects a comma-separated list");
  return out;
}

inline void apply_profile(RunConfig& c, const std::string& profile) {
  if (profile == "desk") {
    c.model = ModelConfig::desk();
  } else if (profile == "paper-shape") {
    c.model = ModelConfig::paper_shape();
    c.data.feature_dim = c.model.aggregator.feature_dim;
  } else {
    throw UsageError("config: unknown profile '" + profile + "'");
  }
  c.profile = profile;
}

inline void apply_key(RunConfig& c, const std::string& key, const std::string& v) {
  using namespace config_detail;
  auto sz = [&](std::size_t& dst) { dst = parse_uint<std::size_t>(key, v); };
  auto real = [&](double& dst) { dst = parse_real(key, v); };
  auto flag = [&](bool& dst) { dst = parse_bool(key, v); };
  auto& e = c.model.encoder;
  auto& a = c.model.aggregator;
  const std::map<std::string, std::function<void()>> setters{
      {"seed", [&] { c.set_seed(parse_uint<std::uint64_t>(key, v)); }},
      {"data.objects", [&] { sz(c.data.objects); }},
      {"data.classes", [&] { sz(c.data.classes); }},
      {"data.views", [&] { sz(c.data.views); }},
      {"data.points", [&] { sz(c.data.points); }},
      {"data.feature_dim", [&] { sz(c.data.feature_dim); }},
      {"data.text", [&] { flag(c.data.text); }},
      {"data.textureless", [&] { flag(c.data.textureless); }},
      {"encoder.layers", [&] { sz(e.layers); }},
      {"encoder.heads", [&] { sz(e.heads); }},
      {"encoder.hidden", [&] { sz(e.hidden); }},
      {"encoder.mlp_expansion", [&] { sz(e.mlp_expansion); }},
      {"encoder.patches", [&] { sz(e.patches); }},
      {"encoder.patch_size", [&] { sz(e.patch_size); }},
      {"encoder.joint_dim", [&] { sz(e.joint_dim); }},
      {"encoder.pointnet_hidden", [&] { sz(e.pointnet_hidden); }},
      {"encoder.adapters", [&] { flag(e.adapters); }},
      {"encoder.use_normals", [&] { flag(e.use_normals); }},
      {"aggregator.feature_dim", [&] { sz(a.feature_dim); }},
      {"aggregator.layers", [&] { sz(a.layers); }},
      {"aggregator.heads", [&] { sz(a.heads); }},
      {"aggregator.ffn_expansion", [&] { sz(a.ffn_expansion); }},
      {"aggregator.use_ffn", [&] { flag(a.use_ffn); }},
      {"stage1.batch_size", [&] { sz(c.stage1.batch_size); }},
      {"stage1.epochs", [&] { sz(c.stage1.epochs); }},
      {"stage1.lr", [&] { real(c.stage1.lr); }},
      {"stage1.tau_init", [&] { real(c.stage1.tau_init); }},
      {"stage1.tau_min", [&] { real(c.stage1.tau_min); }},
      {"stage1.tau_max", [&] { real(c.stage1.tau_max); }},
      {"stage2.batch_size", [&] { sz(c.stage2.batch_size); }},
      {"stage2.epochs", [&] { sz(c.stage2.epochs); }},
      {"stage2.lr", [&] { real(c.stage2.lr); }},
      {"stage2.tau_init", [&] { real(c.stage2.tau_init); }},
      {"stage2.tau_min", [&] { real(c.stage2.tau_min); }},
      {"stage2.tau_max", [&] { real(c.stage2.tau_max); }},
      {"stage2.max_views", [&] { sz(c.stage2.max_views); }},
      {"eval.views", [&] { c.eval_views = parse_size_list(key, v); }},
      {"eval.ks", [&] { c.eval_ks = parse_size_list(key, v); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw UsageError("config: unknown key '" + key + "'");
  it->second();
}

// The profile key is applied first wherever it appears, so explicit keys
// always override profile defaults.
inline RunConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(line_no) + ": expected key = value");
    auto key = config_detail::trim(line.substr(0, eq));
    auto val = config_detail::trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError("config line " + std::to_string(line_no) + ": empty key");
    if (seen.count(key)) throw UsageError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    seen[key] = line_no;
    kv.emplace_back(std::move(key), std::move(val));
  }
  RunConfig c;
  for (const auto& [k, v] : kv)
    if (k == "profile") apply_profile(c, v);
  for (const auto& [k, v] : kv)
    if (k != "profile") apply_key(c, k, v);
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw UsageError("config: no such file " + p.string());
  return parse_config(io::read_text(p));
}

}  // namespace fusionbert
