// Flat TOML-style configuration: [section] headers and key = value lines.
//
//   # comment
//   [network]
//   channels = 64
//   position_embedding = "cosine"
#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "gcnet/layers/config.hpp"
#include "gcnet/pipeline/tracker.hpp"
#include "gcnet/synthdata/scene.hpp"
#include "gcnet/train/trainer.hpp"

namespace gcnet {

using config_sections = std::map<std::string, std::map<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

inline bool bare_value(const std::string& v) {
  if (v == "true" || v == "false") return true;
  char* end = nullptr;
  std::strtod(v.c_str(), &end);
  return !v.empty() && end == v.c_str() + v.size();
}

}  // namespace detail

inline config_sections parse_config(std::istream& is, const std::string& source = "config") {
  config_sections out;
  std::string line, section;
  std::size_t n = 0;
  auto fail = [&](const std::string& what) { throw config_error(source + ":" + std::to_string(n) + ": " + what); };
  while (std::getline(is, line)) {
    ++n;
    std::string s = detail::trim(line);
    if (s.empty() || s[0] == '#') continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) fail("malformed section header");
      section = detail::trim(s.substr(1, s.size() - 2));
      out[section];
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) fail("expected 'key = value'");
    if (section.empty()) fail("key outside of any [section]");
    const std::string key = detail::trim(s.substr(0, eq));
    std::string value = detail::trim(s.substr(eq + 1));
    if (key.empty()) fail("empty key");
    if (value.size() >= 2 && value.front() == '"') {
      const auto close = value.find('"', 1);
      if (close == std::string::npos) fail("unterminated string");
      const std::string rest = detail::trim(value.substr(close + 1));
      if (!rest.empty() && rest[0] != '#') fail("trailing characters after string");
      value = value.substr(1, close - 1);
    } else {
      const auto hash = value.find('#');
      if (hash != std::string::npos) value = detail::trim(value.substr(0, hash));
      if (!detail::bare_value(value)) fail("value for '" + key + "' must be a number, true/false or a quoted string");
    }
    if (out[section].count(key)) fail("duplicate key '" + key + "'");
    out[section][key] = value;
  }
  return out;
}

inline void write_config(std::ostream& os, const config_sections& cfg) {
  bool first = true;
  for (const auto& [section, kv] : cfg) {
    if (!first) os << '\n';
    first = false;
    os << '[' << section << "]\n";
    for (const auto& [k, v] : kv) os << k << " = " << (detail::bare_value(v) ? v : '"' + v + '"') << '\n';
  }
}

inline std::map<std::string, std::string> to_kv(const pipeline_config& p) {
  auto d = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  return {{"p1", d(p.p1)},
          {"p2", d(p.p2)},
          {"p3", d(p.p3)},
          {"confidence_cap", d(p.confidence_cap)},
          {"max_tracks", std::to_string(p.max_tracks)},
          {"candidate_rule", p.candidates == candidate_rule::prose ? "prose" : "listing"}};
}

inline pipeline_config pipeline_from_kv(const std::map<std::string, std::string>& kv) {
  pipeline_config p;
  auto num = [&](const char* k, double& dst) {
    if (auto it = kv.find(k); it != kv.end()) dst = std::stod(it->second);
  };
  num("p1", p.p1);
  num("p2", p.p2);
  num("p3", p.p3);
  num("confidence_cap", p.confidence_cap);
  if (auto it = kv.find("max_tracks"); it != kv.end()) p.max_tracks = std::stoul(it->second);
  if (auto it = kv.find("candidate_rule"); it != kv.end()) {
    if (it->second == "prose")
      p.candidates = candidate_rule::prose;
    else if (it->second == "listing")
      p.candidates = candidate_rule::listing;
    else
      throw config_error("pipeline: candidate_rule must be prose or listing");
  }
  p.validate();
  return p;
}

/// Everything a command needs; written next to every artifact.
struct run_config {
  network_config network;
  pipeline_config pipeline;
  scene_config scene;
  train_config train;
  train_stage stage = train_stage::detect_pretrain;
  std::size_t train_sequences = 48;
  std::size_t test_sequences = 10;
  double peak_threshold = 0.05;  // detection AP
  double iou_threshold = 0.5;    // AP and CLEAR-MOT matching

  config_sections to_sections() const {
    config_sections s;
    s["network"] = network.to_kv();
    s["pipeline"] = to_kv(pipeline);
    s["scene"] = scene.to_kv();
    s["train"] = train.to_kv();
    s["train"]["stage"] = to_string(stage);
    char buf[64];
    s["data"]["train_sequences"] = std::to_string(train_sequences);
    s["data"]["test_sequences"] = std::to_string(test_sequences);
    std::snprintf(buf, sizeof buf, "%.17g", peak_threshold);
    s["eval"]["peak_threshold"] = buf;
    std::snprintf(buf, sizeof buf, "%.17g", iou_threshold);
    s["eval"]["iou_threshold"] = buf;
    return s;
  }

  static run_config from_sections(const config_sections& s) {
    static const std::map<std::string, int> known{{"network", 0}, {"pipeline", 0}, {"scene", 0},
                                                  {"train", 0},   {"data", 0},     {"eval", 0}};
    for (const auto& [name, kv] : s)
      if (!known.count(name)) throw config_error("config: unknown section [" + name + "]");
    auto section = [&](const char* name) {
      auto it = s.find(name);
      return it == s.end() ? std::map<std::string, std::string>{} : it->second;
    };
    run_config c;
    try {
      c.network = network_config::from_kv(section("network"));
      c.pipeline = pipeline_from_kv(section("pipeline"));
      c.scene = scene_config::from_kv(section("scene"));
      auto train = section("train");
      if (auto it = train.find("stage"); it != train.end()) {
        c.stage = parse_train_stage(it->second);
        train.erase(it);
      }
      c.train = train_config::from_kv(train);
      auto data = section("data");
      if (auto it = data.find("train_sequences"); it != data.end()) c.train_sequences = std::stoul(it->second);
      if (auto it = data.find("test_sequences"); it != data.end()) c.test_sequences = std::stoul(it->second);
      auto eval = section("eval");
      if (auto it = eval.find("peak_threshold"); it != eval.end()) c.peak_threshold = std::stod(it->second);
      if (auto it = eval.find("iou_threshold"); it != eval.end()) c.iou_threshold = std::stod(it->second);
    } catch (const config_error&) {
      throw;
    } catch (const std::logic_error& e) {
      throw config_error(std::string("config: malformed number (") + e.what() + ")");
    }
    c.validate();
    return c;
  }

  void validate() const {
    network.validate();
    pipeline.validate();
    scene.validate();
    train.validate();
    if (scene.height != network.input_h || scene.width != network.input_w)
      throw config_error("config: scene size must equal the network input size");
    if (!(peak_threshold > 0 && peak_threshold < 1)) throw config_error("eval: peak_threshold must lie in (0, 1)");
    if (!(iou_threshold > 0 && iou_threshold <= 1)) throw config_error("eval: iou_threshold must lie in (0, 1]");
  }
};

inline run_config load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot read config file " + path);
  return run_config::from_sections(parse_config(in, path));
}

inline void save_run_config(const std::string& path, const run_config& c) {
  std::ofstream out(path);
  if (!out) throw config_error("cannot write config file " + path);
  write_config(out, c.to_sections());
}

}  // namespace gcnet
