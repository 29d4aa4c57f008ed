#pragma once

#include <map>
#include <stdexcept>
#include <string>

namespace gcnet {

enum class position_embedding_kind { cosine, explicit_index };

inline std::string to_string(position_embedding_kind k) {
  return k == position_embedding_kind::cosine ? "cosine" : "explicit";
}

inline position_embedding_kind parse_position_embedding_kind(const std::string& s) {
  if (s == "cosine") return position_embedding_kind::cosine;
  if (s == "explicit") return position_embedding_kind::explicit_index;
  throw std::invalid_argument("unknown position embedding kind '" + s + "' (expected cosine|explicit)");
}

class config_error : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct network_config {
  std::size_t input_h = 128;
  std::size_t input_w = 224;
  std::size_t channels = 64;         // c
  std::size_t corr_channels = 64;    // c'
  std::size_t classes = 1;           // n
  std::size_t confidence_hidden = 32;
  bool use_gate = true;
  bool use_value_concat = true;
  position_embedding_kind position_embedding = position_embedding_kind::cosine;

  static constexpr std::size_t stride = 8;

  std::size_t feature_h() const { return input_h / stride; }
  std::size_t feature_w() const { return input_w / stride; }
  std::size_t positions() const { return feature_h() * feature_w(); }
  std::size_t head_width() const { return corr_channels + (use_value_concat ? channels : 0); }

  void validate() const {
    if (input_h == 0 || input_w == 0 || input_h % stride || input_w % stride)
      throw config_error("network: input_h and input_w must be positive multiples of 8 (got " +
                         std::to_string(input_h) + "x" + std::to_string(input_w) + ")");
    if (channels < 4 || channels % 4)
      throw config_error("network: channels must be a positive multiple of 4 (backbone uses c/4, c/2, c)");
    if (channels % 2) throw config_error("network: channels must be even for the position embedding");
    if (corr_channels == 0 || classes == 0 || confidence_hidden == 0)
      throw config_error("network: corr_channels, classes and confidence_hidden must be positive");
  }

  std::map<std::string, std::string> to_kv() const {
    return {{"input_h", std::to_string(input_h)},
            {"input_w", std::to_string(input_w)},
            {"channels", std::to_string(channels)},
            {"corr_channels", std::to_string(corr_channels)},
            {"classes", std::to_string(classes)},
            {"confidence_hidden", std::to_string(confidence_hidden)},
            {"use_gate", use_gate ? "true" : "false"},
            {"use_value_concat", use_value_concat ? "true" : "false"},
            {"position_embedding", to_string(position_embedding)}};
  }

  static network_config from_kv(const std::map<std::string, std::string>& kv) {
    network_config c;
    auto num = [&](const char* k, std::size_t& dst) {
      if (auto it = kv.find(k); it != kv.end()) dst = std::stoul(it->second);
    };
    auto flag = [&](const char* k, bool& dst) {
      if (auto it = kv.find(k); it != kv.end()) {
        if (it->second != "true" && it->second != "false")
          throw config_error(std::string("network: ") + k + " must be true or false");
        dst = it->second == "true";
      }
    };
    num("input_h", c.input_h);
    num("input_w", c.input_w);
    num("channels", c.channels);
    num("corr_channels", c.corr_channels);
    num("classes", c.classes);
    num("confidence_hidden", c.confidence_hidden);
    flag("use_gate", c.use_gate);
    flag("use_value_concat", c.use_value_concat);
    if (auto it = kv.find("position_embedding"); it != kv.end())
      c.position_embedding = parse_position_embedding_kind(it->second);
    c.validate();
    return c;
  }
};

}  // namespace gcnet
