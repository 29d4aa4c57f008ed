// Weight checkpoint container.
//
// Layout:
//   GCNET-CHECKPOINT 1
//   meta <key> <value>                               (zero or more)
//   tensor <name> <f32|f64> <rank> <dims...> <offset> <nbytes>   (zero or more)
//   end
//   <payload: little-endian raw buffers, offsets relative to payload start>
#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "gcnet/numerics/tensor.hpp"

namespace gcnet {

class format_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class checkpoint {
 public:
  using buffer = std::variant<std::vector<float>, std::vector<double>>;
  struct entry {
    shape_t shape;
    buffer data;
  };

  void set_meta(const std::string& key, const std::string& value) {
    if (key.empty() || key.find_first_of(" \t\n") != std::string::npos)
      throw format_error("checkpoint: invalid meta key '" + key + "'");
    if (value.find('\n') != std::string::npos) throw format_error("checkpoint: meta value contains newline");
    meta_[key] = value;
  }
  bool has_meta(const std::string& key) const { return meta_.count(key) > 0; }
  const std::string& meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) throw format_error("checkpoint: missing meta key '" + key + "'");
    return it->second;
  }
  const std::map<std::string, std::string>& all_meta() const { return meta_; }

  template <class T>
  void put(const std::string& name, const basic_tensor<T>& t) {
    put_values(name, t.shape(), std::vector<T>(t.data().begin(), t.data().end()));
  }

  template <class T>
  void put_values(const std::string& name, shape_t shape, std::vector<T> values) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    if (name.empty() || name.find_first_of(" \t\n") != std::string::npos)
      throw format_error("checkpoint: invalid tensor name '" + name + "'");
    if (element_count(shape) != values.size()) throw format_error("checkpoint: shape/value mismatch for " + name);
    tensors_[name] = entry{std::move(shape), buffer{std::move(values)}};
  }

  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  const std::map<std::string, entry>& entries() const { return tensors_; }

  /// Values converted to T; throws when absent.
  template <class T>
  std::vector<T> values(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw format_error("checkpoint: missing tensor '" + name + "'");
    return std::visit([](const auto& v) { return std::vector<T>(v.begin(), v.end()); }, it->second.data);
  }

  const shape_t& shape(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw format_error("checkpoint: missing tensor '" + name + "'");
    return it->second.shape;
  }

  template <class T>
  basic_tensor<T> get(const std::string& name) const {
    return basic_tensor<T>(shape(name), values<T>(name));
  }

  std::string serialize() const {
    std::ostringstream head;
    std::string payload;
    head << "GCNET-CHECKPOINT 1\n";
    for (const auto& [k, v] : meta_) head << "meta " << k << ' ' << v << '\n';
    for (const auto& [name, e] : tensors_) {
      const bool f32 = std::holds_alternative<std::vector<float>>(e.data);
      const std::size_t offset = payload.size();
      std::visit([&payload](const auto& v) { append_le(payload, v); }, e.data);
      head << "tensor " << name << ' ' << (f32 ? "f32" : "f64") << ' ' << e.shape.size();
      for (auto d : e.shape) head << ' ' << d;
      head << ' ' << offset << ' ' << payload.size() - offset << '\n';
    }
    head << "end\n";
    return head.str() + payload;
  }

  static checkpoint deserialize(const std::string& bytes) {
    checkpoint ck;
    std::size_t pos = 0;
    std::size_t line_no = 0;
    auto next_line = [&]() -> std::string {
      const auto nl = bytes.find('\n', pos);
      if (nl == std::string::npos) throw format_error("checkpoint: truncated manifest at line " + std::to_string(line_no + 1));
      std::string line = bytes.substr(pos, nl - pos);
      pos = nl + 1;
      ++line_no;
      return line;
    };
    if (next_line() != "GCNET-CHECKPOINT 1") throw format_error("checkpoint: bad magic/version on line 1");
    struct pending {
      std::string name, dtype;
      shape_t shape;
      std::size_t offset, nbytes;
    };
    std::vector<pending> todo;
    for (;;) {
      const std::string line = next_line();
      if (line == "end") break;
      std::istringstream is(line);
      std::string kind;
      is >> kind;
      if (kind == "meta") {
        std::string key;
        is >> key;
        std::string value;
        std::getline(is, value);
        if (!value.empty() && value.front() == ' ') value.erase(0, 1);
        ck.meta_[key] = value;
      } else if (kind == "tensor") {
        pending p;
        std::size_t rank = 0;
        if (!(is >> p.name >> p.dtype >> rank)) throw format_error("checkpoint: malformed tensor line " + std::to_string(line_no));
        p.shape.resize(rank);
        for (auto& d : p.shape)
          if (!(is >> d)) throw format_error("checkpoint: malformed shape on line " + std::to_string(line_no));
        if (!(is >> p.offset >> p.nbytes)) throw format_error("checkpoint: malformed offsets on line " + std::to_string(line_no));
        if (p.dtype != "f32" && p.dtype != "f64") throw format_error("checkpoint: unknown dtype on line " + std::to_string(line_no));
        todo.push_back(std::move(p));
      } else {
        throw format_error("checkpoint: unknown record '" + kind + "' on line " + std::to_string(line_no));
      }
    }
    const std::string_view payload(bytes.data() + pos, bytes.size() - pos);
    for (const auto& p : todo) {
      const std::size_t width = p.dtype == "f32" ? 4 : 8;
      if (p.nbytes != element_count(p.shape) * width || p.offset + p.nbytes > payload.size())
        throw format_error("checkpoint: buffer for '" + p.name + "' out of range");
      const char* src = payload.data() + p.offset;
      if (width == 4)
        ck.tensors_[p.name] = entry{p.shape, buffer{read_le<float>(src, element_count(p.shape))}};
      else
        ck.tensors_[p.name] = entry{p.shape, buffer{read_le<double>(src, element_count(p.shape))}};
    }
    return ck;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw format_error("checkpoint: cannot write " + path);
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }

  static checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("checkpoint: cannot read " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
  }

 private:
  template <class T>
  static void append_le(std::string& out, const std::vector<T>& v) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (T x : v) {
      U bits = std::bit_cast<U>(x);
      for (std::size_t b = 0; b < sizeof(U); ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
    }
  }

  template <class T>
  static std::vector<T> read_le(const char* src, std::size_t n) {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    std::vector<T> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      U bits = 0;
      for (std::size_t b = 0; b < sizeof(U); ++b)
        bits |= static_cast<U>(static_cast<unsigned char>(src[i * sizeof(U) + b])) << (8 * b);
      out[i] = std::bit_cast<T>(bits);
    }
    return out;
  }

  std::map<std::string, std::string> meta_;
  std::map<std::string, entry> tensors_;
};

}  // namespace gcnet
