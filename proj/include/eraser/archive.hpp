#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "eraser/nn.hpp"
#include "eraser/tensor.hpp"

namespace eraser {

// Versioned binary container of named tensors plus string metadata. Layout
// (little-endian):
//   "TXERASE\0"  u32 version
//   u32 meta_count   { str key, str value }*
//   u32 tensor_count { str name, u8 dtype (4 = f32, 8 = f64), u32 ndim, i32 dims[ndim], data }*
// where str is a u32 byte length followed by the bytes.
class Archive {
 public:
  static constexpr std::uint32_t kVersion = 1;
  static constexpr char kMagic[8] = {'T', 'X', 'E', 'R', 'A', 'S', 'E', '\0'};

  struct Entry {
    Shape shape;
    std::uint8_t dtype = 4;
    std::vector<double> values;
  };

  void set_meta(const std::string& key, const std::string& value) { meta_[key] = value; }

  std::optional<std::string> meta(const std::string& key) const {
    auto it = meta_.find(key);
    if (it == meta_.end()) return std::nullopt;
    return it->second;
  }

  std::string require_meta(const std::string& key) const {
    auto v = meta(key);
    if (!v) throw std::runtime_error("archive is missing metadata key '" + key + "'");
    return *v;
  }

  const std::map<std::string, std::string>& meta_entries() const { return meta_; }
  const std::map<std::string, Entry>& tensors() const { return tensors_; }
  bool has(const std::string& name) const { return tensors_.count(name) != 0; }

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    Entry e;
    e.shape = t.shape();
    e.dtype = sizeof(T);
    e.values.assign(t.values().begin(), t.values().end());
    tensors_[name] = std::move(e);
  }

  template <typename T>
  Tensor<T> get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::runtime_error("archive has no tensor '" + name + "'");
    std::vector<T> data(it->second.values.begin(), it->second.values.end());
    return Tensor<T>(it->second.shape, std::move(data));
  }

  template <typename T>
  Tensor<T> get(const std::string& name, const Shape& expected) const {
    Tensor<T> t = get<T>(name);
    if (t.shape() != expected) {
      throw std::runtime_error("tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                               shape_string(expected));
    }
    return t;
  }

  template <typename T>
  void put_parameters(const std::string& prefix, const nn::ParameterSet<T>& params) {
    for (const auto& [name, v] : params.entries()) put(prefix + name, v.value());
  }

  // Overwrites every parameter in `params` from `prefix`-qualified entries;
  // a missing entry or a shape mismatch is an error.
  template <typename T>
  void load_parameters(const std::string& prefix, nn::ParameterSet<T>& params) const {
    for (auto [name, v] : params.entries()) v.mutable_value() = get<T>(prefix + name, v.shape());
  }

  void save(const std::filesystem::path& path) const {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
      std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
      if (!os) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
      os.write(kMagic, sizeof(kMagic));
      write_u32(os, kVersion);
      write_u32(os, static_cast<std::uint32_t>(meta_.size()));
      for (const auto& [k, v] : meta_) {
        write_str(os, k);
        write_str(os, v);
      }
      write_u32(os, static_cast<std::uint32_t>(tensors_.size()));
      for (const auto& [name, e] : tensors_) {
        write_str(os, name);
        os.put(static_cast<char>(e.dtype));
        write_u32(os, static_cast<std::uint32_t>(e.shape.size()));
        for (int d : e.shape) write_raw(os, static_cast<std::int32_t>(d));
        if (e.dtype == 4) {
          std::vector<float> f(e.values.begin(), e.values.end());
          os.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
        } else {
          os.write(reinterpret_cast<const char*>(e.values.data()),
                   static_cast<std::streamsize>(e.values.size() * sizeof(double)));
        }
      }
      if (!os) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  static Archive load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open archive " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0) {
      throw std::runtime_error(path.string() + " is not a model archive");
    }
    const auto version = read_u32(is, path);
    if (version != kVersion) {
      throw std::runtime_error(path.string() + ": unsupported archive version " + std::to_string(version));
    }
    Archive a;
    const auto meta_count = read_u32(is, path);
    for (std::uint32_t i = 0; i < meta_count; ++i) {
      std::string k = read_str(is, path);
      a.meta_[k] = read_str(is, path);
    }
    const auto count = read_u32(is, path);
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = read_str(is, path);
      Entry e;
      e.dtype = static_cast<std::uint8_t>(is.get());
      if (e.dtype != 4 && e.dtype != 8) throw std::runtime_error(path.string() + ": bad dtype for " + name);
      const auto ndim = read_u32(is, path);
      if (ndim > 8) throw std::runtime_error(path.string() + ": bad rank for " + name);
      for (std::uint32_t d = 0; d < ndim; ++d) {
        std::int32_t v = 0;
        is.read(reinterpret_cast<char*>(&v), sizeof(v));
        if (v < 0) throw std::runtime_error(path.string() + ": bad dimension for " + name);
        e.shape.push_back(v);
      }
      const std::size_t n = shape_size(e.shape);
      if (e.dtype == 4) {
        std::vector<float> f(n);
        is.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(n * sizeof(float)));
        e.values.assign(f.begin(), f.end());
      } else {
        e.values.resize(n);
        is.read(reinterpret_cast<char*>(e.values.data()), static_cast<std::streamsize>(n * sizeof(double)));
      }
      if (!is) throw std::runtime_error(path.string() + ": truncated tensor " + name);
      a.tensors_[name] = std::move(e);
    }
    return a;
  }

 private:
  template <typename V>
  static void write_raw(std::ostream& os, V v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static void write_u32(std::ostream& os, std::uint32_t v) { write_raw(os, v); }
  static void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::uint32_t read_u32(std::istream& is, const std::filesystem::path& path) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error(path.string() + ": truncated archive");
    return v;
  }
  static std::string read_str(std::istream& is, const std::filesystem::path& path) {
    const auto n = read_u32(is, path);
    if (n > (1u << 24)) throw std::runtime_error(path.string() + ": corrupt string length");
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error(path.string() + ": truncated archive");
    return s;
  }

  std::map<std::string, std::string> meta_;
  std::map<std::string, Entry> tensors_;
};

}  // namespace eraser
