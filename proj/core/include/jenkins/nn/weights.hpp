#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jenkins/nn/tensor.hpp"

namespace jenkins::nn {

/// Binary weight container.
///
/// Layout (all integers little-endian):
///   "JNKW" | u32 version | u32 section count |
///   per section: u32 name length, name bytes, u8 dtype, u32 rank,
///                u64 dims[rank], payload (dims product * dtype size bytes)
/// The section named "manifest" holds UTF-8 JSON with at least a "kind" key.
class WeightArchive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  enum class DType : std::uint8_t { f32 = 1, f64 = 2, i32 = 3, bytes = 4 };

  struct Section {
    DType dtype = DType::f32;
    std::vector<std::uint64_t> shape;
    std::vector<std::uint8_t> payload;
  };

  void set_manifest(const nlohmann::json& manifest);
  const nlohmann::json& manifest() const { return manifest_; }
  std::string kind() const;

  template <typename T>
  void put(const std::string& name, const Matrix<T>& m) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    put_raw(name, std::is_same_v<T, float> ? DType::f32 : DType::f64,
            {std::uint64_t(m.rows()), std::uint64_t(m.cols())}, m.data(), std::size_t(m.size()));
  }

  /// Reads a rank-2 section, converting between float widths when needed.
  template <typename T>
  Matrix<T> get(const std::string& name, Eigen::Index rows = -1, Eigen::Index cols = -1) const {
    const Section& s = section(name);
    if (s.shape.size() != 2) throw ShapeError("weights: section '" + name + "' is not a matrix");
    const auto r = Eigen::Index(s.shape[0]);
    const auto c = Eigen::Index(s.shape[1]);
    if ((rows >= 0 && rows != r) || (cols >= 0 && cols != c)) {
      throw ShapeError("weights: section '" + name + "' has shape " + shape_string(r, c) + ", expected " +
                       shape_string(rows, cols));
    }
    Matrix<T> m(r, c);
    if (s.dtype == DType::f32) {
      copy_out<float>(s, m);
    } else if (s.dtype == DType::f64) {
      copy_out<double>(s, m);
    } else {
      throw Error("weights: section '" + name + "' is not floating point");
    }
    return m;
  }

  template <typename T>
  void put(const Parameter<T>& p) { put(p.name, p.value); }

  template <typename T>
  void get_into(Parameter<T>& p) const { p.value = get<T>(p.name, p.value.rows(), p.value.cols()); }

  bool contains(const std::string& name) const { return sections_.count(name) != 0; }
  const Section& section(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static WeightArchive load(const std::filesystem::path& path);

  std::vector<std::uint8_t> serialize() const;
  static WeightArchive deserialize(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");

 private:
  void put_raw(const std::string& name, DType dtype, std::vector<std::uint64_t> shape, const void* data,
               std::size_t count);

  template <typename Stored, typename T>
  static void copy_out(const Section& s, Matrix<T>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      Stored v;
      std::memcpy(&v, s.payload.data() + std::size_t(i) * sizeof(Stored), sizeof(Stored));
      m.data()[i] = T(v);
    }
  }

  nlohmann::json manifest_ = nlohmann::json::object();
  std::map<std::string, Section> sections_;
};

}  // namespace jenkins::nn
