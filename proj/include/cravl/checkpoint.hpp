#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <unordered_map>
#include <vector>

#include "cravl/tensor.hpp"

namespace cravl {

// Binary tensor container: magic "CRVL1", a u32 version, then ordered named
// entries of little-endian raw values. Reading and writing the same file is
// a byte identity, which is what checkpoint round-trip and resume tests pin.
class Checkpoint {
 public:
  enum class Dtype : uint8_t { f64 = 0, f32 = 1, i64 = 2 };

  struct Entry {
    std::string name;
    Dtype dtype = Dtype::f64;
    std::vector<uint32_t> shape;
    std::vector<uint8_t> raw;

    size_t count() const {
      size_t n = 1;
      for (uint32_t d : shape) n *= d;
      return n;
    }
  };

  static constexpr uint32_t kVersion = 1;

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Entry& at(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }

  void add_i64(const std::string& name, int64_t value);
  void add_f64(const std::string& name, double value);
  int64_t i64(const std::string& name) const;
  double f64(const std::string& name) const;

  template <typename T>
  void add_mat(const std::string& name, const MatX<T>& m) {
    Entry e;
    e.name = name;
    e.dtype = std::is_same_v<T, float> ? Dtype::f32 : Dtype::f64;
    e.shape = {static_cast<uint32_t>(m.rows()), static_cast<uint32_t>(m.cols())};
    e.raw.resize(static_cast<size_t>(m.size()) * sizeof(T));
    std::memcpy(e.raw.data(), m.data(), e.raw.size());
    push(std::move(e));
  }

  // Converts between f32/f64 on load when needed.
  template <typename T>
  MatX<T> mat(const std::string& name) const {
    const Entry& e = at(name);
    if (e.shape.size() != 2) throw DataError("checkpoint entry is not a matrix: " + name);
    MatX<T> m(static_cast<Eigen::Index>(e.shape[0]), static_cast<Eigen::Index>(e.shape[1]));
    if (e.dtype == Dtype::f32) {
      const float* src = reinterpret_cast<const float*>(e.raw.data());
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(src[i]);
    } else if (e.dtype == Dtype::f64) {
      const double* src = reinterpret_cast<const double*>(e.raw.data());
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(src[i]);
    } else {
      throw DataError("checkpoint entry has integer dtype: " + name);
    }
    return m;
  }

  void write(const std::string& path) const;
  static Checkpoint read(const std::string& path);

 private:
  void push(Entry e);

  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
};

}  // namespace cravl
