#pragma once

// Dense row-major matrices and vectors in double precision, plus the seeded
// Gaussian sampler every experiment draws from.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rora {

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Vector {
 public:
  Vector() = default;
  explicit Vector(std::size_t len, double fill = 0.0) : data_(len, fill) {}
  explicit Vector(std::vector<double> data) : data_(std::move(data)) {}
  Vector(std::initializer_list<double> values) : data_(values) {}

  std::size_t size() const { return data_.size(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool operator==(const Vector&) const = default;

 private:
  std::vector<double> data_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(rows_, cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : rows) {
      if (row.size() != cols_) throw DimensionError("ragged matrix literal");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  std::string shape() const { return shape_string(rows_, cols_); }

  bool operator==(const Matrix&) const = default;

  static std::string shape_string(std::size_t r, std::size_t c) {
    std::ostringstream os;
    os << '(' << r << 'x' << c << ')';
    return os.str();
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul shape mismatch: " + a.shape() + " x " + b.shape());
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

inline Vector matvec(const Matrix& a, const Vector& x) {
  if (a.cols() != x.size()) {
    throw DimensionError("matvec shape mismatch: " + a.shape() + " x (" +
                         std::to_string(x.size()) + ")");
  }
  Vector out(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) acc += r[j] * x[j];
    out[i] = acc;
  }
  return out;
}

// a^T x without materialising the transpose.
inline Vector matvec_transposed(const Matrix& a, const Vector& x) {
  if (a.rows() != x.size()) {
    throw DimensionError("matvec_transposed shape mismatch: " + a.shape() + "^T x (" +
                         std::to_string(x.size()) + ")");
  }
  Vector out(a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out[j] += r[j] * x[i];
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// u v^T
inline Matrix outer(const Vector& u, const Vector& v) {
  Matrix m(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
  return m;
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(what) + " shape mismatch: " + a.shape() + " vs " + b.shape());
  }
}

inline Matrix operator+(Matrix a, const Matrix& b) {
  require_same_shape(a, b, "add");
  auto dst = a.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return a;
}

inline Matrix operator-(Matrix a, const Matrix& b) {
  require_same_shape(a, b, "subtract");
  auto dst = a.values();
  auto src = b.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  return a;
}

inline Matrix operator*(double s, Matrix a) {
  for (double& v : a.values()) v *= s;
  return a;
}

inline Vector operator+(Vector a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("vector add length mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

inline Vector operator-(Vector a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("vector subtract length mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= b[i];
  return a;
}

inline Vector operator*(double s, Vector a) {
  for (double& v : a.values()) v *= s;
  return a;
}

inline double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw DimensionError("dot length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double l2_norm(const Vector& v) {
  double acc = 0.0;
  for (double x : v.values()) acc += x * x;
  return std::sqrt(acc);
}

inline double frobenius_norm(const Matrix& m) {
  double acc = 0.0;
  for (double x : m.values()) acc += x * x;
  return std::sqrt(acc);
}

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

struct RngSeed {
  std::uint64_t value = 0;
  bool operator==(const RngSeed&) const = default;
};

// splitmix64 finaliser; used to derive independent sub-streams from
// (seed, index) pairs.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline RngSeed derive_seed(RngSeed base, std::uint64_t index) {
  return {mix64(base.value ^ mix64(index + 0x632be59bd9b4e019ULL))};
}

// mt19937_64 is fully specified by the standard, unlike the library
// distributions, so uniforms and normals are produced here by hand:
// 53-bit uniforms and the Box-Muller transform with the cached second draw.
class Rng {
 public:
  explicit Rng(RngSeed seed) : engine_(seed.value) {}

  // Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(theta);
    has_spare_ = true;
    return radius * std::cos(theta);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n) by rejection.
  std::size_t below(std::size_t n) {
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return static_cast<std::size_t>(v % bound);
  }

  void fill_normal(std::span<double> out, double mean = 0.0, double std = 1.0) {
    for (double& v : out) v = normal(mean, std);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double mean, double std,
                              Rng& rng) {
  if (!(std >= 0.0)) throw ArgumentError("gaussian_matrix: std must be >= 0");
  Matrix m(rows, cols);
  if (std == 0.0) {
    for (double& v : m.values()) v = mean;
    return m;
  }
  rng.fill_normal(m.values(), mean, std);
  return m;
}

inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double mean, double std,
                              RngSeed seed) {
  Rng rng(seed);
  return gaussian_matrix(rows, cols, mean, std, rng);
}

inline Vector gaussian_vector(std::size_t len, double mean, double std, Rng& rng) {
  if (!(std >= 0.0)) throw ArgumentError("gaussian_vector: std must be >= 0");
  Vector v(len);
  rng.fill_normal(v.values(), mean, std);
  return v;
}

}  // namespace rora
