#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sapg/error.hpp"

namespace sapg {

enum class DomainTag { pixel, coefficient };

std::string to_string(DomainTag tag);
DomainTag domain_tag_from_string(const std::string& s);

/// Image or coefficient array shape. A 1-D signal has `rows == 1` and `is_1d == true`.
struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool is_1d = false;

  static Shape image(std::size_t rows, std::size_t cols) { return {rows, cols, false}; }
  static Shape line(std::size_t length) { return {1, length, true}; }

  std::size_t size() const noexcept { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Flat row-major real array with shape metadata; the state x and observation y.
class ImageVector {
 public:
  ImageVector() = default;
  ImageVector(Shape shape, DomainTag tag = DomainTag::pixel);
  ImageVector(Shape shape, std::vector<double> data, DomainTag tag = DomainTag::pixel);

  static ImageVector zeros_like(const ImageVector& other) { return {other.shape_, other.tag_}; }
  static ImageVector line(std::vector<double> data, DomainTag tag = DomainTag::pixel);

  const Shape& shape() const noexcept { return shape_; }
  DomainTag tag() const noexcept { return tag_; }
  void set_tag(DomainTag tag) noexcept { tag_ = tag; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.cols + c]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& raw() noexcept { return data_; }
  const std::vector<double>& raw() const noexcept { return data_; }

  bool all_finite() const noexcept;
  /// Throws ErrorKind::dimension naming `field` if shapes differ.
  void require_same_shape(const ImageVector& other, const std::string& field) const;

 private:
  Shape shape_{};
  DomainTag tag_ = DomainTag::pixel;
  std::vector<double> data_;
};

// Small dense-vector kernels shared across modules.
namespace vec {

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}
inline double norm2_sq(std::span<const double> a) { return dot(a, a); }
inline double norm2(std::span<const double> a) { return std::sqrt(norm2_sq(a)); }
inline double norm1(std::span<const double> a) {
  double s = 0.0;
  for (double v : a) s += std::abs(v);
  return s;
}
inline double dist_sq(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}
inline double mean(std::span<const double> a) {
  return a.empty() ? 0.0 : std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
}

}  // namespace vec

ImageVector operator-(const ImageVector& a, const ImageVector& b);
ImageVector operator+(const ImageVector& a, const ImageVector& b);
ImageVector operator*(double s, const ImageVector& a);

}  // namespace sapg
