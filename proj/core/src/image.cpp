#include "sapg/image.hpp"

#include <algorithm>

namespace sapg {

std::string to_string(DomainTag tag) { return tag == DomainTag::pixel ? "pixel" : "coefficient"; }

DomainTag domain_tag_from_string(const std::string& s) {
  if (s == "pixel") return DomainTag::pixel;
  if (s == "coefficient") return DomainTag::coefficient;
  throw Error(ErrorKind::config, "unknown domain_tag '" + s + "'");
}

std::string to_string(const Shape& s) {
  if (s.is_1d) return "(" + std::to_string(s.cols) + ")";
  return "(" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + ")";
}

ImageVector::ImageVector(Shape shape, DomainTag tag) : shape_(shape), tag_(tag), data_(shape.size(), 0.0) {}

ImageVector::ImageVector(Shape shape, std::vector<double> data, DomainTag tag)
    : shape_(shape), tag_(tag), data_(std::move(data)) {
  if (data_.size() != shape_.size()) throw_dimension("ImageVector.data", shape_.size(), data_.size());
}

ImageVector ImageVector::line(std::vector<double> data, DomainTag tag) {
  const auto n = data.size();
  return {Shape::line(n), std::move(data), tag};
}

bool ImageVector::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void ImageVector::require_same_shape(const ImageVector& other, const std::string& field) const {
  if (!(shape_ == other.shape_)) {
    throw Error(ErrorKind::dimension,
                "shape mismatch in '" + field + "': " + to_string(shape_) + " vs " + to_string(other.shape_));
  }
}

ImageVector operator-(const ImageVector& a, const ImageVector& b) {
  a.require_same_shape(b, "operator-");
  ImageVector out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

ImageVector operator+(const ImageVector& a, const ImageVector& b) {
  a.require_same_shape(b, "operator+");
  ImageVector out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

ImageVector operator*(double s, const ImageVector& a) {
  ImageVector out = a;
  for (auto& v : out.raw()) v *= s;
  return out;
}

}  // namespace sapg
