#include "mdn/field.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mdn/errors.hpp"

namespace mdn {

namespace {

void check_shape(const Shape& s) {
  if (s.height < 1 || s.width < 1 || s.channels < 1) {
    throw ShapeError("field dimensions must be positive, got " + to_string(s));
  }
}

void check_finite(std::span<const double> v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw DomainError("non-finite value at flat index " + std::to_string(i));
    }
  }
}

}  // namespace

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << s.height << "x" << s.width << "x" << s.channels;
  return os.str();
}

ScalarField::ScalarField(Shape shape, double fill) : shape_(shape) {
  check_shape(shape_);
  if (!std::isfinite(fill)) throw DomainError("fill value must be finite");
  data_.assign(shape_.size(), fill);
}

ScalarField::ScalarField(Shape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  check_shape(shape_);
  if (data_.size() != shape_.size()) {
    throw ShapeError("payload has " + std::to_string(data_.size()) +
                     " values, shape " + to_string(shape_) + " needs " +
                     std::to_string(shape_.size()));
  }
  check_finite(data_);
}

std::span<const double> ScalarField::channel(int c) const {
  if (c < 0 || c >= shape_.channels) {
    throw RangeError("channel " + std::to_string(c) + " out of range for " +
                     to_string(shape_));
  }
  return std::span<const double>(data_).subspan(
      static_cast<std::size_t>(c) * shape_.plane(), shape_.plane());
}

std::vector<double> ScalarField::release() && {
  shape_ = {};
  return std::move(data_);
}

double ScalarField::min() const { return *std::min_element(data_.begin(), data_.end()); }
double ScalarField::max() const { return *std::max_element(data_.begin(), data_.end()); }

ScalarField new_field(int h, int w, int c, double fill) { return ScalarField({h, w, c}, fill); }

void require_unit_interval(const ScalarField& f, const char* what) {
  for (double v : f.data()) {
    if (v < 0.0 || v > 1.0) {
      throw DomainError(std::string(what) + " must lie in [0,1], found " + std::to_string(v));
    }
  }
}

DisplacementField::DisplacementField(ScalarField ox_plane, ScalarField oy_plane)
    : ox(std::move(ox_plane)), oy(std::move(oy_plane)) {
  if (ox.shape() != oy.shape()) {
    throw ShapeError("ox " + to_string(ox.shape()) + " and oy " + to_string(oy.shape()) +
                     " differ");
  }
}

DisplacementField DisplacementField::zeros(int h, int w, int edges) {
  return {ScalarField({h, w, edges}, 0.0), ScalarField({h, w, edges}, 0.0)};
}

}  // namespace mdn
