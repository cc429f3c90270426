#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace mdn {

struct Shape {
  int height = 0;
  int width = 0;
  int channels = 0;

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return plane() * channels; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/*!
 * Dense H x W x C grid of doubles, row-major with the channel outermost:
 * index(c, y, x) = (c * H + y) * W + x.
 *
 * Values are immutable after construction and always finite.
 */
class ScalarField {
 public:
  ScalarField() = default;
  ScalarField(Shape shape, double fill);
  ScalarField(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }
  double at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<const double> data() const { return data_; }
  std::span<const double> channel(int c) const;

  // Moves the payload out, leaving an empty field.
  std::vector<double> release() &&;

  double min() const;
  double max() const;

  bool operator==(const ScalarField&) const = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

ScalarField new_field(int h, int w, int c, double fill);

// Throws DomainError unless every value lies in [0, 1].
void require_unit_interval(const ScalarField& f, const char* what);

/*!
 * Per-edge displacement planes. Channel e of ox/oy is the offset used by
 * edge e of the associated VoteGraph, in output-grid pixels.
 */
struct DisplacementField {
  ScalarField ox;
  ScalarField oy;

  DisplacementField() = default;
  DisplacementField(ScalarField ox_plane, ScalarField oy_plane);

  static DisplacementField zeros(int h, int w, int edges);

  int edges() const { return ox.channels(); }
  const Shape& shape() const { return ox.shape(); }
};

// Gradient of a scalar loss with respect to some ScalarField; same layout.
using GradSignal = ScalarField;

}  // namespace mdn
