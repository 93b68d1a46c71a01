#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace occseg {

/// Thrown for malformed inputs (dimension mismatches, out-of-range values,
/// unreadable files). The CLI maps it to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major 2-D grid with the origin at the top-left pixel.
///
/// The tag parameter keeps semantically different fields (raw images,
/// membership probabilities, binary masks, unbounded coefficient fields)
/// from being mixed up silently; use grid_cast to convert explicitly.
template <class T, class Tag>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height) {
    if (width < 1 || height < 1)
      throw DataError("grid dimensions must be positive, got " +
                      std::to_string(width) + "x" + std::to_string(height));
    data_.assign(static_cast<std::size_t>(width) * height, fill);
  }
  Grid(int width, int height, std::vector<T> values) : Grid(width, height) {
    if (values.size() != data_.size())
      throw DataError("grid value count does not match dimensions");
    data_ = std::move(values);
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) { return data_[index(x, y)]; }
  const T& operator()(int x, int y) const { return data_[index(x, y)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  template <class OtherT, class OtherTag>
  bool same_shape(const Grid<OtherT, OtherTag>& other) const {
    return width_ == other.width() && height_ == other.height();
  }

  bool operator==(const Grid&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

struct FieldTag {};
struct ImageTag {};
struct MembershipTag {};
struct MaskTag {};

/// Unbounded real field (energy coefficients, Bregman variables).
using Field = Grid<double, FieldTag>;
/// Grayscale image, values in [0,1].
using Image = Grid<double, ImageTag>;
/// Per-pixel region membership probability, values in [0,1].
using MembershipField = Grid<double, MembershipTag>;
/// Binary region mask, values in {0,1}.
using BinaryMask = Grid<std::uint8_t, MaskTag>;

/// Forward differences of a field; component x is f(x+1,y)-f(x,y).
struct VectorField {
  Field dx;
  Field dy;
};

enum class TvMode { anisotropic, isotropic };

/// Placement of a model-resolution window inside an image. The window covers
/// [offset_x, offset_x + scale*model_w) x [offset_y, offset_y + scale*model_h)
/// in pixel-edge coordinates.
struct WindowPlacement {
  double offset_x = 0.0;
  double offset_y = 0.0;
  double scale = 1.0;

  bool operator==(const WindowPlacement&) const = default;
};

void check_range(const Image& image);
void check_range(const MembershipField& q);
void check_range(const BinaryMask& mask);
void check_finite(const Field& f);

/// Copies the values of one grid kind into another, validating the target's
/// value invariant (e.g. [0,1] for Image and MembershipField).
template <class To, class From>
To grid_cast(const From& from) {
  To to(from.width(), from.height());
  for (std::size_t i = 0; i < from.size(); ++i)
    to[i] = static_cast<typename To::value_type>(from[i]);
  if constexpr (std::is_same_v<To, Image> || std::is_same_v<To, MembershipField> ||
                std::is_same_v<To, BinaryMask>)
    check_range(to);
  else if constexpr (std::is_same_v<To, Field>)
    check_finite(to);
  return to;
}

VectorField gradient(const Field& f);
Field divergence(const VectorField& v);

double tv_norm(const Field& f, TvMode mode, double e = 0.0);

std::array<double, 2> shrink(std::array<double, 2> v, double t,
                             TvMode mode = TvMode::isotropic);

/// Sparse bilinear resampling operator from an image grid to a
/// model-resolution grid. Sample coordinates are clamped to the source
/// grid, so apply() and apply_transpose() are exact adjoints.
class WindowResampler {
 public:
  WindowResampler(int src_w, int src_h, const WindowPlacement& window,
                  int out_w, int out_h);

  int src_width() const { return src_w_; }
  int src_height() const { return src_h_; }
  int out_width() const { return out_w_; }
  int out_height() const { return out_h_; }

  /// Samples src (src_w x src_h) into an out_w x out_h grid.
  template <class G>
  G apply(const G& src) const {
    G out(out_w_, out_h_);
    for (std::size_t o = 0; o < taps_.size(); ++o) {
      double acc = 0.0;
      for (const auto& t : taps_[o]) acc += t.weight * static_cast<double>(src[t.index]);
      out[o] = static_cast<typename G::value_type>(acc);
    }
    return out;
  }

  /// Spreads a model-resolution field back onto the source grid with the
  /// transposed bilinear weights; zero outside the window's support.
  Field apply_transpose(const Field& model_field) const;

 private:
  struct Tap {
    std::size_t index;
    double weight;
  };
  int src_w_, src_h_, out_w_, out_h_;
  std::vector<std::array<Tap, 4>> taps_;
};

Field resample_window(const Field& f, const WindowPlacement& window, int out_w,
                      int out_h);

double inner(const Field& a, const Field& b);
double inner(const VectorField& a, const VectorField& b);

}  // namespace occseg
