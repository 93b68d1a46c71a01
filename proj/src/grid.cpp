#include "occseg/grid.hpp"

#include <algorithm>
#include <cmath>

namespace occseg {

namespace {

template <class G>
void check_unit_interval(const G& g, const char* what) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double v = static_cast<double>(g[i]);
    if (!(v >= 0.0 && v <= 1.0))
      throw DataError(std::string(what) + " value out of [0,1] at index " +
                      std::to_string(i));
  }
}

}  // namespace

void check_range(const Image& image) { check_unit_interval(image, "image"); }
void check_range(const MembershipField& q) { check_unit_interval(q, "membership"); }
void check_range(const BinaryMask& mask) {
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] > 1) throw DataError("mask value not in {0,1} at index " + std::to_string(i));
}
void check_finite(const Field& f) {
  for (std::size_t i = 0; i < f.size(); ++i)
    if (!std::isfinite(f[i]))
      throw DataError("non-finite field value at index " + std::to_string(i));
}

VectorField gradient(const Field& f) {
  const int w = f.width(), h = f.height();
  VectorField g{Field(w, h), Field(w, h)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (x + 1 < w) g.dx(x, y) = f(x + 1, y) - f(x, y);
      if (y + 1 < h) g.dy(x, y) = f(x, y + 1) - f(x, y);
    }
  return g;
}

Field divergence(const VectorField& v) {
  const int w = v.dx.width(), h = v.dx.height();
  if (!v.dy.same_shape(v.dx)) throw DataError("vector field components differ in shape");
  Field d(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      if (x + 1 < w) s += v.dx(x, y);
      if (x > 0) s -= v.dx(x - 1, y);
      if (y + 1 < h) s += v.dy(x, y);
      if (y > 0) s -= v.dy(x, y - 1);
      d(x, y) = s;
    }
  return d;
}

double tv_norm(const Field& f, TvMode mode, double e) {
  if (e < 0.0) throw DataError("tv smoothing constant must be non-negative");
  const VectorField g = gradient(f);
  double total = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double a = g.dx[i], b = g.dy[i];
    if (mode == TvMode::anisotropic)
      total += std::abs(a) + std::abs(b);
    else
      total += std::sqrt(a * a + b * b + e * e);
  }
  return total;
}

std::array<double, 2> shrink(std::array<double, 2> v, double t, TvMode mode) {
  if (mode == TvMode::anisotropic) {
    for (double& c : v) c = std::copysign(std::max(std::abs(c) - t, 0.0), c);
    return v;
  }
  const double norm = std::hypot(v[0], v[1]);
  if (norm == 0.0) return {0.0, 0.0};
  const double s = std::max(norm - t, 0.0) / norm;
  return {v[0] * s, v[1] * s};
}

WindowResampler::WindowResampler(int src_w, int src_h, const WindowPlacement& window,
                                 int out_w, int out_h)
    : src_w_(src_w), src_h_(src_h), out_w_(out_w), out_h_(out_h) {
  if (src_w < 1 || src_h < 1 || out_w < 1 || out_h < 1)
    throw DataError("resample dimensions must be positive");
  if (!(window.scale > 0.0) || !std::isfinite(window.scale) ||
      !std::isfinite(window.offset_x) || !std::isfinite(window.offset_y))
    throw DataError("degenerate resampling window");
  const double x1 = window.offset_x + window.scale * out_w;
  const double y1 = window.offset_y + window.scale * out_h;
  if (x1 <= 0.0 || y1 <= 0.0 || window.offset_x >= src_w || window.offset_y >= src_h)
    throw DataError("resampling window does not intersect the image");

  taps_.resize(static_cast<std::size_t>(out_w) * out_h);
  for (int j = 0; j < out_h; ++j) {
    double sy = window.offset_y + (j + 0.5) * window.scale - 0.5;
    sy = std::clamp(sy, 0.0, static_cast<double>(src_h - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1i = std::min(y0 + 1, src_h - 1);
    const double fy = sy - y0;
    for (int i = 0; i < out_w; ++i) {
      double sx = window.offset_x + (i + 0.5) * window.scale - 0.5;
      sx = std::clamp(sx, 0.0, static_cast<double>(src_w - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1i = std::min(x0 + 1, src_w - 1);
      const double fx = sx - x0;
      auto at = [&](int x, int y) { return static_cast<std::size_t>(y) * src_w + x; };
      taps_[static_cast<std::size_t>(j) * out_w + i] = {
          Tap{at(x0, y0), (1 - fx) * (1 - fy)}, Tap{at(x1i, y0), fx * (1 - fy)},
          Tap{at(x0, y1i), (1 - fx) * fy}, Tap{at(x1i, y1i), fx * fy}};
    }
  }
}

Field WindowResampler::apply_transpose(const Field& model_field) const {
  if (model_field.width() != out_w_ || model_field.height() != out_h_)
    throw DataError("model field does not match resampler output dimensions");
  Field out(src_w_, src_h_);
  for (std::size_t o = 0; o < taps_.size(); ++o)
    for (const auto& t : taps_[o]) out[t.index] += t.weight * model_field[o];
  return out;
}

Field resample_window(const Field& f, const WindowPlacement& window, int out_w, int out_h) {
  return WindowResampler(f.width(), f.height(), window, out_w, out_h).apply(f);
}

double inner(const Field& a, const Field& b) {
  if (!a.same_shape(b)) throw DataError("inner product of mismatched fields");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double inner(const VectorField& a, const VectorField& b) {
  return inner(a.dx, b.dx) + inner(a.dy, b.dy);
}

}  // namespace occseg
