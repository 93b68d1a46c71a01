#include "occseg/energy.hpp"

#include <cmath>
#include <limits>

namespace occseg {

namespace {

Field squared_residual(const Image& u, double c) {
  Field r(u.width(), u.height());
  for (std::size_t p = 0; p < u.size(); ++p) {
    const double d = u[p] - c;
    r[p] = d * d;
  }
  return r;
}

void check_index(const SceneHypothesis& scene, int i) {
  if (i < 0 || i >= scene.objects())
    throw DataError("region index " + std::to_string(i) + " out of range [0," +
                    std::to_string(scene.objects()) + ")");
}

/// prod_{j<i}(1-q_j) for every i in 0..n (index n is the background weight).
std::vector<Field> front_products(const SceneHypothesis& scene) {
  const auto& q = scene.regions;
  std::vector<Field> out;
  out.reserve(q.size() + 1);
  out.emplace_back(q.front().width(), q.front().height(), 1.0);
  for (const auto& qi : q) {
    Field next = out.back();
    for (std::size_t p = 0; p < next.size(); ++p) next[p] *= 1.0 - qi[p];
    out.push_back(std::move(next));
  }
  return out;
}

}  // namespace

void SceneHypothesis::validate() const {
  if (regions.empty()) throw DataError("scene has no regions");
  if (intensities.size() != regions.size() + 1)
    throw DataError("scene needs one intensity per region plus the background");
  for (const auto& q : regions)
    if (!q.same_shape(regions.front())) throw DataError("scene regions differ in size");
  for (double c : intensities)
    if (!std::isfinite(c)) throw DataError("non-finite scene intensity");
}

void SceneHypothesis::validate(const Image& u) const {
  validate();
  if (!u.same_shape(regions.front())) throw DataError("image and scene regions differ in size");
}

std::vector<Field> visibility_weights(const SceneHypothesis& scene) {
  scene.validate();
  std::vector<Field> prod = front_products(scene);
  std::vector<Field> weights;
  weights.reserve(prod.size());
  for (int i = 0; i < scene.objects(); ++i) {
    Field w = prod[i];
    const auto& qi = scene.regions[i];
    for (std::size_t p = 0; p < w.size(); ++p) w[p] *= qi[p];
    weights.push_back(std::move(w));
  }
  weights.push_back(std::move(prod.back()));
  return weights;
}

std::vector<Field> all_phi(const SceneHypothesis& scene, const Image& u) {
  scene.validate(u);
  const int n = scene.objects();
  std::vector<Field> out(n);
  out[n - 1] = squared_residual(u, scene.background());
  for (int i = n - 2; i >= 0; --i) {
    const double c = scene.intensities[i + 1];
    const auto& q = scene.regions[i + 1];
    const Field& behind = out[i + 1];
    Field f(u.width(), u.height());
    for (std::size_t p = 0; p < f.size(); ++p) {
      const double d = u[p] - c;
      f[p] = d * d * q[p] + (1.0 - q[p]) * behind[p];
    }
    out[i] = std::move(f);
  }
  return out;
}

Field phi(const SceneHypothesis& scene, const Image& u, int i) {
  check_index(scene, i);
  return std::move(all_phi(scene, u)[i]);
}

std::vector<double> data_energies(const SceneHypothesis& scene, const Image& u) {
  scene.validate(u);
  // One pass per pixel: phi back to front, then the visibility product front
  // to back, so no per-region fields are materialized.
  const int n = scene.objects();
  const auto& c = scene.intensities;
  std::vector<const double*> q(n);
  for (int i = 0; i < n; ++i) q[i] = scene.regions[i].values().data();
  std::vector<double> e(n, 0.0), ph(n);
  for (std::size_t p = 0; p < u.size(); ++p) {
    const double up = u[p];
    double d = up - c[n];
    ph[n - 1] = d * d;
    for (int i = n - 2; i >= 0; --i) {
      d = up - c[i + 1];
      const double qi = q[i + 1][p];
      ph[i] = d * d * qi + (1.0 - qi) * ph[i + 1];
    }
    double front = 1.0;
    for (int i = 0; i < n; ++i) {
      d = up - c[i];
      const double qi = q[i][p];
      e[i] += front * (d * d * qi + (1.0 - qi) * ph[i]);
      front *= 1.0 - qi;
    }
  }
  return e;
}

double data_energy_region(const SceneHypothesis& scene, const Image& u, int i) {
  check_index(scene, i);
  return data_energies(scene, u)[i];
}

Field data_coefficient(const SceneHypothesis& scene, const Image& u, int i) {
  check_index(scene, i);
  const Field ph = phi(scene, u, i);
  Field r(u.width(), u.height());
  const double c = scene.intensities[i];
  for (std::size_t p = 0; p < r.size(); ++p) {
    double front = 1.0;
    for (int j = 0; j < i; ++j) front *= 1.0 - scene.regions[j][p];
    const double d = u[p] - c;
    r[p] = front * (d * d - ph[p]);
  }
  return r;
}

Field single_region_data_coefficient(const Image& u, const std::vector<double>& intensities,
                                     int i) {
  if (intensities.size() < 2) throw DataError("need at least a region and a background intensity");
  if (i < 0 || i + 1 >= static_cast<int>(intensities.size()))
    throw DataError("region index out of range");
  Field r(u.width(), u.height());
  for (std::size_t p = 0; p < r.size(); ++p) {
    double rest = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < intensities.size(); ++j)
      if (static_cast<int>(j) != i) rest = std::min(rest, std::pow(u[p] - intensities[j], 2));
    const double d = u[p] - intensities[i];
    r[p] = d * d - rest;
  }
  return r;
}

double nms_energy(const SceneHypothesis& scene, const Image& u) {
  scene.validate(u);
  const auto weights = visibility_weights(scene);
  double e = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double c = scene.intensities[i];
    for (std::size_t p = 0; p < u.size(); ++p) {
      const double d = u[p] - c;
      e += weights[i][p] * d * d;
    }
  }
  return e;
}

double windowed_shape_energy(const MembershipField& q, const WindowPlacement& window,
                             const HiddenState& hidden, const SbmParams& params,
                             const SbmArchitecture& arch) {
  const WindowResampler rs(q.width(), q.height(), window, arch.visible_w, arch.visible_h);
  return sbm_energy(to_visible(rs.apply(q)), hidden, params, arch);
}

double spsd_energy(const SceneHypothesis& scene, const Image& u, const SbmParams& params,
                   const SbmArchitecture& arch, const std::vector<HiddenState>& hidden,
                   const std::vector<WindowPlacement>& windows, double mu, double nu,
                   TvMode tv_mode, double tv_e) {
  scene.validate(u);
  if (hidden.size() != scene.regions.size() || windows.size() != scene.regions.size())
    throw DataError("need one hidden state and one window per region");
  const auto data = data_energies(scene, u);
  double total = 0.0;
  for (int i = 0; i < scene.objects(); ++i) {
    total += data[i];
    if (mu != 0.0)
      total += mu * windowed_shape_energy(scene.regions[i], windows[i], hidden[i], params, arch);
    if (nu != 0.0)
      total += nu * tv_norm(grid_cast<Field>(scene.regions[i]), tv_mode, tv_e);
  }
  return total;
}

IntensityEstimate estimate_intensities(const Image& u, const SceneHypothesis& scene) {
  const auto weights = visibility_weights(scene);
  IntensityEstimate est{scene.intensities, {}};
  for (std::size_t i = 0; i < weights.size(); ++i) {
    double mass = 0.0, sum = 0.0;
    for (std::size_t p = 0; p < u.size(); ++p) {
      mass += weights[i][p];
      sum += weights[i][p] * u[p];
    }
    if (mass > 0.0)
      est.intensities[i] = sum / mass;
    else
      est.empty_regions.push_back(static_cast<int>(i));
  }
  return est;
}

}  // namespace occseg
