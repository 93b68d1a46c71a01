#pragma once

#include <vector>

#include "occseg/grid.hpp"
#include "occseg/sbm.hpp"

namespace occseg {

/// Depth-ordered hypothesis of the scene. Region 0 is nearest to the viewer;
/// intensities holds one mean per region followed by the background mean.
struct SceneHypothesis {
  std::vector<MembershipField> regions;
  std::vector<double> intensities;

  int objects() const { return static_cast<int>(regions.size()); }
  double background() const { return intensities.back(); }
  /// Throws DataError on empty scenes, grid mismatches or a wrong number of
  /// intensities.
  void validate() const;
  void validate(const Image& u) const;
};

/// P_i = q_i * prod_{j<i}(1-q_j) for every region, then the background
/// weight prod_j(1-q_j). The n+1 weights sum to one at every pixel.
std::vector<Field> visibility_weights(const SceneHypothesis& scene);

/// Expected residual of explaining each pixel by whatever lies behind region
/// i (0-based). Evaluated with the back-to-front recursion
/// phi_i = |u-c_{i+1}|^2 q_{i+1} + (1-q_{i+1}) phi_{i+1}.
Field phi(const SceneHypothesis& scene, const Image& u, int i);

/// All phi_i in one back-to-front pass (O(n) field passes).
std::vector<Field> all_phi(const SceneHypothesis& scene, const Image& u);

double data_energy_region(const SceneHypothesis& scene, const Image& u, int i);
/// Data energies of every region, sharing the prefix products and the phi
/// recursion; linear in the number of regions.
std::vector<double> data_energies(const SceneHypothesis& scene, const Image& u);

/// Coefficient r_i with data_energy_region affine in q_i:
/// E_i(q_i) = sum_x r_i(x) q_i(x) + (terms independent of q_i).
Field data_coefficient(const SceneHypothesis& scene, const Image& u, int i);

/// Data coefficient of the single-region baseline: region i against "the rest
/// of the image", where every other pixel is explained by the nearest of the
/// remaining intensities. Occlusion is ignored.
Field single_region_data_coefficient(const Image& u, const std::vector<double>& intensities,
                                     int i);

/// Single-count relaxed data energy: sum_i sum_x P_i |u - c_i|^2.
double nms_energy(const SceneHypothesis& scene, const Image& u);

/// SBM energy of q seen through a window at model resolution.
double windowed_shape_energy(const MembershipField& q, const WindowPlacement& window,
                             const HiddenState& hidden, const SbmParams& params,
                             const SbmArchitecture& arch);

/// Sum over regions of data energy, mu * windowed shape energy and
/// nu * TV(q_i).
double spsd_energy(const SceneHypothesis& scene, const Image& u, const SbmParams& params,
                   const SbmArchitecture& arch, const std::vector<HiddenState>& hidden,
                   const std::vector<WindowPlacement>& windows, double mu, double nu,
                   TvMode tv_mode = TvMode::isotropic, double tv_e = 0.0);

struct IntensityEstimate {
  std::vector<double> intensities;
  /// Regions whose visibility weight vanished; their previous value is kept.
  std::vector<int> empty_regions;
};

/// Visibility-weighted means c_i = sum P_i u / sum P_i (background included).
IntensityEstimate estimate_intensities(const Image& u, const SceneHypothesis& scene);

}  // namespace occseg
