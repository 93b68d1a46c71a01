#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "occseg/energy.hpp"
#include "occseg/grid.hpp"
#include "occseg/sbm.hpp"

namespace occseg {

/// Raised when the alternating minimisation produces a non-finite energy.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SolverConfig {
  double mu = 1.0;
  /// TV weight; unset means 0.1 * (max intensity - min intensity)^2.
  std::optional<double> nu;
  /// Bregman penalty; unset means 2*nu, or 1 when nu is zero.
  std::optional<double> lambda;
  double eps = 1e-3;
  int max_outer = 100;
  int sb_inner = 10;
  int gs_sweeps = 2;
  /// Inner Split Bregman loop stops early once max |q_k - q_{k-1}| < sb_tol.
  double sb_tol = 1e-7;
  double threshold = 0.5;
  TvMode tv_mode = TvMode::isotropic;
  int window_step = 1;
  int window_radius = 4;
  std::vector<double> window_scales = {1.0};
  /// Mean-field iterations used per window candidate.
  int mean_field_iters = 5;
  /// Only search windows in the first outer iteration.
  bool freeze_window = false;
  bool reestimate_intensities = false;
  std::uint64_t seed = 0;

  double resolved_nu(const std::vector<double>& intensities) const;
  double resolved_lambda(double nu) const;
  void validate() const;
};

/// sum_x r(x) q(x) + nu * TV(q).
double convex_objective(const Field& r, const MembershipField& q, double nu, TvMode tv_mode);

/// Minimizes sum_x r q + nu TV(q) over q in [0,1]^Omega with Split Bregman:
/// projected Gauss-Seidel sweeps on the q-subproblem, shrinkage of the
/// auxiliary gradient variable and a Bregman update. Runs at most sb_inner
/// iterations, then returns whichever of the iterate and its 0.5-threshold
/// has the lower objective.
MembershipField solve_convex_subproblem(const Field& r, double nu, double lambda, int sb_inner,
                                        int gs_sweeps, TvMode tv_mode,
                                        const MembershipField* initial = nullptr,
                                        double sb_tol = 1e-7);

struct WindowFit {
  WindowPlacement window;
  HiddenState hidden;
  double energy = 0.0;
};

/// Candidate placements around a window centre (image pixel coordinates),
/// clamped into the image; duplicates removed.
std::vector<WindowPlacement> window_candidates(int image_w, int image_h,
                                               const SbmArchitecture& arch,
                                               const SolverConfig& config, double center_x,
                                               double center_y);

/// Exhaustive search over candidate placements for the lowest SBM energy of
/// the resampled q. Ties go to the scale closest to 1, then the smallest
/// offset_y, then the smallest offset_x.
WindowFit fit_window(const MembershipField& q, const SbmParams& params,
                     const SbmArchitecture& arch,
                     const std::vector<WindowPlacement>& candidates, int mean_field_iters);
WindowFit fit_window(const MembershipField& q, const SbmParams& params,
                     const SbmArchitecture& arch, const SolverConfig& config);

/// One prior-free convex solve per region, starting from its seed, with the
/// rest of the image explained by the nearest other intensity.
SceneHypothesis initialize(const Image& u, const std::vector<BinaryMask>& seeds,
                           const std::vector<double>& intensities, const SolverConfig& config);

/// Objective of one region's convex subproblem before and after its update.
struct SubproblemStep {
  int outer = 0;
  int region = 0;
  double before = 0.0;
  double after = 0.0;
};

struct SegmentationResult {
  SceneHypothesis scene;
  std::vector<BinaryMask> masks;
  std::vector<WindowPlacement> windows;
  std::vector<HiddenState> hidden;
  /// Monitored energy (nms_energy + nu sum TV + mu sum shape) after
  /// initialisation and after every outer iteration.
  std::vector<double> energy_trace;
  std::vector<SubproblemStep> steps;
  int outer_iterations = 0;
  bool converged = false;
};

struct SegmentOptions {
  /// Regions held fixed at their initial membership.
  std::vector<int> frozen_regions;
};

SegmentationResult segment(const Image& u, const SbmParams& params, const SbmArchitecture& arch,
                           const SceneHypothesis& init, const SolverConfig& config,
                           const SegmentOptions& options = {});
SegmentationResult segment_single_baseline(const Image& u, const SbmParams& params,
                                           const SbmArchitecture& arch,
                                           const SceneHypothesis& init,
                                           const SolverConfig& config,
                                           const SegmentOptions& options = {});
SegmentationResult segment_no_prior(const Image& u, const SceneHypothesis& init,
                                    const SolverConfig& config,
                                    const SegmentOptions& options = {});

}  // namespace occseg
