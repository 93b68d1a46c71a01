#include "occseg/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <tuple>

#include "occseg/eval.hpp"

namespace occseg {

double SolverConfig::resolved_nu(const std::vector<double>& intensities) const {
  if (nu) return *nu;
  if (intensities.empty()) return 0.0;
  const auto [lo, hi] = std::minmax_element(intensities.begin(), intensities.end());
  return 0.1 * (*hi - *lo) * (*hi - *lo);
}

double SolverConfig::resolved_lambda(double resolved_nu) const {
  if (lambda) return *lambda;
  return resolved_nu > 0.0 ? 2.0 * resolved_nu : 1.0;
}

void SolverConfig::validate() const {
  if (mu < 0.0) throw DataError("mu must be non-negative");
  if (nu && *nu < 0.0) throw DataError("nu must be non-negative");
  if (lambda && !(*lambda > 0.0)) throw DataError("lambda must be positive");
  if (!(eps > 0.0)) throw DataError("eps must be positive");
  if (max_outer < 1 || sb_inner < 1 || gs_sweeps < 1 || mean_field_iters < 1)
    throw DataError("solver iteration counts must be positive");
  if (!(threshold > 0.0 && threshold < 1.0)) throw DataError("threshold must lie in (0,1)");
  if (window_step < 1 || window_radius < 0) throw DataError("invalid window translation grid");
  if (window_scales.empty()) throw DataError("window scale list is empty");
  for (double s : window_scales)
    if (!(s > 0.0)) throw DataError("window scales must be positive");
}

double convex_objective(const Field& r, const MembershipField& q, double nu, TvMode tv_mode) {
  const Field qf = grid_cast<Field>(q);
  double e = inner(r, qf);
  if (nu != 0.0) e += nu * tv_norm(qf, tv_mode);
  return e;
}

MembershipField solve_convex_subproblem(const Field& r, double nu, double lambda, int sb_inner,
                                        int gs_sweeps, TvMode tv_mode,
                                        const MembershipField* initial, double sb_tol) {
  if (nu < 0.0) throw DataError("nu must be non-negative");
  if (!(lambda > 0.0)) throw DataError("lambda must be positive");
  if (sb_inner < 1 || gs_sweeps < 1) throw DataError("Split Bregman iteration counts must be positive");
  check_finite(r);
  if (initial && !initial->same_shape(r)) throw DataError("initial membership has the wrong size");

  const int w = r.width(), h = r.height();
  MembershipField q = initial ? *initial : MembershipField(w, h, 0.5);

  if (nu == 0.0) {
    for (std::size_t p = 0; p < q.size(); ++p) {
      if (r[p] < 0.0) q[p] = 1.0;
      else if (r[p] > 0.0) q[p] = 0.0;
      else if (!initial) q[p] = 0.0;
    }
    return q;
  }

  VectorField d{Field(w, h), Field(w, h)};
  VectorField bb{Field(w, h), Field(w, h)};
  Field qf = grid_cast<Field>(q);
  const double t = nu / lambda;

  for (int it = 0; it < sb_inner; ++it) {
    const Field div_db = divergence({[&] {
                                       Field f = d.dx;
                                       for (std::size_t p = 0; p < f.size(); ++p) f[p] -= bb.dx[p];
                                       return f;
                                     }(),
                                     [&] {
                                       Field f = d.dy;
                                       for (std::size_t p = 0; p < f.size(); ++p) f[p] -= bb.dy[p];
                                       return f;
                                     }()});
    double max_change = 0.0;
    for (int sweep = 0; sweep < gs_sweeps; ++sweep)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          double nb = 0.0;
          int deg = 0;
          if (x > 0) nb += qf(x - 1, y), ++deg;
          if (x + 1 < w) nb += qf(x + 1, y), ++deg;
          if (y > 0) nb += qf(x, y - 1), ++deg;
          if (y + 1 < h) nb += qf(x, y + 1), ++deg;
          const double rhs = r(x, y) / lambda + div_db(x, y);
          double v;
          if (deg == 0)
            v = r(x, y) < 0.0 ? 1.0 : (r(x, y) > 0.0 ? 0.0 : qf(x, y));
          else
            v = std::clamp((nb - rhs) / deg, 0.0, 1.0);
          max_change = std::max(max_change, std::abs(v - qf(x, y)));
          qf(x, y) = v;
        }

    const VectorField g = gradient(qf);
    double max_residual = 0.0;
    for (std::size_t p = 0; p < qf.size(); ++p) {
      const auto s = shrink({g.dx[p] + bb.dx[p], g.dy[p] + bb.dy[p]}, t, tv_mode);
      d.dx[p] = s[0];
      d.dy[p] = s[1];
      const double ex = g.dx[p] - s[0], ey = g.dy[p] - s[1];
      bb.dx[p] += ex;
      bb.dy[p] += ey;
      max_residual = std::max({max_residual, std::abs(ex), std::abs(ey)});
    }
    if (max_change < sb_tol && max_residual < sb_tol) break;
  }

  for (std::size_t p = 0; p < q.size(); ++p) q[p] = qf[p];
  MembershipField binary(w, h);
  for (std::size_t p = 0; p < q.size(); ++p) binary[p] = q[p] > 0.5 ? 1.0 : 0.0;
  if (convex_objective(r, binary, nu, tv_mode) <= convex_objective(r, q, nu, tv_mode)) return binary;
  return q;
}

std::vector<WindowPlacement> window_candidates(int image_w, int image_h,
                                               const SbmArchitecture& arch,
                                               const SolverConfig& config, double center_x,
                                               double center_y) {
  std::vector<WindowPlacement> out;
  std::set<std::tuple<double, double, double>> seen;
  for (double s : config.window_scales) {
    const double ww = s * arch.visible_w, wh = s * arch.visible_h;
    const double ox0 = std::round(center_x - ww / 2), oy0 = std::round(center_y - wh / 2);
    auto clamp_offset = [](double o, double win, int extent) {
      if (win <= extent) return std::clamp(o, 0.0, std::floor(extent - win));
      return (extent - win) / 2.0;
    };
    for (int dy = -config.window_radius; dy <= config.window_radius; dy += config.window_step)
      for (int dx = -config.window_radius; dx <= config.window_radius; dx += config.window_step) {
        const WindowPlacement wp{clamp_offset(ox0 + dx, ww, image_w),
                                 clamp_offset(oy0 + dy, wh, image_h), s};
        if (seen.emplace(wp.offset_x, wp.offset_y, wp.scale).second) out.push_back(wp);
      }
  }
  return out;
}

WindowFit fit_window(const MembershipField& q, const SbmParams& params,
                     const SbmArchitecture& arch, const std::vector<WindowPlacement>& candidates,
                     int mean_field_iters) {
  std::optional<WindowFit> best;
  auto better = [](const WindowFit& a, const WindowFit& b) {
    if (a.energy != b.energy) return a.energy < b.energy;
    const double sa = std::abs(a.window.scale - 1.0), sb = std::abs(b.window.scale - 1.0);
    if (sa != sb) return sa < sb;
    if (a.window.offset_y != b.window.offset_y) return a.window.offset_y < b.window.offset_y;
    return a.window.offset_x < b.window.offset_x;
  };
  for (const auto& wp : candidates) {
    std::optional<WindowResampler> rs;
    try {
      rs.emplace(q.width(), q.height(), wp, arch.visible_w, arch.visible_h);
    } catch (const DataError&) {
      continue;
    }
    const Eigen::VectorXd v = to_visible(rs->apply(q));
    WindowFit fit{wp, mean_field_infer(v, params, arch, mean_field_iters), 0.0};
    fit.energy = sbm_energy(v, fit.hidden, params, arch);
    if (!best || better(fit, *best)) best = std::move(fit);
  }
  if (!best) throw DataError("every window placement is degenerate");
  return *best;
}

namespace {

std::pair<double, double> centroid(const MembershipField& q) {
  double m = 0.0, sx = 0.0, sy = 0.0;
  for (int y = 0; y < q.height(); ++y)
    for (int x = 0; x < q.width(); ++x) {
      m += q(x, y);
      sx += q(x, y) * (x + 0.5);
      sy += q(x, y) * (y + 0.5);
    }
  if (m <= 0.0) return {q.width() / 2.0, q.height() / 2.0};
  return {sx / m, sy / m};
}

std::pair<double, double> window_center(const WindowPlacement& w, const SbmArchitecture& arch) {
  return {w.offset_x + w.scale * arch.visible_w / 2.0, w.offset_y + w.scale * arch.visible_h / 2.0};
}

std::vector<MembershipField> seed_fields(const std::vector<BinaryMask>& seeds, const Image& u) {
  std::vector<MembershipField> out;
  for (const auto& s : seeds) {
    if (!s.same_shape(u)) throw DataError("seed mask and image differ in size");
    out.push_back(grid_cast<MembershipField>(s));
  }
  return out;
}

enum class Coupling { occlusion, independent };

double single_data_energy(const Image& u, const std::vector<double>& c, int i,
                          const MembershipField& q) {
  double e = 0.0;
  for (std::size_t p = 0; p < u.size(); ++p) {
    double rest = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c.size(); ++j)
      if (static_cast<int>(j) != i) rest = std::min(rest, (u[p] - c[j]) * (u[p] - c[j]));
    const double d = u[p] - c[i];
    e += q[p] * d * d + (1.0 - q[p]) * rest;
  }
  return e;
}

SegmentationResult run_segmentation(const Image& u, const SbmParams* params,
                                    const SbmArchitecture* arch, const SceneHypothesis& init,
                                    const SolverConfig& cfg, Coupling coupling,
                                    const SegmentOptions& options) {
  init.validate(u);
  cfg.validate();
  const bool prior = params && arch && cfg.mu != 0.0;
  if (prior) params->check(*arch);
  const int n = init.objects();
  std::vector<bool> frozen(n, false);
  for (int f : options.frozen_regions) {
    if (f < 0 || f >= n) throw DataError("frozen region index out of range");
    frozen[f] = true;
  }

  SegmentationResult res;
  res.scene = init;
  for (auto& q : res.scene.regions) check_range(q);
  res.windows.assign(n, WindowPlacement{});
  res.hidden.assign(n, HiddenState{});
  const double nu = cfg.resolved_nu(init.intensities);
  const double lambda = cfg.resolved_lambda(nu);

  auto refit = [&](int i) {
    const auto [cx, cy] = centroid(res.scene.regions[i]);
    const auto cands = window_candidates(u.width(), u.height(), *arch, cfg, cx, cy);
    WindowFit fit = fit_window(res.scene.regions[i], *params, *arch, cands, cfg.mean_field_iters);
    res.windows[i] = fit.window;
    res.hidden[i] = std::move(fit.hidden);
  };
  auto refit_around_window = [&](int i) {
    const auto [cx, cy] = window_center(res.windows[i], *arch);
    const auto cands = window_candidates(u.width(), u.height(), *arch, cfg, cx, cy);
    WindowFit fit = fit_window(res.scene.regions[i], *params, *arch, cands, cfg.mean_field_iters);
    res.windows[i] = fit.window;
    res.hidden[i] = std::move(fit.hidden);
  };
  auto infer_in_window = [&](int i) {
    const WindowResampler rs(u.width(), u.height(), res.windows[i], arch->visible_w, arch->visible_h);
    res.hidden[i] = mean_field_infer(to_visible(rs.apply(res.scene.regions[i])), *params, *arch,
                                     cfg.mean_field_iters);
  };
  if (prior)
    for (int i = 0; i < n; ++i) refit(i);

  auto data_coefficient_of = [&](int i) {
    return coupling == Coupling::occlusion
               ? data_coefficient(res.scene, u, i)
               : single_region_data_coefficient(u, res.scene.intensities, i);
  };
  auto monitored_energy = [&] {
    double e = 0.0;
    if (coupling == Coupling::occlusion)
      e = nms_energy(res.scene, u);
    else
      for (int i = 0; i < n; ++i)
        e += single_data_energy(u, res.scene.intensities, i, res.scene.regions[i]);
    for (int i = 0; i < n; ++i) {
      if (nu != 0.0) e += nu * tv_norm(grid_cast<Field>(res.scene.regions[i]), cfg.tv_mode);
      if (prior)
        e += cfg.mu *
             windowed_shape_energy(res.scene.regions[i], res.windows[i], res.hidden[i], *params, *arch);
    }
    return e;
  };

  res.energy_trace.push_back(monitored_energy());
  if (!std::isfinite(res.energy_trace.back()))
    throw SolverError("non-finite energy after initialisation");
  SceneHypothesis best_scene = res.scene;
  auto best_windows = res.windows;
  auto best_hidden = res.hidden;
  double best_energy = res.energy_trace.back();

  for (int k = 1; k <= cfg.max_outer; ++k) {
    const auto previous = res.scene.regions;
    for (int i = 0; i < n; ++i) {
      if (frozen[i]) continue;
      Field r = data_coefficient_of(i);
      if (prior) {
        if (!cfg.freeze_window || k == 1)
          refit_around_window(i);
        else
          infer_in_window(i);
        const ShapeLinearTerm lin = shape_linear_term(*params, *arch, res.hidden[i]);
        const WindowResampler rs(u.width(), u.height(), res.windows[i], arch->visible_w,
                                 arch->visible_h);
        const Field mapped = rs.apply_transpose(lin.coef);
        for (std::size_t p = 0; p < r.size(); ++p) r[p] += cfg.mu * mapped[p];
      }
      MembershipField& q = res.scene.regions[i];
      const double before = convex_objective(r, q, nu, cfg.tv_mode);
      MembershipField updated = solve_convex_subproblem(r, nu, lambda, cfg.sb_inner,
                                                        cfg.gs_sweeps, cfg.tv_mode, &q, cfg.sb_tol);
      double after = convex_objective(r, updated, nu, cfg.tv_mode);
      // Keep the previous iterate when the inexact inner solve did not improve it.
      if (after > before) {
        updated = q;
        after = before;
      }
      res.steps.push_back({k, i, before, after});
      q = std::move(updated);
    }
    if (cfg.reestimate_intensities) res.scene.intensities = estimate_intensities(u, res.scene).intensities;

    const double e = monitored_energy();
    if (!std::isfinite(e)) {
      std::ostringstream msg;
      msg << "non-finite energy at outer iteration " << k;
      throw SolverError(msg.str());
    }
    res.energy_trace.push_back(e);
    res.outer_iterations = k;
    if (e < best_energy) {
      best_energy = e;
      best_scene = res.scene;
      best_windows = res.windows;
      best_hidden = res.hidden;
    }

    double change = 0.0;
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t p = 0; p < u.size(); ++p)
        s += std::abs(res.scene.regions[i][p] - previous[i][p]);
      change += s / static_cast<double>(u.size());
    }
    if (change < cfg.eps) {
      res.converged = true;
      break;
    }
  }

  if (!res.converged) {
    res.scene = std::move(best_scene);
    res.windows = std::move(best_windows);
    res.hidden = std::move(best_hidden);
  }
  for (const auto& q : res.scene.regions) res.masks.push_back(threshold_region(q, cfg.threshold));
  return res;
}

}  // namespace

WindowFit fit_window(const MembershipField& q, const SbmParams& params,
                     const SbmArchitecture& arch, const SolverConfig& config) {
  const auto [cx, cy] = centroid(q);
  return fit_window(q, params, arch,
                    window_candidates(q.width(), q.height(), arch, config, cx, cy),
                    config.mean_field_iters);
}

SceneHypothesis initialize(const Image& u, const std::vector<BinaryMask>& seeds,
                           const std::vector<double>& intensities, const SolverConfig& config) {
  config.validate();
  SceneHypothesis scene{seed_fields(seeds, u), intensities};
  scene.validate(u);
  const double nu = config.resolved_nu(intensities);
  const double lambda = config.resolved_lambda(nu);
  // Each region grows from its seed over the pixels its intensity explains
  // better than any other cluster. Coupling regions through the occlusion
  // term here would let a back region claim the pixels of a front region
  // that is still only a seed.
  for (int i = 0; i < scene.objects(); ++i) {
    const Field r = single_region_data_coefficient(u, intensities, i);
    scene.regions[i] = solve_convex_subproblem(r, nu, lambda, config.sb_inner, config.gs_sweeps,
                                               config.tv_mode, &scene.regions[i], config.sb_tol);
  }
  return scene;
}

SegmentationResult segment(const Image& u, const SbmParams& params, const SbmArchitecture& arch,
                           const SceneHypothesis& init, const SolverConfig& config,
                           const SegmentOptions& options) {
  return run_segmentation(u, &params, &arch, init, config, Coupling::occlusion, options);
}

SegmentationResult segment_single_baseline(const Image& u, const SbmParams& params,
                                           const SbmArchitecture& arch,
                                           const SceneHypothesis& init,
                                           const SolverConfig& config,
                                           const SegmentOptions& options) {
  return run_segmentation(u, &params, &arch, init, config, Coupling::independent, options);
}

SegmentationResult segment_no_prior(const Image& u, const SceneHypothesis& init,
                                    const SolverConfig& config, const SegmentOptions& options) {
  SolverConfig cfg = config;
  cfg.mu = 0.0;
  return run_segmentation(u, nullptr, nullptr, init, cfg, Coupling::occlusion, options);
}

}  // namespace occseg
