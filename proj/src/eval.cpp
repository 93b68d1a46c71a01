#include "occseg/eval.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <ostream>
#include <thread>

namespace occseg {

namespace {

void check_same(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw DataError("masks differ in size");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= xs.size();
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  return {m, std::sqrt(v / xs.size())};
}

const char* tv_name(TvMode m) { return m == TvMode::isotropic ? "isotropic" : "anisotropic"; }

}  // namespace

BinaryMask threshold_region(const MembershipField& q, double t) {
  BinaryMask m(q.width(), q.height());
  for (std::size_t p = 0; p < q.size(); ++p) m[p] = q[p] > t ? 1 : 0;
  return m;
}

double average_pixel_accuracy(const BinaryMask& pred, const BinaryMask& gt, bool plain) {
  check_same(pred, gt);
  std::size_t fg = 0, bg = 0, fg_hit = 0, bg_hit = 0;
  for (std::size_t p = 0; p < gt.size(); ++p) {
    if (gt[p]) {
      ++fg;
      fg_hit += pred[p] != 0;
    } else {
      ++bg;
      bg_hit += pred[p] == 0;
    }
  }
  if (plain) return 100.0 * static_cast<double>(fg_hit + bg_hit) / gt.size();
  if (fg == 0) return 100.0 * static_cast<double>(bg_hit) / bg;
  if (bg == 0) return 100.0 * static_cast<double>(fg_hit) / fg;
  return 50.0 * (static_cast<double>(fg_hit) / fg + static_cast<double>(bg_hit) / bg);
}

double iou(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt);
  std::size_t inter = 0, uni = 0;
  for (std::size_t p = 0; p < gt.size(); ++p) {
    inter += pred[p] && gt[p];
    uni += pred[p] || gt[p];
  }
  return uni == 0 ? 100.0 : 100.0 * static_cast<double>(inter) / uni;
}

std::string method_name(Method m) {
  switch (m) {
    case Method::nosp: return "nosp";
    case Method::single: return "single";
    case Method::multi: return "multi";
  }
  return "?";
}

Method parse_method(const std::string& name) {
  if (name == "nosp") return Method::nosp;
  if (name == "single") return Method::single;
  if (name == "multi") return Method::multi;
  throw DataError("unknown method '" + name + "' (expected nosp, single or multi)");
}

SegmentationResult segment_image(const Image& u, Method method, int n_objects,
                                 const SbmParams* params, const SbmArchitecture* arch,
                                 const SolverConfig& solver, const InitConfig& init,
                                 const std::optional<std::vector<double>>& intensities,
                                 const std::optional<std::vector<BinaryMask>>& seeds) {
  if (n_objects < 1) throw DataError("need at least one object");
  if (method != Method::nosp && (!params || !arch))
    throw DataError("method " + method_name(method) + " needs a shape model");

  DepthOrder order;
  if (intensities) {
    if (intensities->size() != static_cast<std::size_t>(n_objects) + 1)
      throw DataError("need one intensity per object plus the background");
    order.objects.assign(intensities->begin(), intensities->end() - 1);
    order.background = intensities->back();
  } else {
    const IntensityClusters clusters = histogram_kmeans(u, n_objects + 1, init);
    order = depth_order(clusters, init.depth_rule, init.background);
  }
  std::vector<double> c = order.objects;
  c.push_back(order.background);

  const std::vector<BinaryMask> s = seeds ? *seeds : seed_regions(u, order, init);
  if (static_cast<int>(s.size()) != n_objects) throw DataError("need one seed mask per object");

  switch (method) {
    case Method::nosp:
      return segment_no_prior(u, initialize(u, s, c, solver), solver);
    case Method::single:
      return segment_single_baseline(u, *params, *arch, initialize(u, s, c, solver), solver);
    case Method::multi:
      return segment(u, *params, *arch, initialize(u, s, c, solver), solver);
  }
  throw DataError("unknown method");
}

void ExperimentConfig::validate() const {
  if (methods.empty()) throw DataError("no methods requested");
  if (n_objects != 2 && n_objects != 3) throw DataError("experiments use two or three objects");
  if (count < 1) throw DataError("instance count must be positive");
  if (canvas_w < 0 || canvas_h < 0) throw DataError("canvas dimensions must be non-negative");
  if (!(sigma >= 0.0)) throw DataError("noise sigma must be >= 0");
  if (jobs < 1) throw DataError("jobs must be at least 1");
  solver.validate();
  init.validate();
}

std::uint64_t scene_seed(std::uint64_t experiment_seed, int instance) {
  return splitmix64(experiment_seed ^ splitmix64(static_cast<std::uint64_t>(instance)));
}

ExperimentReport run_experiment(const ShapeDataset& ds, const SbmParams* params,
                                const SbmArchitecture* arch, const ExperimentConfig& cfg) {
  cfg.validate();
  ds.validate();
  const int cw = cfg.canvas_w ? cfg.canvas_w : 2 * ds.width;
  const int ch = cfg.canvas_h ? cfg.canvas_h : 2 * ds.height;
  const int n_methods = static_cast<int>(cfg.methods.size());

  std::vector<InstanceResult> results(static_cast<std::size_t>(cfg.count) * n_methods);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int k = next++; k < cfg.count; k = next++) {
      const std::uint64_t seed = scene_seed(cfg.seed, k);
      std::optional<SyntheticScene> scene;
      std::string scene_error;
      try {
        scene = synthesize(ds, cfg.n_objects, cw, ch, cfg.sigma, seed);
      } catch (const std::exception& e) {
        scene_error = e.what();
      }
      for (int m = 0; m < n_methods; ++m) {
        InstanceResult& r = results[static_cast<std::size_t>(k) * n_methods + m];
        r.instance = k;
        r.method = cfg.methods[m];
        r.scene_seed = seed;
        if (!scene) {
          r.failed = true;
          r.error = scene_error;
          continue;
        }
        const auto t0 = std::chrono::steady_clock::now();
        try {
          std::optional<std::vector<double>> known;
          if (cfg.known_intensities) known = scene->intensities;
          SegmentationResult seg = segment_image(scene->image, r.method, cfg.n_objects, params,
                                                 arch, cfg.solver, cfg.init, known);
          r.outer_iterations = seg.outer_iterations;
          r.converged = seg.converged;
          for (int i = 0; i < cfg.n_objects; ++i)
            r.scores.push_back({i, average_pixel_accuracy(seg.masks[i], scene->truth_masks[i],
                                                          cfg.plain_accuracy),
                                iou(seg.masks[i], scene->truth_masks[i])});
        } catch (const std::exception& e) {
          r.failed = true;
          r.error = e.what();
          r.scores.clear();
        }
        r.runtime_s =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
    }
  };
  const int n_threads = std::min(cfg.jobs, cfg.count);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  ExperimentReport report;
  report.instances = results;
  for (int m = 0; m < n_methods; ++m) {
    int failed = 0;
    std::vector<double> runtimes;
    for (int k = 0; k < cfg.count; ++k) {
      const auto& r = results[static_cast<std::size_t>(k) * n_methods + m];
      if (r.failed)
        ++failed;
      else
        runtimes.push_back(r.runtime_s);
    }
    report.failures.push_back(failed);
    const auto [rt_mean, rt_std] = mean_std(runtimes);
    for (int i = 0; i < cfg.n_objects; ++i) {
      std::vector<double> aps, ious;
      for (int k = 0; k < cfg.count; ++k) {
        const auto& r = results[static_cast<std::size_t>(k) * n_methods + m];
        if (r.failed) continue;
        aps.push_back(r.scores[i].ap);
        ious.push_back(r.scores[i].iou);
      }
      SummaryRow row;
      row.method = cfg.methods[m];
      row.region = i + 1;
      std::tie(row.ap_mean, row.ap_std) = mean_std(aps);
      std::tie(row.iou_mean, row.iou_std) = mean_std(ious);
      row.runtime_mean_s = rt_mean;
      row.runtime_std_s = rt_std;
      row.n_instances = static_cast<int>(aps.size());
      report.rows.push_back(row);
    }
  }
  return report;
}

void write_summary_csv(std::ostream& out, const ExperimentReport& report) {
  out << "method,region,ap_mean,ap_std,iou_mean,iou_std,runtime_mean_s,runtime_std_s,n_instances\n";
  for (const auto& r : report.rows)
    out << method_name(r.method) << ',' << r.region << ',' << fmt(r.ap_mean) << ','
        << fmt(r.ap_std) << ',' << fmt(r.iou_mean) << ',' << fmt(r.iou_std) << ','
        << fmt(r.runtime_mean_s) << ',' << fmt(r.runtime_std_s) << ',' << r.n_instances << '\n';
}

void write_instances_csv(std::ostream& out, const ExperimentReport& report) {
  out << "instance,method,scene_seed,region,ap,iou,runtime_s,outer_iterations,converged,failed,error\n";
  for (const auto& r : report.instances) {
    auto prefix = [&] {
      out << r.instance << ',' << method_name(r.method) << ',' << r.scene_seed << ',';
    };
    if (r.failed) {
      std::string err = r.error;
      std::replace(err.begin(), err.end(), ',', ';');
      std::replace(err.begin(), err.end(), '\n', ' ');
      prefix();
      out << ",,," << fmt(r.runtime_s) << ',' << r.outer_iterations << ",0,1," << err << '\n';
      continue;
    }
    for (const auto& s : r.scores) {
      prefix();
      out << s.region + 1 << ',' << fmt(s.ap) << ',' << fmt(s.iou) << ',' << fmt(r.runtime_s)
          << ',' << r.outer_iterations << ',' << (r.converged ? 1 : 0) << ",0,\n";
    }
  }
}

nlohmann::json to_json(const SolverConfig& c) {
  nlohmann::json j;
  j["mu"] = c.mu;
  j["nu"] = c.nu ? nlohmann::json(*c.nu) : nlohmann::json("auto");
  j["lambda"] = c.lambda ? nlohmann::json(*c.lambda) : nlohmann::json("auto");
  j["eps"] = c.eps;
  j["max_outer"] = c.max_outer;
  j["sb_inner"] = c.sb_inner;
  j["gs_sweeps"] = c.gs_sweeps;
  j["sb_tol"] = c.sb_tol;
  j["threshold"] = c.threshold;
  j["tv_mode"] = tv_name(c.tv_mode);
  j["window_step"] = c.window_step;
  j["window_radius"] = c.window_radius;
  j["window_scales"] = c.window_scales;
  j["mean_field_iters"] = c.mean_field_iters;
  j["freeze_window"] = c.freeze_window;
  j["reestimate_intensities"] = c.reestimate_intensities;
  j["seed"] = c.seed;
  return j;
}

nlohmann::json to_json(const InitConfig& c) {
  nlohmann::json j;
  j["k"] = c.k ? nlohmann::json(*c.k) : nlohmann::json("auto");
  j["kmeans_restarts"] = c.kmeans_restarts;
  j["kmeans_iters"] = c.kmeans_iters;
  j["seed"] = c.seed;
  j["seed_region_size"] = c.seed_region_size;
  j["depth_rule"] = c.depth_rule == DepthRule::brighter_is_nearer ? "brighter_is_nearer"
                                                                  : "darker_is_nearer";
  j["background"] = c.background == BackgroundChoice::largest_extremal ? "largest_extremal"
                    : c.background == BackgroundChoice::darkest        ? "darkest"
                                                                       : "brightest";
  return j;
}

nlohmann::json experiment_metadata(const ExperimentConfig& cfg, const ExperimentReport& report) {
  nlohmann::json j;
  std::vector<std::string> methods;
  for (Method m : cfg.methods) methods.push_back(method_name(m));
  j["methods"] = methods;
  j["n_objects"] = cfg.n_objects;
  j["count"] = cfg.count;
  j["canvas_w"] = cfg.canvas_w;
  j["canvas_h"] = cfg.canvas_h;
  j["sigma"] = cfg.sigma;
  j["seed"] = cfg.seed;
  j["known_intensities"] = cfg.known_intensities;
  j["plain_accuracy"] = cfg.plain_accuracy;
  j["solver"] = to_json(cfg.solver);
  j["init"] = to_json(cfg.init);
  nlohmann::json seeds = nlohmann::json::array();
  for (int k = 0; k < cfg.count; ++k) seeds.push_back(scene_seed(cfg.seed, k));
  j["scene_seeds"] = seeds;
  nlohmann::json failures;
  for (std::size_t m = 0; m < cfg.methods.size() && m < report.failures.size(); ++m)
    failures[method_name(cfg.methods[m])] = report.failures[m];
  j["failures"] = failures;
  return j;
}

}  // namespace occseg
