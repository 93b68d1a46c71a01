#include "occseg/scene_init.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <random>

namespace occseg {

namespace {

struct WeightedPoints {
  std::vector<double> x;
  std::vector<double> w;
};

WeightedPoints histogram_points(const Image& u) {
  std::array<double, 256> sum{}, count{};
  for (std::size_t p = 0; p < u.size(); ++p) {
    const int b = std::min(255, static_cast<int>(u[p] * 256.0));
    sum[b] += u[p];
    count[b] += 1.0;
  }
  WeightedPoints pts;
  for (int b = 0; b < 256; ++b)
    if (count[b] > 0) {
      pts.x.push_back(sum[b] / count[b]);
      pts.w.push_back(count[b]);
    }
  return pts;
}

int nearest(const std::vector<double>& centers, double x) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(centers.size()); ++c)
    if (std::abs(x - centers[c]) < std::abs(x - centers[best])) best = c;
  return best;
}

double point_sse(const WeightedPoints& pts, const std::vector<double>& centers) {
  double s = 0.0;
  for (std::size_t i = 0; i < pts.x.size(); ++i) {
    const double d = pts.x[i] - centers[nearest(centers, pts.x[i])];
    s += pts.w[i] * d * d;
  }
  return s;
}

std::size_t weighted_draw(const std::vector<double>& weights, std::mt19937_64& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::uniform_real_distribution<double> unit(0.0, total);
  double t = unit(rng), acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (t < acc && weights[i] > 0) return i;
  }
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0) return i;
  return 0;
}

IntensityClusters lloyd(const WeightedPoints& pts, int k, int iters, std::mt19937_64& rng) {
  std::vector<double> centers;
  centers.push_back(pts.x[weighted_draw(pts.w, rng)]);
  while (static_cast<int>(centers.size()) < k) {
    std::vector<double> d2(pts.x.size());
    for (std::size_t i = 0; i < pts.x.size(); ++i) {
      const double d = pts.x[i] - centers[nearest(centers, pts.x[i])];
      d2[i] = pts.w[i] * d * d;
    }
    centers.push_back(pts.x[weighted_draw(d2, rng)]);
  }

  IntensityClusters out;
  bool reseeded = false;
  std::vector<int> assign(pts.x.size(), -1);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < pts.x.size(); ++i) {
      const int a = nearest(centers, pts.x[i]);
      changed |= a != assign[i];
      assign[i] = a;
    }
    std::vector<double> sum(k, 0.0), mass(k, 0.0);
    for (std::size_t i = 0; i < pts.x.size(); ++i) {
      sum[assign[i]] += pts.w[i] * pts.x[i];
      mass[assign[i]] += pts.w[i];
    }
    for (int c = 0; c < k; ++c) {
      if (mass[c] > 0) {
        centers[c] = sum[c] / mass[c];
        continue;
      }
      if (reseeded) throw DataError("k-means left a cluster empty after re-seeding");
      // Re-seed at the point contributing most to the SSE.
      std::size_t far = 0;
      double worst = -1.0;
      for (std::size_t i = 0; i < pts.x.size(); ++i) {
        const double d = pts.x[i] - centers[assign[i]];
        if (pts.w[i] * d * d > worst) worst = pts.w[i] * d * d, far = i;
      }
      centers[c] = pts.x[far];
      reseeded = true;
      changed = true;
    }
    out.sse_trace.push_back(point_sse(pts, centers));
    if (!changed) break;
  }

  std::vector<double> mass(k, 0.0);
  for (std::size_t i = 0; i < pts.x.size(); ++i) mass[nearest(centers, pts.x[i])] += pts.w[i];
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return centers[a] < centers[b]; });
  for (int c : order) {
    out.centers.push_back(centers[c]);
    out.masses.push_back(mass[c]);
  }
  out.sse = point_sse(pts, centers);
  return out;
}

}  // namespace

void InitConfig::validate() const {
  if (k && *k < 1) throw DataError("cluster count must be at least 1");
  if (kmeans_restarts < 1 || kmeans_iters < 1 || seed_region_size < 1)
    throw DataError("scene initialisation counts must be positive");
}

IntensityClusters histogram_kmeans(const Image& u, int k, const InitConfig& cfg) {
  cfg.validate();
  if (k < 1) throw DataError("cluster count must be at least 1");
  const WeightedPoints pts = histogram_points(u);
  if (k > static_cast<int>(pts.x.size()))
    throw DataError("more clusters requested than distinct intensity levels");
  std::mt19937_64 rng(cfg.seed);
  IntensityClusters best;
  for (int r = 0; r < cfg.kmeans_restarts; ++r) {
    IntensityClusters c = lloyd(pts, k, cfg.kmeans_iters, rng);
    if (r == 0 || c.sse < best.sse) best = std::move(c);
  }
  return best;
}

int choose_cluster_count(const Image& u, const InitConfig& cfg) {
  const int levels = static_cast<int>(histogram_points(u).x.size());
  const int kmax = std::min(6, levels);
  if (kmax <= 1) return 1;
  std::vector<double> sse(kmax + 1, 0.0);
  for (int k = 1; k <= kmax; ++k) sse[k] = histogram_kmeans(u, k, cfg).sse;
  auto drop = [&](int k) { return k <= kmax ? sse[k - 1] - sse[k] : 0.0; };
  int best = 2;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int k = 2; k <= kmax; ++k) {
    const double score = drop(k) - drop(k + 1);
    if (score > best_score) best_score = score, best = k;
  }
  return best;
}

IntensityClusters histogram_kmeans(const Image& u, const InitConfig& cfg) {
  return histogram_kmeans(u, cfg.k ? *cfg.k : choose_cluster_count(u, cfg), cfg);
}

DepthOrder depth_order(const IntensityClusters& clusters, DepthRule rule,
                       BackgroundChoice background) {
  const auto& c = clusters.centers;
  if (c.size() < 2) throw DataError("depth ordering needs at least two intensity clusters");
  if (clusters.masses.size() != c.size()) throw DataError("cluster masses do not match centres");
  const std::size_t lo = std::min_element(c.begin(), c.end()) - c.begin();
  const std::size_t hi = std::max_element(c.begin(), c.end()) - c.begin();
  std::size_t bg = lo;
  switch (background) {
    case BackgroundChoice::darkest: bg = lo; break;
    case BackgroundChoice::brightest: bg = hi; break;
    case BackgroundChoice::largest_extremal:
      bg = clusters.masses[hi] > clusters.masses[lo] ? hi : lo;
      break;
  }
  DepthOrder out;
  out.background = c[bg];
  for (std::size_t i = 0; i < c.size(); ++i)
    if (i != bg) out.objects.push_back(c[i]);
  if (rule == DepthRule::brighter_is_nearer)
    std::sort(out.objects.begin(), out.objects.end(), std::greater<>());
  else
    std::sort(out.objects.begin(), out.objects.end());
  return out;
}

std::vector<BinaryMask> seed_regions(const Image& u, const DepthOrder& order,
                                     const InitConfig& cfg) {
  cfg.validate();
  const int w = u.width(), h = u.height();
  std::vector<double> levels = order.objects;
  levels.push_back(order.background);
  std::vector<int> label(u.size());
  for (std::size_t p = 0; p < u.size(); ++p) label[p] = nearest(levels, u[p]);

  const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
  std::vector<BinaryMask> seeds;
  std::vector<int> missing;
  for (int obj = 0; obj < static_cast<int>(order.objects.size()); ++obj) {
    // Largest 4-connected component of this object's pixels.
    std::vector<int> comp(u.size(), -1);
    std::vector<std::vector<int>> comps;
    for (int start = 0; start < static_cast<int>(u.size()); ++start) {
      if (label[start] != obj || comp[start] >= 0) continue;
      std::vector<int> members{start};
      comp[start] = static_cast<int>(comps.size());
      for (std::size_t head = 0; head < members.size(); ++head) {
        const int x = members[head] % w, y = members[head] / w;
        for (int d = 0; d < 4; ++d) {
          const int nx = x + dx[d], ny = y + dy[d];
          if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
          const int np = ny * w + nx;
          if (label[np] == obj && comp[np] < 0) {
            comp[np] = comp[start];
            members.push_back(np);
          }
        }
      }
      comps.push_back(std::move(members));
    }
    if (comps.empty()) {
      missing.push_back(obj);
      continue;
    }
    const int best = static_cast<int>(
        std::max_element(comps.begin(), comps.end(),
                         [](const auto& a, const auto& b) { return a.size() < b.size(); }) -
        comps.begin());
    const auto& members = comps[best];

    // Distance of every member to the component boundary.
    std::vector<int> depth(u.size(), -1);
    std::vector<int> frontier;
    for (int p : members) {
      const int x = p % w, y = p / w;
      bool edge = false;
      for (int d = 0; d < 4; ++d) {
        const int nx = x + dx[d], ny = y + dy[d];
        if (nx < 0 || ny < 0 || nx >= w || ny >= h || comp[ny * w + nx] != best) edge = true;
      }
      if (edge) depth[p] = 0, frontier.push_back(p);
    }
    for (std::size_t head = 0; head < frontier.size(); ++head) {
      const int p = frontier[head], x = p % w, y = p / w;
      for (int d = 0; d < 4; ++d) {
        const int nx = x + dx[d], ny = y + dy[d];
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const int np = ny * w + nx;
        if (comp[np] == best && depth[np] < 0) {
          depth[np] = depth[p] + 1;
          frontier.push_back(np);
        }
      }
    }

    double cx = 0.0, cy = 0.0;
    for (int p : members) cx += p % w, cy += p / w;
    cx /= members.size();
    cy /= members.size();
    int start = members.front();
    auto centre_dist = [&](int p) { return std::hypot(p % w - cx, p / w - cy); };
    for (int p : members) {
      if (depth[p] > depth[start] ||
          (depth[p] == depth[start] && centre_dist(p) < centre_dist(start)))
        start = p;
    }

    // Grow from the start pixel in order of distance, staying connected.
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    std::vector<char> queued(u.size(), 0);
    BinaryMask seed(w, h);
    int taken = 0;
    pq.emplace(0.0, start);
    queued[start] = 1;
    const int sx = start % w, sy = start / w;
    while (!pq.empty() && taken < cfg.seed_region_size) {
      const int p = pq.top().second;
      pq.pop();
      seed[p] = 1;
      ++taken;
      const int x = p % w, y = p / w;
      for (int d = 0; d < 4; ++d) {
        const int nx = x + dx[d], ny = y + dy[d];
        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
        const int np = ny * w + nx;
        if (comp[np] == best && !queued[np]) {
          queued[np] = 1;
          pq.emplace(std::hypot(nx - sx, ny - sy), np);
        }
      }
    }
    seeds.push_back(std::move(seed));
  }
  if (!missing.empty()) {
    std::string list;
    for (int m : missing) list += (list.empty() ? "" : ", ") + std::to_string(m);
    throw DataError("no pixel is closest to the intensity of region(s) " + list);
  }
  return seeds;
}

}  // namespace occseg
