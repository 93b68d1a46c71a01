#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "occseg/grid.hpp"

namespace occseg {

enum class DepthRule { brighter_is_nearer, darker_is_nearer };
enum class BackgroundChoice { largest_extremal, darkest, brightest };

struct InitConfig {
  /// Number of intensity clusters (objects + background); unset selects it
  /// automatically from the SSE curve for k = 1..6.
  std::optional<int> k;
  int kmeans_restarts = 5;
  int kmeans_iters = 100;
  std::uint64_t seed = 0;
  int seed_region_size = 9;
  DepthRule depth_rule = DepthRule::brighter_is_nearer;
  BackgroundChoice background = BackgroundChoice::largest_extremal;

  void validate() const;
};

struct IntensityClusters {
  std::vector<double> centers;  // ascending
  std::vector<double> masses;   // pixel count per cluster
  double sse = 0.0;
  /// SSE after each Lloyd iteration of the winning restart.
  std::vector<double> sse_trace;
};

/// 1-D k-means over the 256-bin intensity histogram. Each non-empty bin is
/// represented by the mean intensity of its pixels and weighted by its
/// count; the best of kmeans_restarts seeded restarts (lowest SSE) wins.
IntensityClusters histogram_kmeans(const Image& u, int k, const InitConfig& cfg);
IntensityClusters histogram_kmeans(const Image& u, const InitConfig& cfg);

/// Elbow choice of k over 1..6: the k after which the SSE drop shrinks most.
int choose_cluster_count(const Image& u, const InitConfig& cfg);

struct DepthOrder {
  std::vector<double> objects;  // front to back
  double background = 0.0;
};

DepthOrder depth_order(const IntensityClusters& clusters, DepthRule rule,
                       BackgroundChoice background = BackgroundChoice::largest_extremal);

/// One small seed per object: the largest connected component of pixels
/// whose nearest intensity is the object's, shrunk to at most
/// seed_region_size pixels grown from its deepest interior pixel.
std::vector<BinaryMask> seed_regions(const Image& u, const DepthOrder& order,
                                     const InitConfig& cfg);

}  // namespace occseg
