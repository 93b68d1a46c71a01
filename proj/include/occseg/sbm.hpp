#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include "occseg/grid.hpp"

namespace occseg {

/// Layout of a Shape Boltzmann Machine.
///
/// The visible rectangle is tiled by patch_rows x patch_cols square patches of
/// side patch_side; neighbouring patches share overlap_d rows/columns of
/// pixels. Each patch owns hidden1_per_patch first-layer units, all patches
/// sharing one weight matrix. The second hidden layer (hidden2 units) is fully
/// connected to the first.
struct SbmArchitecture {
  int visible_w = 0;
  int visible_h = 0;
  int patch_rows = 1;
  int patch_cols = 1;
  int patch_side = 0;
  int overlap_d = 0;
  int hidden1_per_patch = 0;
  int hidden2 = 0;

  int patches() const { return patch_rows * patch_cols; }
  int visible() const { return visible_w * visible_h; }
  int hidden1() const { return patches() * hidden1_per_patch; }
  int patch_pixels() const { return patch_side * patch_side; }
  int patch_stride() const { return patch_side - overlap_d; }

  /// Throws DataError unless the patches tile the visible rectangle exactly.
  void validate() const;

  /// Derives patch_side from the visible size, patch grid and overlap.
  static SbmArchitecture tiled(int visible_w, int visible_h, int patch_rows,
                               int patch_cols, int overlap_d,
                               int hidden1_per_patch, int hidden2);

  bool operator==(const SbmArchitecture&) const = default;
};

/// Visible-unit indices (row-major) covered by each patch, in patch-local
/// row-major order. Index [k][p] is the visible index of pixel p of patch k.
std::vector<std::vector<int>> patch_visible_indices(const SbmArchitecture& arch);

struct SbmParams {
  Eigen::MatrixXd W1;  // patch_pixels x hidden1_per_patch, shared by all patches
  Eigen::MatrixXd W2;  // hidden1 x hidden2
  Eigen::VectorXd b;   // visible
  Eigen::VectorXd c1;  // hidden1
  Eigen::VectorXd c2;  // hidden2

  static SbmParams zeros(const SbmArchitecture& arch);
  void check(const SbmArchitecture& arch) const;
  bool all_finite() const;
  bool operator==(const SbmParams& other) const;
};

struct HiddenState {
  Eigen::VectorXd h1;
  Eigen::VectorXd h2;
};

struct SbmTrainingConfig {
  int epochs_layer1 = 3000;
  int epochs_layer2 = 1000;
  int epochs_joint = 1000;
  double learning_rate = 0.05;
  /// lr(epoch) = learning_rate * lr_decay_epochs / (lr_decay_epochs + epoch)
  double lr_decay_epochs = 100.0;
  /// Joint training runs at learning_rate * joint_lr_factor.
  double joint_lr_factor = 0.2;
  /// Momentum is capped at 0.5 for the first five epochs of every stage.
  /// Higher values make the persistent-chain joint stage diverge.
  double momentum = 0.5;
  double weight_decay = 1e-4;
  int minibatch = 20;
  int cd_steps = 1;
  int persistent_chains = 5;
  int chain_gibbs_steps = 5;
  int mean_field_iters = 10;
  std::uint64_t seed = 1;

  /// Desk-scale settings for 16x16 toy shapes: 100/50/50 epochs, lr 0.1,
  /// minibatch 10, 20 persistent chains advanced one Gibbs sweep per update.
  static SbmTrainingConfig toy();

  void validate() const;
};

/// 16x16 visibles, 2x2 patches of side 11 overlapping by 6, 40 hidden units
/// per patch and 25 in the second layer.
SbmArchitecture toy_architecture();

/// Per-epoch training-set reconstruction cross-entropy (nats per unit).
struct TrainingCurve {
  std::vector<double> epoch_loss;
};

/// Row-major visible vector of a field.
template <class G>
Eigen::VectorXd to_visible(const G& g) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(g.size()));
  for (std::size_t i = 0; i < g.size(); ++i) v[static_cast<Eigen::Index>(i)] = static_cast<double>(g[i]);
  return v;
}

double sigmoid(double y);

/// W~1^T v: bottom-up input of every first-layer unit.
Eigen::VectorXd bottom_up(const SbmArchitecture& arch, const SbmParams& params,
                          const Eigen::VectorXd& v);
/// W~1 h1: top-down input of every visible unit.
Eigen::VectorXd top_down(const SbmArchitecture& arch, const SbmParams& params,
                         const Eigen::VectorXd& h1);

/// The expanded visible x hidden1 weight matrix of the tiled first layer.
Eigen::SparseMatrix<double> expand_tiled_weights(const SbmArchitecture& arch,
                                                 const SbmParams& params);

double sbm_energy(const Eigen::VectorXd& v, const HiddenState& h, const SbmParams& params,
                  const SbmArchitecture& arch);

Eigen::VectorXd cond_h1(const Eigen::VectorXd& v, const Eigen::VectorXd& h2,
                        const SbmParams& params, const SbmArchitecture& arch);
Eigen::VectorXd cond_h2(const Eigen::VectorXd& h1, const SbmParams& params);
Eigen::VectorXd cond_v(const Eigen::VectorXd& h1, const SbmParams& params,
                       const SbmArchitecture& arch);

/// Mean-field marginals of both hidden layers for real-valued visibles,
/// starting from h2 = 0.5 and alternating h1, h2 updates `iters` times.
HiddenState mean_field_infer(const Eigen::VectorXd& v, const SbmParams& params,
                             const SbmArchitecture& arch, int iters);

/// Variational free energy E(v, mu) - H(mu1) - H(mu2) of a factorized
/// posterior; non-increasing under mean_field_infer sweeps.
double mean_field_free_energy(const Eigen::VectorXd& v, const HiddenState& mu,
                              const SbmParams& params, const SbmArchitecture& arch);

/// n independent block-Gibbs chains started from uniform noise, each run for
/// gibbs_steps sweeps; returns the final visible sample of every chain.
std::vector<BinaryMask> sample_shapes(const SbmParams& params, const SbmArchitecture& arch,
                                      int n, int gibbs_steps, std::uint64_t seed);

/// log p(v) by exhaustive enumeration of the hidden units (at most 20).
double exact_log_prob(const Eigen::VectorXd& v, const SbmParams& params,
                      const SbmArchitecture& arch);

/// Shape energy restricted to visibles q as an affine function:
/// E(q, h) = <coef, q> + constant.
struct ShapeLinearTerm {
  Field coef;
  double constant = 0.0;
};
ShapeLinearTerm shape_linear_term(const SbmParams& params, const SbmArchitecture& arch,
                                  const HiddenState& h);

/// Mean per-pixel |v - p(v | h1_mf)| over a dataset, using mean_field_infer.
double reconstruction_error(const std::vector<BinaryMask>& data, const SbmParams& params,
                            const SbmArchitecture& arch, int mean_field_iters = 10);

struct TrainResult {
  SbmParams params;
  TrainingCurve curve;
};

TrainResult pretrain_layer1(const std::vector<BinaryMask>& data, const SbmArchitecture& arch,
                            const SbmTrainingConfig& cfg);
TrainResult pretrain_layer2(const std::vector<BinaryMask>& data, const SbmParams& params,
                            const SbmArchitecture& arch, const SbmTrainingConfig& cfg);
TrainResult joint_train(const std::vector<BinaryMask>& data, const SbmParams& params,
                        const SbmArchitecture& arch, const SbmTrainingConfig& cfg);

/// Model container: magic "OCCSBM\0\0", u32 version, u32 reserved, eight u64
/// architecture fields, then W1, W2 (row-major), b, c1, c2 as little-endian
/// IEEE-754 doubles.
inline constexpr std::uint32_t kModelFormatVersion = 1;
void save_model(std::ostream& out, const SbmArchitecture& arch, const SbmParams& params);
void load_model(std::istream& in, SbmArchitecture& arch, SbmParams& params);
void save_model(const std::filesystem::path& path, const SbmArchitecture& arch,
                const SbmParams& params);
void load_model(const std::filesystem::path& path, SbmArchitecture& arch, SbmParams& params);

}  // namespace occseg
