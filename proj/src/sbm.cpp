#include "occseg/sbm.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>

namespace occseg {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double log1pexp(double y) { return y > 0 ? y + std::log1p(std::exp(-y)) : std::log1p(std::exp(y)); }

VectorXd sigmoid(const VectorXd& y) { return y.unaryExpr([](double t) { return occseg::sigmoid(t); }); }

VectorXd bernoulli(const VectorXd& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  VectorXd s(p.size());
  for (Index i = 0; i < p.size(); ++i) s[i] = unit(rng) < p[i] ? 1.0 : 0.0;
  return s;
}

double binary_entropy(double p) {
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log(1.0 - p);
  return h;
}

double cross_entropy(const VectorXd& target, const VectorXd& p) {
  double ce = 0.0;
  for (Index i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], 1e-12, 1.0 - 1e-12);
    ce -= target[i] * std::log(q) + (1.0 - target[i]) * std::log(1.0 - q);
  }
  return ce / static_cast<double>(p.size());
}

double log_sum_exp(const std::vector<double>& terms) {
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

void check_dims(const SbmArchitecture& arch, const SbmParams& params) {
  arch.validate();
  params.check(arch);
}

/// Gathers the visible vector into a patch_pixels x patches matrix.
MatrixXd gather_patches(const SbmArchitecture& arch, const std::vector<std::vector<int>>& idx,
                        const VectorXd& v) {
  MatrixXd m(arch.patch_pixels(), arch.patches());
  for (int k = 0; k < arch.patches(); ++k)
    for (int p = 0; p < arch.patch_pixels(); ++p) m(p, k) = v[idx[k][p]];
  return m;
}

/// hidden1 vector viewed as hidden1_per_patch x patches (column k = patch k).
Eigen::Map<const MatrixXd> per_patch(const SbmArchitecture& arch, const VectorXd& h1) {
  return {h1.data(), arch.hidden1_per_patch, arch.patches()};
}

std::vector<std::vector<int>>& cached_indices(const SbmArchitecture& arch) {
  thread_local SbmArchitecture key{};
  thread_local std::vector<std::vector<int>> idx;
  if (!(key == arch) || idx.empty()) {
    idx = patch_visible_indices(arch);
    key = arch;
  }
  return idx;
}

double learning_rate_at(const SbmTrainingConfig& cfg, double base, int epoch) {
  return base * cfg.lr_decay_epochs / (cfg.lr_decay_epochs + epoch);
}

std::vector<VectorXd> to_vectors(const std::vector<BinaryMask>& data, const SbmArchitecture& arch) {
  if (data.empty()) throw DataError("training data is empty");
  std::vector<VectorXd> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].width() != arch.visible_w || data[i].height() != arch.visible_h)
      throw DataError("training mask " + std::to_string(i) + " does not match the visible size");
    out.push_back(to_visible(data[i]));
  }
  return out;
}

VectorXd data_log_odds(const std::vector<VectorXd>& data) {
  VectorXd mean = VectorXd::Zero(data.front().size());
  for (const auto& v : data) mean += v;
  mean /= static_cast<double>(data.size());
  return mean.unaryExpr([](double p) {
    const double c = std::clamp(p, 0.01, 0.99);
    return std::log(c / (1.0 - c));
  });
}

MatrixXd gaussian_matrix(Index rows, Index cols, double std, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, std);
  MatrixXd m(rows, cols);
  for (Index j = 0; j < cols; ++j)
    for (Index i = 0; i < rows; ++i) m(i, j) = g(rng);
  return m;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Fisher-Yates with an explicit draw so the permutation only depends on
  // the engine, not on the standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

double momentum_at(const SbmTrainingConfig& cfg, int epoch) {
  return epoch < 5 ? std::min(0.5, cfg.momentum) : cfg.momentum;
}

template <class M>
void sgd_step(M& param, M& velocity, const M& grad, double lr, double mom, double decay) {
  velocity = mom * velocity + lr * (grad - decay * param);
  param += velocity;
}

}  // namespace

double sigmoid(double y) {
  if (y >= 0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

void SbmArchitecture::validate() const {
  if (visible_w < 1 || visible_h < 1 || patch_rows < 1 || patch_cols < 1 || patch_side < 1 ||
      hidden1_per_patch < 1 || hidden2 < 1 || overlap_d < 0)
    throw DataError("SBM architecture counts must be positive");
  if (overlap_d >= patch_side) throw DataError("SBM patch overlap must be smaller than the patch");
  if (patch_cols * patch_side - (patch_cols - 1) * overlap_d != visible_w ||
      patch_rows * patch_side - (patch_rows - 1) * overlap_d != visible_h)
    throw DataError("SBM patches do not tile the visible rectangle exactly");
}

SbmArchitecture SbmArchitecture::tiled(int visible_w, int visible_h, int patch_rows,
                                       int patch_cols, int overlap_d, int hidden1_per_patch,
                                       int hidden2) {
  if (patch_rows < 1 || patch_cols < 1) throw DataError("patch grid must be at least 1x1");
  const int span_w = visible_w + (patch_cols - 1) * overlap_d;
  const int span_h = visible_h + (patch_rows - 1) * overlap_d;
  if (span_w % patch_cols != 0 || span_h % patch_rows != 0 ||
      span_w / patch_cols != span_h / patch_rows)
    throw DataError("no square patch size tiles the visible rectangle with this grid");
  SbmArchitecture a{visible_w, visible_h, patch_rows,        patch_cols,
                    span_w / patch_cols, overlap_d, hidden1_per_patch, hidden2};
  a.validate();
  return a;
}

std::vector<std::vector<int>> patch_visible_indices(const SbmArchitecture& arch) {
  arch.validate();
  std::vector<std::vector<int>> idx;
  idx.reserve(arch.patches());
  for (int pr = 0; pr < arch.patch_rows; ++pr)
    for (int pc = 0; pc < arch.patch_cols; ++pc) {
      const int x0 = pc * arch.patch_stride(), y0 = pr * arch.patch_stride();
      std::vector<int> patch;
      patch.reserve(arch.patch_pixels());
      for (int y = 0; y < arch.patch_side; ++y)
        for (int x = 0; x < arch.patch_side; ++x)
          patch.push_back((y0 + y) * arch.visible_w + (x0 + x));
      idx.push_back(std::move(patch));
    }
  return idx;
}

SbmParams SbmParams::zeros(const SbmArchitecture& arch) {
  arch.validate();
  return {MatrixXd::Zero(arch.patch_pixels(), arch.hidden1_per_patch),
          MatrixXd::Zero(arch.hidden1(), arch.hidden2), VectorXd::Zero(arch.visible()),
          VectorXd::Zero(arch.hidden1()), VectorXd::Zero(arch.hidden2)};
}

void SbmParams::check(const SbmArchitecture& arch) const {
  if (W1.rows() != arch.patch_pixels() || W1.cols() != arch.hidden1_per_patch ||
      W2.rows() != arch.hidden1() || W2.cols() != arch.hidden2 || b.size() != arch.visible() ||
      c1.size() != arch.hidden1() || c2.size() != arch.hidden2)
    throw DataError("SBM parameters do not match the architecture");
}

bool SbmParams::all_finite() const {
  return W1.allFinite() && W2.allFinite() && b.allFinite() && c1.allFinite() && c2.allFinite();
}

bool SbmParams::operator==(const SbmParams& o) const {
  auto same = [](const auto& a, const auto& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
  };
  return same(W1, o.W1) && same(W2, o.W2) && same(b, o.b) && same(c1, o.c1) && same(c2, o.c2);
}

SbmTrainingConfig SbmTrainingConfig::toy() {
  SbmTrainingConfig c;
  c.epochs_layer1 = 100;
  c.epochs_layer2 = 50;
  c.epochs_joint = 50;
  c.learning_rate = 0.1;
  c.minibatch = 10;
  c.persistent_chains = 20;
  c.chain_gibbs_steps = 1;
  return c;
}

SbmArchitecture toy_architecture() { return SbmArchitecture::tiled(16, 16, 2, 2, 6, 40, 25); }

void SbmTrainingConfig::validate() const {
  if (epochs_layer1 < 0 || epochs_layer2 < 0 || epochs_joint < 0 || minibatch < 1 ||
      cd_steps < 1 || persistent_chains < 1 || chain_gibbs_steps < 1 || mean_field_iters < 1)
    throw DataError("SBM training counts must be positive");
  if (!(learning_rate > 0.0) || !(lr_decay_epochs > 0.0))
    throw DataError("SBM learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw DataError("SBM momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0) || !(joint_lr_factor > 0.0))
    throw DataError("SBM weight decay must be >= 0 and the joint factor > 0");
}

VectorXd bottom_up(const SbmArchitecture& arch, const SbmParams& params, const VectorXd& v) {
  if (v.size() != arch.visible()) throw DataError("visible vector has the wrong length");
  const auto& idx = cached_indices(arch);
  const MatrixXd vk = gather_patches(arch, idx, v);
  const MatrixXd a = params.W1.transpose() * vk;  // m x K
  return Eigen::Map<const VectorXd>(a.data(), a.size());
}

VectorXd top_down(const SbmArchitecture& arch, const SbmParams& params, const VectorXd& h1) {
  if (h1.size() != arch.hidden1()) throw DataError("hidden1 vector has the wrong length");
  const auto& idx = cached_indices(arch);
  const MatrixXd contrib = params.W1 * per_patch(arch, h1);  // s^2 x K
  VectorXd out = VectorXd::Zero(arch.visible());
  for (int k = 0; k < arch.patches(); ++k)
    for (int p = 0; p < arch.patch_pixels(); ++p) out[idx[k][p]] += contrib(p, k);
  return out;
}

Eigen::SparseMatrix<double> expand_tiled_weights(const SbmArchitecture& arch,
                                                 const SbmParams& params) {
  check_dims(arch, params);
  const auto idx = patch_visible_indices(arch);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(arch.patches()) * arch.patch_pixels() * arch.hidden1_per_patch);
  for (int k = 0; k < arch.patches(); ++k)
    for (int j = 0; j < arch.hidden1_per_patch; ++j)
      for (int p = 0; p < arch.patch_pixels(); ++p)
        trip.emplace_back(idx[k][p], k * arch.hidden1_per_patch + j, params.W1(p, j));
  Eigen::SparseMatrix<double> w(arch.visible(), arch.hidden1());
  w.setFromTriplets(trip.begin(), trip.end());
  return w;
}

double sbm_energy(const VectorXd& v, const HiddenState& h, const SbmParams& params,
                  const SbmArchitecture& arch) {
  check_dims(arch, params);
  if (h.h1.size() != arch.hidden1() || h.h2.size() != arch.hidden2)
    throw DataError("hidden state does not match the architecture");
  const double patch_term = bottom_up(arch, params, v).dot(h.h1);
  return -patch_term - params.b.dot(v) - params.c1.dot(h.h1) - h.h1.dot(params.W2 * h.h2) -
         params.c2.dot(h.h2);
}

VectorXd cond_h1(const VectorXd& v, const VectorXd& h2, const SbmParams& params,
                 const SbmArchitecture& arch) {
  check_dims(arch, params);
  if (h2.size() != arch.hidden2) throw DataError("hidden2 vector has the wrong length");
  return sigmoid(bottom_up(arch, params, v) + params.W2 * h2 + params.c1);
}

VectorXd cond_h2(const VectorXd& h1, const SbmParams& params) {
  if (h1.size() != params.W2.rows()) throw DataError("hidden1 vector has the wrong length");
  return sigmoid(params.W2.transpose() * h1 + params.c2);
}

VectorXd cond_v(const VectorXd& h1, const SbmParams& params, const SbmArchitecture& arch) {
  check_dims(arch, params);
  return sigmoid(top_down(arch, params, h1) + params.b);
}

HiddenState mean_field_infer(const VectorXd& v, const SbmParams& params,
                             const SbmArchitecture& arch, int iters) {
  if (iters < 1) throw DataError("mean-field iterations must be at least 1");
  check_dims(arch, params);
  const VectorXd up = bottom_up(arch, params, v) + params.c1;
  HiddenState h{VectorXd::Zero(arch.hidden1()), VectorXd::Constant(arch.hidden2, 0.5)};
  for (int t = 0; t < iters; ++t) {
    h.h1 = sigmoid(up + params.W2 * h.h2);
    h.h2 = cond_h2(h.h1, params);
  }
  return h;
}

double mean_field_free_energy(const VectorXd& v, const HiddenState& mu, const SbmParams& params,
                              const SbmArchitecture& arch) {
  double entropy = 0.0;
  for (Index j = 0; j < mu.h1.size(); ++j) entropy += binary_entropy(mu.h1[j]);
  for (Index k = 0; k < mu.h2.size(); ++k) entropy += binary_entropy(mu.h2[k]);
  return sbm_energy(v, mu, params, arch) - entropy;
}

std::vector<BinaryMask> sample_shapes(const SbmParams& params, const SbmArchitecture& arch,
                                      int n, int gibbs_steps, std::uint64_t seed) {
  if (n < 1 || gibbs_steps < 1) throw DataError("sample count and Gibbs steps must be positive");
  check_dims(arch, params);
  std::mt19937_64 rng(seed);
  std::vector<BinaryMask> out;
  out.reserve(n);
  const VectorXd half_v = VectorXd::Constant(arch.visible(), 0.5);
  const VectorXd half_h2 = VectorXd::Constant(arch.hidden2, 0.5);
  for (int s = 0; s < n; ++s) {
    VectorXd v = bernoulli(half_v, rng);
    VectorXd h2 = bernoulli(half_h2, rng);
    for (int t = 0; t < gibbs_steps; ++t) {
      const VectorXd h1 = bernoulli(cond_h1(v, h2, params, arch), rng);
      v = bernoulli(cond_v(h1, params, arch), rng);
      h2 = bernoulli(cond_h2(h1, params), rng);
    }
    BinaryMask m(arch.visible_w, arch.visible_h);
    for (Index i = 0; i < v.size(); ++i) m[static_cast<std::size_t>(i)] = v[i] > 0.5 ? 1 : 0;
    out.push_back(std::move(m));
  }
  return out;
}

double exact_log_prob(const VectorXd& v, const SbmParams& params, const SbmArchitecture& arch) {
  check_dims(arch, params);
  if (v.size() != arch.visible()) throw DataError("visible vector has the wrong length");
  const int n1 = arch.hidden1(), n2 = arch.hidden2;
  if (n1 + n2 > 20) throw DataError("exact enumeration is limited to 20 hidden units");

  const VectorXd up = bottom_up(arch, params, v);
  const double bv = params.b.dot(v);
  std::vector<double> joint_terms, partition_terms;
  joint_terms.reserve(std::size_t{1} << (n1 + n2));
  partition_terms.reserve(std::size_t{1} << (n1 + n2));
  VectorXd h1(n1), h2(n2);
  for (std::uint32_t a = 0; a < (1u << n1); ++a) {
    for (int j = 0; j < n1; ++j) h1[j] = (a >> j) & 1u;
    // Sum over v of exp(-E) factorizes over visible units.
    const VectorXd act = top_down(arch, params, h1) + params.b;
    double log_visible_sum = 0.0;
    for (Index i = 0; i < act.size(); ++i) log_visible_sum += log1pexp(act[i]);
    const VectorXd coupling = params.W2.transpose() * h1 + params.c2;
    const double h1_terms = params.c1.dot(h1);
    const double vh = up.dot(h1);
    for (std::uint32_t c = 0; c < (1u << n2); ++c) {
      for (int k = 0; k < n2; ++k) h2[k] = (c >> k) & 1u;
      const double top = h1_terms + coupling.dot(h2);
      joint_terms.push_back(vh + bv + top);
      partition_terms.push_back(log_visible_sum + top);
    }
  }
  return log_sum_exp(joint_terms) - log_sum_exp(partition_terms);
}

ShapeLinearTerm shape_linear_term(const SbmParams& params, const SbmArchitecture& arch,
                                  const HiddenState& h) {
  check_dims(arch, params);
  if (h.h1.size() != arch.hidden1() || h.h2.size() != arch.hidden2)
    throw DataError("hidden state does not match the architecture");
  const VectorXd lin = top_down(arch, params, h.h1) + params.b;
  ShapeLinearTerm t{Field(arch.visible_w, arch.visible_h), 0.0};
  for (Index i = 0; i < lin.size(); ++i) t.coef[static_cast<std::size_t>(i)] = -lin[i];
  t.constant = -params.c1.dot(h.h1) - h.h1.dot(params.W2 * h.h2) - params.c2.dot(h.h2);
  return t;
}

double reconstruction_error(const std::vector<BinaryMask>& data, const SbmParams& params,
                            const SbmArchitecture& arch, int mean_field_iters) {
  const auto vs = to_vectors(data, arch);
  double err = 0.0;
  for (const auto& v : vs) {
    const HiddenState h = mean_field_infer(v, params, arch, mean_field_iters);
    err += (v - cond_v(h.h1, params, arch)).cwiseAbs().mean();
  }
  return err / static_cast<double>(vs.size());
}

TrainResult pretrain_layer1(const std::vector<BinaryMask>& data, const SbmArchitecture& arch,
                            const SbmTrainingConfig& cfg) {
  arch.validate();
  cfg.validate();
  const auto vs = to_vectors(data, arch);
  const auto& idx = cached_indices(arch);
  std::mt19937_64 rng(cfg.seed);

  SbmParams p = SbmParams::zeros(arch);
  p.W1 = gaussian_matrix(arch.patch_pixels(), arch.hidden1_per_patch, 0.01, rng);
  p.b = data_log_odds(vs);

  MatrixXd vel_w = MatrixXd::Zero(p.W1.rows(), p.W1.cols());
  VectorXd vel_b = VectorXd::Zero(p.b.size()), vel_c = VectorXd::Zero(p.c1.size());
  TrainResult result;

  for (int epoch = 0; epoch < cfg.epochs_layer1; ++epoch) {
    const double lr = learning_rate_at(cfg, cfg.learning_rate, epoch);
    const double mom = momentum_at(cfg, epoch);
    const auto order = shuffled_order(vs.size(), rng);
    double loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
      const std::size_t end = std::min(order.size(), start + cfg.minibatch);
      MatrixXd gw = MatrixXd::Zero(p.W1.rows(), p.W1.cols());
      VectorXd gb = VectorXd::Zero(p.b.size()), gc = VectorXd::Zero(p.c1.size());
      for (std::size_t s = start; s < end; ++s) {
        const VectorXd& v = vs[order[s]];
        const VectorXd ph = sigmoid(bottom_up(arch, p, v) + p.c1);
        loss += cross_entropy(v, sigmoid(top_down(arch, p, ph) + p.b));
        VectorXd h = bernoulli(ph, rng);
        VectorXd vn, phn;
        for (int step = 0; step < cfg.cd_steps; ++step) {
          const VectorXd pv = sigmoid(top_down(arch, p, h) + p.b);
          vn = step + 1 < cfg.cd_steps ? bernoulli(pv, rng) : pv;
          phn = sigmoid(bottom_up(arch, p, vn) + p.c1);
          if (step + 1 < cfg.cd_steps) h = bernoulli(phn, rng);
        }
        gw += gather_patches(arch, idx, v) * per_patch(arch, ph).transpose();
        gw -= gather_patches(arch, idx, vn) * per_patch(arch, phn).transpose();
        gb += v - vn;
        gc += ph - phn;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      sgd_step(p.W1, vel_w, MatrixXd(gw * inv), lr, mom, cfg.weight_decay);
      sgd_step(p.b, vel_b, VectorXd(gb * inv), lr, mom, 0.0);
      sgd_step(p.c1, vel_c, VectorXd(gc * inv), lr, mom, 0.0);
    }
    result.curve.epoch_loss.push_back(loss / static_cast<double>(vs.size()));
  }
  result.params = std::move(p);
  return result;
}

TrainResult pretrain_layer2(const std::vector<BinaryMask>& data, const SbmParams& params,
                            const SbmArchitecture& arch, const SbmTrainingConfig& cfg) {
  check_dims(arch, params);
  cfg.validate();
  const auto vs = to_vectors(data, arch);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  // Layer-1 posteriors of the data are the visible units of this RBM.
  std::vector<VectorXd> xs;
  xs.reserve(vs.size());
  for (const auto& v : vs) xs.push_back(sigmoid(bottom_up(arch, params, v) + params.c1));

  SbmParams p = params;
  p.W2 = gaussian_matrix(arch.hidden1(), arch.hidden2, 0.01, rng);
  p.c2.setZero();
  VectorXd a = data_log_odds(xs);

  MatrixXd vel_w = MatrixXd::Zero(p.W2.rows(), p.W2.cols());
  VectorXd vel_a = VectorXd::Zero(a.size()), vel_c = VectorXd::Zero(p.c2.size());
  TrainResult result;

  for (int epoch = 0; epoch < cfg.epochs_layer2; ++epoch) {
    const double lr = learning_rate_at(cfg, cfg.learning_rate, epoch);
    const double mom = momentum_at(cfg, epoch);
    const auto order = shuffled_order(xs.size(), rng);
    double loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
      const std::size_t end = std::min(order.size(), start + cfg.minibatch);
      MatrixXd gw = MatrixXd::Zero(p.W2.rows(), p.W2.cols());
      VectorXd ga = VectorXd::Zero(a.size()), gc = VectorXd::Zero(p.c2.size());
      for (std::size_t s = start; s < end; ++s) {
        const VectorXd& x = xs[order[s]];
        const VectorXd ph = sigmoid(p.W2.transpose() * x + p.c2);
        loss += cross_entropy(x, sigmoid(p.W2 * ph + a));
        VectorXd h = bernoulli(ph, rng);
        VectorXd xn, phn;
        for (int step = 0; step < cfg.cd_steps; ++step) {
          const VectorXd px = sigmoid(p.W2 * h + a);
          xn = step + 1 < cfg.cd_steps ? bernoulli(px, rng) : px;
          phn = sigmoid(p.W2.transpose() * xn + p.c2);
          if (step + 1 < cfg.cd_steps) h = bernoulli(phn, rng);
        }
        gw += x * ph.transpose() - xn * phn.transpose();
        ga += x - xn;
        gc += ph - phn;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      sgd_step(p.W2, vel_w, MatrixXd(gw * inv), lr, mom, cfg.weight_decay);
      sgd_step(a, vel_a, VectorXd(ga * inv), lr, mom, 0.0);
      sgd_step(p.c2, vel_c, VectorXd(gc * inv), lr, mom, 0.0);
    }
    result.curve.epoch_loss.push_back(loss / static_cast<double>(xs.size()));
  }
  result.params = std::move(p);
  return result;
}

TrainResult joint_train(const std::vector<BinaryMask>& data, const SbmParams& params,
                        const SbmArchitecture& arch, const SbmTrainingConfig& cfg) {
  check_dims(arch, params);
  cfg.validate();
  const auto vs = to_vectors(data, arch);
  const auto& idx = cached_indices(arch);
  std::mt19937_64 rng(cfg.seed ^ 0xd1b54a32d192ed03ULL);

  SbmParams p = params;
  struct Chain {
    VectorXd v, h1, h2;
  };
  std::vector<Chain> chains;
  for (int c = 0; c < cfg.persistent_chains; ++c) {
    const VectorXd& v0 = vs[static_cast<std::size_t>(rng() % vs.size())];
    const HiddenState h = mean_field_infer(v0, p, arch, cfg.mean_field_iters);
    chains.push_back({v0, bernoulli(h.h1, rng), bernoulli(h.h2, rng)});
  }

  MatrixXd vel_w1 = MatrixXd::Zero(p.W1.rows(), p.W1.cols());
  MatrixXd vel_w2 = MatrixXd::Zero(p.W2.rows(), p.W2.cols());
  VectorXd vel_b = VectorXd::Zero(p.b.size()), vel_c1 = VectorXd::Zero(p.c1.size()),
           vel_c2 = VectorXd::Zero(p.c2.size());
  TrainResult result;
  const double base_lr = cfg.learning_rate * cfg.joint_lr_factor;

  for (int epoch = 0; epoch < cfg.epochs_joint; ++epoch) {
    const double lr = learning_rate_at(cfg, base_lr, epoch);
    const double mom = momentum_at(cfg, epoch);
    const auto order = shuffled_order(vs.size(), rng);
    double loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch) {
      const std::size_t end = std::min(order.size(), start + cfg.minibatch);
      MatrixXd gw1 = MatrixXd::Zero(p.W1.rows(), p.W1.cols());
      MatrixXd gw2 = MatrixXd::Zero(p.W2.rows(), p.W2.cols());
      VectorXd gb = VectorXd::Zero(p.b.size()), gc1 = VectorXd::Zero(p.c1.size()),
               gc2 = VectorXd::Zero(p.c2.size());
      const double inv_data = 1.0 / static_cast<double>(end - start);
      const double inv_model = 1.0 / static_cast<double>(chains.size());

      for (std::size_t s = start; s < end; ++s) {
        const VectorXd& v = vs[order[s]];
        const HiddenState mu = mean_field_infer(v, p, arch, cfg.mean_field_iters);
        loss += cross_entropy(v, cond_v(mu.h1, p, arch));
        gw1 += inv_data * gather_patches(arch, idx, v) * per_patch(arch, mu.h1).transpose();
        gw2 += inv_data * mu.h1 * mu.h2.transpose();
        gb += inv_data * v;
        gc1 += inv_data * mu.h1;
        gc2 += inv_data * mu.h2;
      }
      for (auto& ch : chains) {
        for (int t = 0; t < cfg.chain_gibbs_steps; ++t) {
          ch.h1 = bernoulli(cond_h1(ch.v, ch.h2, p, arch), rng);
          ch.v = bernoulli(cond_v(ch.h1, p, arch), rng);
          ch.h2 = bernoulli(cond_h2(ch.h1, p), rng);
        }
        gw1 -= inv_model * gather_patches(arch, idx, ch.v) * per_patch(arch, ch.h1).transpose();
        gw2 -= inv_model * ch.h1 * ch.h2.transpose();
        gb -= inv_model * ch.v;
        gc1 -= inv_model * ch.h1;
        gc2 -= inv_model * ch.h2;
      }
      sgd_step(p.W1, vel_w1, gw1, lr, mom, cfg.weight_decay);
      sgd_step(p.W2, vel_w2, gw2, lr, mom, cfg.weight_decay);
      sgd_step(p.b, vel_b, gb, lr, mom, 0.0);
      sgd_step(p.c1, vel_c1, gc1, lr, mom, 0.0);
      sgd_step(p.c2, vel_c2, gc2, lr, mom, 0.0);
    }
    result.curve.epoch_loss.push_back(loss / static_cast<double>(vs.size()));
  }
  result.params = std::move(p);
  return result;
}

// ---------------------------------------------------------------------------
// Model file

namespace {

constexpr std::array<char, 8> kMagic = {'O', 'C', 'C', 'S', 'B', 'M', '\0', '\0'};

template <class U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes;
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size()))
    throw DataError("model file is truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

template <class M>
void put_matrix(std::ostream& out, const M& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) put_le(out, std::bit_cast<std::uint64_t>(m(i, j)));
}

template <class M>
void get_matrix(std::istream& in, M& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) m(i, j) = std::bit_cast<double>(get_le<std::uint64_t>(in));
}

}  // namespace

void save_model(std::ostream& out, const SbmArchitecture& arch, const SbmParams& params) {
  check_dims(arch, params);
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kModelFormatVersion);
  put_le<std::uint32_t>(out, 0);
  for (int field : {arch.visible_w, arch.visible_h, arch.patch_rows, arch.patch_cols,
                    arch.patch_side, arch.overlap_d, arch.hidden1_per_patch, arch.hidden2})
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(field));
  put_matrix(out, params.W1);
  put_matrix(out, params.W2);
  put_matrix(out, params.b);
  put_matrix(out, params.c1);
  put_matrix(out, params.c2);
  if (!out) throw DataError("failed to write model");
}

void load_model(std::istream& in, SbmArchitecture& arch, SbmParams& params) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw DataError("not an SBM model file (bad magic)");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kModelFormatVersion)
    throw DataError("unsupported model file version " + std::to_string(version));
  (void)get_le<std::uint32_t>(in);
  std::array<int, 8> dims{};
  for (int& d : dims) {
    const auto raw = get_le<std::uint64_t>(in);
    if (raw > (1u << 24)) throw DataError("model dimension out of range");
    d = static_cast<int>(raw);
  }
  SbmArchitecture a{dims[0], dims[1], dims[2], dims[3], dims[4], dims[5], dims[6], dims[7]};
  a.validate();
  SbmParams p = SbmParams::zeros(a);
  get_matrix(in, p.W1);
  get_matrix(in, p.W2);
  get_matrix(in, p.b);
  get_matrix(in, p.c1);
  get_matrix(in, p.c2);
  arch = a;
  params = std::move(p);
}

void save_model(const std::filesystem::path& path, const SbmArchitecture& arch,
                const SbmParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  save_model(out, arch, params);
}

void load_model(const std::filesystem::path& path, SbmArchitecture& arch, SbmParams& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file " + path.string());
  load_model(in, arch, params);
}

}  // namespace occseg
