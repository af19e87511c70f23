#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "bm4dpc/core.hpp"

namespace bm4dpc {

/// Parameters of one filtering stage.
struct StageParams {
  Index3 block{4, 4, 4};          ///< block edge per axis
  Index max_group = 16;           ///< upper bound on blocks per group
  Index3 search_radius{5, 5, 5};  ///< half-width of the matching window
  Index step = 3;                 ///< stride between reference corners
  double lambda = 2.7;            ///< hard-threshold multiplier (ignored by the Wiener stage)

  Index block_size() const { return block[0] * block[1] * block[2]; }
};

struct Bm4dProfile {
  StageParams hard_threshold{};
  StageParams wiener{{4, 4, 4}, 32, {5, 5, 5}, 3, 0.0};

  void validate() const;

  /// "np" is the normal profile; "lc" and "mp" are reserved names and rejected.
  static Bm4dProfile by_name(std::string_view name);
};

enum class Stage { HardThreshold, Wiener };

/// Corners of the blocks most similar to the block at `ref` (reference first). The group
/// size is min(candidates, max_group) truncated to a power of two.
std::vector<Index3> match_blocks(const RealVolume& guide, const Index3& ref, const StageParams& params);

/// Separable orthonormal 4D transform of a group stored as a P x M matrix (one column per
/// block, samples first-axis fastest): DCT-II along each block axis, Haar across blocks.
/// Coefficient (p, k) pairs the p-th 3D basis function with the k-th Haar row; (0, 0) is
/// the group DC.
class GroupTransform {
 public:
  explicit GroupTransform(Index3 block);

  const Index3& block() const { return block_; }
  Index block_size() const { return block_[0] * block_[1] * block_[2]; }
  /// Orthonormal DCT-II matrix along one axis (rows are basis functions).
  const Eigen::MatrixXd& dct(int axis) const { return dct_[static_cast<std::size_t>(axis)]; }

  void forward(Eigen::MatrixXd& group) const;
  void inverse(Eigen::MatrixXd& group) const;

 private:
  void apply_block(Eigen::MatrixXd& group, bool transpose) const;

  Index3 block_;
  std::array<Eigen::MatrixXd, 3> dct_;
};

Eigen::MatrixXd dct2_matrix(Index n);
/// In-place orthonormal Haar transform of n = 2^k values spaced `stride` apart.
void haar_forward(double* data, Index n, Index stride);
void haar_inverse(double* data, Index n, Index stride);

/// Exact transform-domain noise variances for correlated noise with a given PSD.
/// Precomputes, per 3D basis function, the noise correlation of its coefficients between
/// blocks at every displacement up to `reach`.
class VarianceModel {
 public:
  VarianceModel(const NoisePsd& psd, Index3 block, Index3 reach);

  /// P x M variances for a group of blocks at `positions` (M a power of two).
  Eigen::MatrixXd variances(std::span<const Index3> positions) const;
  /// Covariance between 3D coefficient p of two blocks displaced by d.
  double correlation(Index p, const Index3& d) const;

  const Index3& reach() const { return reach_; }

 private:
  Index3 block_;
  Index3 reach_;
  Index3 extent_;
  Index block_size_;
  double floor_;
  std::vector<double> table_;
};

/// One-shot variance computation for a single group geometry.
Eigen::MatrixXd coeff_variances(const NoisePsd& psd, std::span<const Index3> positions, Index3 block);

struct ThresholdResult {
  Index retained = 0;
  double retained_variance = 0.0;
};

/// Zeroes coefficients with |c| <= lambda * sqrt(var); the group DC is always kept.
ThresholdResult hard_threshold(Eigen::MatrixXd& coeffs, const Eigen::MatrixXd& variances, double lambda);

/// Empirical Wiener shrinkage against pilot coefficients; returns the aggregation weight
/// 1 / sum(gain^2 * var).
double wiener_shrink(Eigen::MatrixXd& noisy, const Eigen::MatrixXd& pilot, const Eigen::MatrixXd& variances);

/// Weighted accumulation of denoised blocks.
class Aggregator {
 public:
  explicit Aggregator(Dims3 dims);
  void add(const Eigen::MatrixXd& blocks, std::span<const Index3> positions, const Index3& block, double weight);
  /// numerator / denominator; voxels never covered keep the fallback value.
  RealVolume result(const RealVolume& fallback) const;

 private:
  Dims3 dims_;
  Eigen::ArrayXd numerator_;
  Eigen::ArrayXd denominator_;
};

/// Gathers the blocks at `positions` as columns of a P x M matrix.
Eigen::MatrixXd extract_group(const RealVolume& v, std::span<const Index3> positions, const Index3& block);

/// Reference corners along one axis: 0, step, 2*step, ... plus the last valid corner.
std::vector<Index> reference_corners(Index extent, Index block, Index step);

/// One filtering stage over all channels. Matching runs on channel 0 of the noisy input
/// (hard threshold) or of the pilot (Wiener); positions and variances are shared by every
/// channel. All channels must be normalized to the noise level described by `psd`.
std::vector<RealVolume> bm4d_stage(const std::vector<RealVolume>& channels, const NoisePsd& psd,
                                   const Bm4dProfile& profile, Stage stage,
                                   const std::vector<RealVolume>* pilot = nullptr);

/// Hard-threshold stage followed by the Wiener stage.
std::vector<RealVolume> bm4d_multichannel(const std::vector<RealVolume>& channels, const NoisePsd& psd,
                                          const Bm4dProfile& profile = {});

}  // namespace bm4dpc
