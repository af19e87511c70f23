#pragma once

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bm4dpc/core.hpp"

namespace bm4dpc {

/// 10 log10(max(gt)^2 / MSE). Returns +infinity when the volumes are identical.
double psnr(const RealVolume& gt, const RealVolume& test);

struct SsimOptions {
  Index window = 7;      ///< odd edge of the cubic Gaussian window
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  std::optional<double> data_range;  ///< max(gt) - min(gt) when unset
};

/// Mean 3D SSIM over window centres that keep the whole window inside the volume.
double ssim(const RealVolume& gt, const RealVolume& test, const SsimOptions& options = {});

/// sqrt(mean over mask of (gt - test)^2). Mask voxels are those > 0.5.
double rmse_map(const RealVolume& gt, const RealVolume& test, const RealVolume& mask);

struct DtiOptions {
  double max_bval = 1000.0;  ///< volumes with b <= max_bval + tolerance enter the fit
  double tolerance = 50.0;
};

struct DtiMaps {
  RealVolume fa;
  RealVolume md;
  std::vector<Eigen::Matrix3d> tensors;  ///< zero outside the mask
};

/// Weighted least-squares tensor fit on log signals (weights S^2).
DtiMaps fit_dti(const RealDataset& dataset, const RealVolume& mask, const DtiOptions& options = {});

/// FA of a symmetric tensor; 0 for the zero tensor.
double fractional_anisotropy(const Eigen::Matrix3d& d);

/// Marchenko-Pastur PCA over sliding cubic patches.
RealDataset mppca_denoise(const RealDataset& dataset, Index kernel = 5, Index step = 3);

/// Number of signal components kept for one patch given descending covariance
/// eigenvalues and the patch voxel count.
Index mp_signal_rank(const Eigen::VectorXd& eigenvalues_desc, Index voxels);

struct ShellMetrics {
  double bval = 0.0;
  Index volumes = 0;
  double psnr = 0.0;  ///< mean of per-volume PSNR
  double ssim = 0.0;  ///< mean of per-volume SSIM
};

struct MetricReport {
  std::vector<ShellMetrics> shells;
  std::optional<double> fa_rmse;
  std::optional<double> md_rmse;
  Index volume_count = 0;
  Index mask_voxels = 0;

  const ShellMetrics& shell(double bval, double tolerance = 50.0) const;
  std::string to_json() const;
  std::string to_csv() const;
};

/// Per-shell PSNR/SSIM of `test` against `gt`; FA/MD RMSE over the mask when both carry
/// directions. Without a mask every voxel with a positive mean b=0 reference is used.
MetricReport evaluate_metrics(const RealDataset& gt, const RealDataset& test,
                              const std::optional<RealVolume>& mask = std::nullopt);

}  // namespace bm4dpc
