#pragma once

#include <optional>

#include "bm4dpc/core.hpp"
#include "bm4dpc/dataio.hpp"

namespace bm4dpc {

struct NoiseEstParams {
  Index tail_count = 3;    ///< trailing principal components treated as noise
  Index map_window = 5;    ///< cubic neighbourhood edge of the local std estimator
  Index psd_window = 16;   ///< in-plane periodogram window edge
  Index chunk_size = 5;    ///< consecutive slices per chunk
  Index chunk_step = 3;
  Index window_step = 8;   ///< in-plane periodogram stride
  double shell_tolerance = kDefaultShellTolerance;

  void validate() const;
};

struct NoiseEstimate {
  NoiseMap map;
  NoisePsd psd;
};

/// Local sample standard deviation (divisor n-1) over a cubic window shrunk at the
/// borders, averaged over the given components.
NoiseMap estimate_noise_map(const std::vector<RealVolume>& tail_pcs, Index window);

/// Slice-chunked local periodograms, minimum across chunks, upsampled to the full grid
/// and extended constantly along the through-slice axis. Inputs must already be
/// divided by the noise map.
NoisePsd estimate_psd(const std::vector<RealVolume>& tail_pcs_normalized, const NoiseEstParams& params);

/// Raises every value to at least `fraction` times the median of the positive values.
NoiseMap clamp_noise_map(const NoiseMap& map, double fraction);

/// Voxel-wise division by a (clamped) noise map.
RealVolume normalize_by(const RealVolume& v, const NoiseMap& clamped);

/// Trailing principal components of the highest shell.
std::vector<RealVolume> highest_shell_tail_pcs(const RealDataset& dataset, const NoiseEstParams& params);

/// Full estimation from the highest shell. When `known_map` is given it is used for
/// normalization and returned in place of an estimated map.
NoiseEstimate estimate_noise(const RealDataset& dataset, const NoiseEstParams& params = {},
                             const std::optional<NoiseMap>& known_map = std::nullopt,
                             double clamp_fraction = 0.01);

/// Average of psi over rings of equal in-plane radial frequency; bins are unit-width in
/// cycles-per-grid units of the smaller in-plane axis.
std::vector<double> radial_profile(const NoisePsd& psd);

}  // namespace bm4dpc
