#pragma once

#include "bm4dpc/core.hpp"

namespace bm4dpc {

struct PhaseFilterParams {
  double lowpass_sigma = 2.0;  ///< in-plane Gaussian std, voxels
};

/// Rotates each slice of each volume toward the real axis using the phase of its
/// Gaussian-smoothed copy and keeps the real part.
RealDataset stabilize_phase(const ComplexDataset& dataset, const PhaseFilterParams& params = {});
RealVolume stabilize_phase(const ComplexVolume& volume, const PhaseFilterParams& params = {});

/// Separable normalized 2D Gaussian smoothing of every slice, replicate-padded.
ComplexVolume gaussian_smooth_slices(const ComplexVolume& volume, double sigma);

}  // namespace bm4dpc
