#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bm4dpc/core.hpp"

namespace bm4dpc {

/// Axis-aligned ellipsoidal compartment with a constant diffusion tensor (mm^2/s).
struct Tissue {
  Eigen::Vector3d center;     ///< fraction of the grid extent
  Eigen::Vector3d semi_axes;  ///< fraction of the grid extent
  Eigen::Matrix3d tensor;
  double s0 = 1.0;
};

struct ShellSpec {
  double bval = 0.0;
  Index count = 1;
};

struct PhantomSpec {
  Dims3 dims{32, 32, 16};
  std::vector<ShellSpec> shells{{0.0, 3}, {1000.0, 15}, {2000.0, 15}};
  std::vector<Tissue> tissues = default_tissues();
  std::uint64_t seed = 1;

  /// Brain-like slab: isotropic parenchyma, two crossing-orientation fibre bundles and a
  /// free-water ventricle. Later tissues overwrite earlier ones.
  static std::vector<Tissue> default_tissues();
  void validate() const;
};

struct Phantom {
  ComplexDataset signal;                 ///< noise-free, with smooth and global phase
  RealDataset magnitude;                 ///< noise-free magnitude
  std::vector<Eigen::Matrix3d> tensors;  ///< per voxel; zero outside the support
  RealVolume s0;
  RealVolume mask;                       ///< 1 inside the support, 0 elsewhere
};

Phantom make_phantom(const PhantomSpec& spec);

/// Deterministic hemisphere directions (Fibonacci lattice) under a seeded random rotation.
std::vector<Eigen::Vector3d> shell_directions(Index count, std::uint64_t seed);

/// In-plane difference of Gaussians, truncated at 4 * sigma_outer and scaled to unit l2 norm.
SpatialKernel make_colored_kernel(double sigma_inner = 0.8, double sigma_outer = 2.0);

/// psi(f) = |DFT(g)|^2 of the zero-padded kernel on the given grid.
NoisePsd kernel_to_psd(const SpatialKernel& kernel, Dims3 dims);

/// Circular convolution of a complex field with a kernel (centre at the kernel origin).
ComplexVolume circular_convolve(const ComplexVolume& field, const SpatialKernel& kernel);

enum class NoiseKind { White, Colored };

struct NoiseSpec {
  double level = 0.05;  ///< fraction of the maximum b=0 magnitude
  NoiseKind kind = NoiseKind::White;
  std::optional<SpatialKernel> kernel;  ///< colored noise kernel; default DoG when absent
  double gfactor_amplitude = 0.5;
  double gfactor_width = 0.25;  ///< bump std as a fraction of each axis extent
  std::uint64_t seed = 7;
};

/// 1 + amplitude * centred Gaussian bump.
RealVolume gfactor_map(Dims3 dims, double amplitude, double width);

struct NoisyData {
  ComplexDataset noisy;
  NoiseMap sigma;  ///< per-channel noise std
  NoisePsd psd;
};

/// Adds complex Gaussian noise, each channel with std sigma(x) and the kernel's PSD.
NoisyData add_noise(const ComplexDataset& clean, const NoiseSpec& spec);

}  // namespace bm4dpc
