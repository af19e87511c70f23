#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "bm4dpc/core.hpp"

namespace bm4dpc {

/// Raised for NIfTI files that parse but cannot be loaded; `kind` tells the cases apart.
class NiftiFormatError : public IoError {
 public:
  enum class Kind { BadMagic, BadHeaderSize, UnsupportedDatatype, UnsupportedDims, Truncated };
  NiftiFormatError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Contents of a single-file NIfTI-1 image with 3 or 4 dimensions.
struct NiftiImage {
  Dims3 dims;
  Index frames = 1;  ///< dim[4]; 1 for 3D files
  bool four_d = false;
  std::array<double, 3> voxel_size{1.0, 1.0, 1.0};
  std::variant<std::vector<double>, std::vector<Complex>> data;

  bool is_complex() const { return std::holds_alternative<std::vector<Complex>>(data); }
};

inline constexpr int kNiftiHeaderSize = 348;
inline constexpr int kNiftiVoxOffset = 352;
inline constexpr short kDatatypeFloat32 = 16;
inline constexpr short kDatatypeComplex64 = 32;

NiftiImage read_nifti(const std::filesystem::path& path);
void write_nifti(const NiftiImage& image, const std::filesystem::path& path);

RealVolume read_real_volume(const std::filesystem::path& path);
RealDataset read_real_dataset(const std::filesystem::path& path);
/// Reads a 4D file keeping its sample kind.
std::variant<RealDataset, ComplexDataset> read_dataset(const std::filesystem::path& path);

void write_nifti(const RealVolume& volume, const std::filesystem::path& path);
void write_nifti(const RealDataset& dataset, const std::filesystem::path& path);
void write_nifti(const ComplexDataset& dataset, const std::filesystem::path& path);

NoiseMap read_noise_map(const std::filesystem::path& path);
/// PSDs are rescaled to unit mean on load.
NoisePsd read_psd(const std::filesystem::path& path);

/// FSL-style text: one row of b-values, optionally three rows of direction components.
std::vector<double> parse_bvals(const std::string& text);
std::vector<Eigen::Vector3d> parse_bvecs(const std::string& text);
std::pair<std::vector<double>, std::optional<std::vector<Eigen::Vector3d>>> read_bvals_bvecs(
    const std::filesystem::path& bval_path, const std::optional<std::filesystem::path>& bvec_path = std::nullopt);
void write_bvals(const std::vector<double>& bvals, const std::filesystem::path& path);
void write_bvecs(const std::vector<Eigen::Vector3d>& bvecs, const std::filesystem::path& path);

/// Attaches encoding to a dataset, checking counts against the volume count.
template <typename Scalar>
void attach_encoding(DwiDataset<Scalar>& dataset, std::vector<double> bvals,
                     std::optional<std::vector<Eigen::Vector3d>> bvecs) {
  if (static_cast<Index>(bvals.size()) != dataset.count())
    throw std::invalid_argument("bval count " + std::to_string(bvals.size()) + " does not match volume count " +
                                std::to_string(dataset.count()));
  if (bvecs && static_cast<Index>(bvecs->size()) != dataset.count())
    throw std::invalid_argument("bvec count " + std::to_string(bvecs->size()) + " does not match volume count " +
                                std::to_string(dataset.count()));
  dataset.bvals = std::move(bvals);
  dataset.bvecs = std::move(bvecs);
}

struct Shell {
  double center = 0.0;
  std::vector<Index> members;
};

struct ShellTable {
  std::vector<Shell> shells;  ///< ascending by center
  double tolerance = 50.0;

  const Shell& highest() const { return shells.back(); }
  /// Index of the shell containing volume `v`.
  std::size_t shell_of(Index v) const;
};

inline constexpr double kDefaultShellTolerance = 50.0;

ShellTable group_shells(const std::vector<double>& bvals, double tolerance = kDefaultShellTolerance);

}  // namespace bm4dpc
