#pragma once

#include <array>
#include <complex>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

namespace bm4dpc {

using Index = Eigen::Index;
using Complex = std::complex<double>;

/// Thrown when a file cannot be read, written or parsed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when an intermediate result turns non-finite or a decomposition fails.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct is_complex : std::false_type {};
template <typename T>
struct is_complex<std::complex<T>> : std::true_type {};
template <typename T>
inline constexpr bool is_complex_v = is_complex<T>::value;

/// Integer triple used for voxel positions, block sizes and search radii.
using Index3 = std::array<Index, 3>;

/// Grid extent (m, n, o). Voxel ordering is first-axis fastest.
struct Dims3 {
  Index x = 0;
  Index y = 0;
  Index z = 0;

  constexpr Index size() const { return x * y * z; }
  constexpr Index operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  constexpr Index linear(Index i, Index j, Index k) const { return i + x * (j + y * k); }
  constexpr bool valid() const { return x > 0 && y > 0 && z > 0; }
  friend constexpr bool operator==(const Dims3&, const Dims3&) = default;
};

std::string to_string(const Dims3& dims);

/// A dense 3D grid of samples, real or complex.
template <typename Scalar>
class Volume {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Volume() = default;
  explicit Volume(Dims3 dims, Scalar fill = Scalar(0)) : dims_(dims), samples_(Storage::Constant(dims.size(), fill)) {
    if (!dims.valid()) throw std::invalid_argument("volume dims must be positive, got " + to_string(dims));
  }
  Volume(Dims3 dims, Storage samples) : dims_(dims), samples_(std::move(samples)) {
    if (!dims.valid()) throw std::invalid_argument("volume dims must be positive, got " + to_string(dims));
    if (samples_.size() != dims.size())
      throw std::invalid_argument("sample count " + std::to_string(samples_.size()) + " does not match dims " +
                                  to_string(dims));
  }

  const Dims3& dims() const { return dims_; }
  Index size() const { return samples_.size(); }

  Scalar& operator()(Index i, Index j, Index k) { return samples_[dims_.linear(i, j, k)]; }
  const Scalar& operator()(Index i, Index j, Index k) const { return samples_[dims_.linear(i, j, k)]; }
  Scalar& operator[](Index idx) { return samples_[idx]; }
  const Scalar& operator[](Index idx) const { return samples_[idx]; }

  Storage& samples() { return samples_; }
  const Storage& samples() const { return samples_; }

  bool all_finite() const {
    if constexpr (is_complex_v<Scalar>) {
      return samples_.real().allFinite() && samples_.imag().allFinite();
    } else {
      return samples_.allFinite();
    }
  }

 private:
  Dims3 dims_{};
  Storage samples_;
};

using RealVolume = Volume<double>;
using ComplexVolume = Volume<Complex>;

/// A stack of N co-registered volumes with per-volume diffusion encoding.
template <typename Scalar>
struct DwiDataset {
  std::vector<Volume<Scalar>> volumes;
  std::vector<double> bvals;
  std::optional<std::vector<Eigen::Vector3d>> bvecs;

  Index count() const { return static_cast<Index>(volumes.size()); }
  Dims3 dims() const { return volumes.empty() ? Dims3{} : volumes.front().dims(); }

  /// Throws std::invalid_argument when any dataset invariant is violated.
  void validate() const {
    if (volumes.size() < 2) throw std::invalid_argument("a dataset needs at least 2 volumes");
    if (bvals.size() != volumes.size())
      throw std::invalid_argument("b-value count " + std::to_string(bvals.size()) + " does not match volume count " +
                                  std::to_string(volumes.size()));
    const Dims3 d = volumes.front().dims();
    for (const auto& v : volumes) {
      if (v.dims() != d) throw std::invalid_argument("all volumes must share dims");
      if (!v.all_finite()) throw std::invalid_argument("dataset contains non-finite samples");
    }
    for (double b : bvals)
      if (!(b >= 0.0)) throw std::invalid_argument("b-values must be nonnegative");
    if (bvecs) {
      if (bvecs->size() != volumes.size()) throw std::invalid_argument("bvec count does not match volume count");
      for (std::size_t i = 0; i < bvecs->size(); ++i) {
        if (bvals[i] == 0.0) continue;
        if (std::abs((*bvecs)[i].norm() - 1.0) > 1e-6)
          throw std::invalid_argument("bvec " + std::to_string(i) + " is not unit norm");
      }
    }
  }
};

using RealDataset = DwiDataset<double>;
using ComplexDataset = DwiDataset<Complex>;

/// Voxel-wise noise standard deviation, shared by every volume.
struct NoiseMap {
  RealVolume sigma;

  NoiseMap() = default;
  explicit NoiseMap(RealVolume s) : sigma(std::move(s)) { validate(); }
  const Dims3& dims() const { return sigma.dims(); }
  void validate() const;
};

/// Noise power spectral density on the full frequency grid. Under the unit-variance
/// convention white noise has psi == 1 and the grid mean of psi equals the noise variance.
struct NoisePsd {
  RealVolume psi;
  bool unit_variance = false;

  NoisePsd() = default;
  explicit NoisePsd(RealVolume p, bool unit = false) : psi(std::move(p)), unit_variance(unit) { validate(); }
  const Dims3& dims() const { return psi.dims(); }
  double mean() const { return psi.samples().mean(); }
  /// Rescales so the grid mean is exactly one and sets unit_variance.
  void normalize();
  void validate() const;

  static NoisePsd flat(Dims3 dims) { return NoisePsd(RealVolume(dims, 1.0), true); }
};

/// Small convolution kernel; `center` is the sample that lands on the output voxel.
struct SpatialKernel {
  RealVolume g;
  Index3 center{0, 0, 0};

  double norm() const { return g.samples().matrix().norm(); }
};

/// Stacks the dataset volumes as columns of a W x N matrix (W = m*n*o).
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> vectorize(const std::vector<Volume<Scalar>>& volumes) {
  if (volumes.empty()) throw std::invalid_argument("vectorize: no volumes");
  const Dims3 dims = volumes.front().dims();
  const Index w = dims.size();
  const Index n = static_cast<Index>(volumes.size());
  if (w < n)
    throw std::invalid_argument("vectorize: voxel count " + std::to_string(w) + " is smaller than volume count " +
                                std::to_string(n));
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> q(w, n);
  for (Index i = 0; i < n; ++i) {
    const auto& v = volumes[static_cast<std::size_t>(i)];
    if (v.dims() != dims) throw std::invalid_argument("vectorize: volumes differ in dims");
    q.col(i) = v.samples().matrix();
  }
  return q;
}

template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> vectorize(const DwiDataset<Scalar>& dataset) {
  return vectorize(dataset.volumes);
}

/// Inverse of vectorize: each column becomes one volume of shape `dims`.
template <typename Derived>
std::vector<Volume<typename Derived::Scalar>> devectorize(const Eigen::MatrixBase<Derived>& q, Dims3 dims) {
  using Scalar = typename Derived::Scalar;
  if (!dims.valid() || q.rows() != dims.size())
    throw std::invalid_argument("devectorize: row count " + std::to_string(q.rows()) + " does not match dims " +
                                to_string(dims));
  std::vector<Volume<Scalar>> out;
  out.reserve(static_cast<std::size_t>(q.cols()));
  for (Index i = 0; i < q.cols(); ++i) out.emplace_back(dims, typename Volume<Scalar>::Storage(q.col(i).array()));
  return out;
}

/// Real part of every sample.
RealVolume real_part(const ComplexVolume& v);
RealVolume magnitude(const ComplexVolume& v);
ComplexVolume to_complex(const RealVolume& v);

RealDataset real_part(const ComplexDataset& d);
RealDataset magnitude(const ComplexDataset& d);

/// Copies volumes selected by index, keeping encoding metadata aligned.
template <typename Scalar>
DwiDataset<Scalar> select_volumes(const DwiDataset<Scalar>& d, const std::vector<Index>& indices) {
  DwiDataset<Scalar> out;
  for (Index i : indices) {
    const auto u = static_cast<std::size_t>(i);
    out.volumes.push_back(d.volumes.at(u));
    out.bvals.push_back(d.bvals.at(u));
  }
  if (d.bvecs) {
    out.bvecs.emplace();
    for (Index i : indices) out.bvecs->push_back(d.bvecs->at(static_cast<std::size_t>(i)));
  }
  return out;
}

}  // namespace bm4dpc
