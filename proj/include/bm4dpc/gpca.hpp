#pragma once

#include <cmath>

#include <Eigen/Eigenvalues>

#include "bm4dpc/core.hpp"

namespace bm4dpc {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Global PCA of a W x N data matrix: components = Q * basis, basis orthonormal,
/// eigenvalues of Q^H Q in nonincreasing order.
template <typename Scalar>
struct PcStack {
  MatrixX<Scalar> components;  ///< A, W x N
  MatrixX<Scalar> basis;       ///< V, N x N
  Eigen::VectorXd eigenvalues;

  Index count() const { return basis.cols(); }
  std::vector<Volume<Scalar>> pcs(Dims3 dims) const { return devectorize(components, dims); }
};

/// Eigendecomposition of the N x N Gram matrix. Each basis column is rotated so that its
/// largest-magnitude entry is real and positive (first such entry on ties).
template <typename Derived>
PcStack<typename Derived::Scalar> forward_pca(const Eigen::MatrixBase<Derived>& q) {
  using Scalar = typename Derived::Scalar;
  const Index w = q.rows();
  const Index n = q.cols();
  if (n < 1) throw std::invalid_argument("forward_pca: empty matrix");
  if (w < n)
    throw std::invalid_argument("forward_pca: W=" + std::to_string(w) + " is smaller than N=" + std::to_string(n));
  if constexpr (is_complex_v<Scalar>) {
    if (!q.real().allFinite() || !q.imag().allFinite()) throw std::invalid_argument("forward_pca: non-finite entries");
  } else {
    if (!q.allFinite()) throw std::invalid_argument("forward_pca: non-finite entries");
  }

  const MatrixX<Scalar> gram = q.adjoint() * q;
  Eigen::SelfAdjointEigenSolver<MatrixX<Scalar>> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericalError("forward_pca: eigendecomposition failed");

  PcStack<Scalar> out;
  out.basis.resize(n, n);
  out.eigenvalues.resize(n);
  for (Index c = 0; c < n; ++c) {
    const Index src = n - 1 - c;  // solver returns ascending order
    out.eigenvalues[c] = std::max(0.0, eig.eigenvalues()[src]);
    auto col = eig.eigenvectors().col(src);
    Index pivot = 0;
    double best = -1.0;
    for (Index r = 0; r < n; ++r) {
      const double mag = std::abs(col[r]);
      if (mag > best) {
        best = mag;
        pivot = r;
      }
    }
    const Scalar rot = best > 0.0 ? Scalar(std::abs(col[pivot])) / col[pivot] : Scalar(1);
    out.basis.col(c) = col * rot;
  }
  out.components = q * out.basis;
  return out;
}

/// Largest absolute deviation of V^H V from the identity.
template <typename Derived>
double orthonormality_error(const Eigen::MatrixBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> g = v.adjoint() * v - MatrixX<Scalar>::Identity(v.cols(), v.cols());
  return g.cwiseAbs().maxCoeff();
}

/// Maps denoised components back to data space: S_hat * V^H.
template <typename DerivedS, typename DerivedV>
MatrixX<typename DerivedS::Scalar> inverse_pca(const Eigen::MatrixBase<DerivedS>& s_hat,
                                               const Eigen::MatrixBase<DerivedV>& v) {
  if (v.rows() != v.cols() || s_hat.cols() != v.rows())
    throw std::invalid_argument("inverse_pca: shape mismatch");
  if (orthonormality_error(v) > 1e-8) throw std::invalid_argument("inverse_pca: basis is not orthonormal");
  return s_hat * v.adjoint();
}

}  // namespace bm4dpc
