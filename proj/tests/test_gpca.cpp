#include <doctest.h>

#include <random>

#include <Eigen/SVD>

#include "bm4dpc/gpca.hpp"

using namespace bm4dpc;

namespace {

Eigen::MatrixXd gaussian(Index r, Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  return Eigen::MatrixXd::NullaryExpr(r, c, [&] { return n(rng); });
}

}  // namespace

TEST_CASE("identity input") {
  const auto s = forward_pca(Eigen::MatrixXd::Identity(2, 2));
  CHECK(s.eigenvalues[0] == doctest::Approx(1.0));
  CHECK(s.eigenvalues[1] == doctest::Approx(1.0));
  CHECK(orthonormality_error(s.components) < 1e-12);
  CHECK(s.components.norm() == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("rank-one input") {
  const Eigen::VectorXd q = gaussian(50, 1, 1);
  Eigen::MatrixXd m(50, 2);
  m << q, 2.0 * q;
  const auto s = forward_pca(m);
  CHECK(s.eigenvalues[1] <= 1e-10 * s.eigenvalues[0]);
  CHECK(s.components.col(1).norm() <= 1e-6 * s.components.col(0).norm());
}

TEST_CASE("eigenvalues match an SVD oracle") {
  const Eigen::MatrixXd q = gaussian(100, 8, 2);
  const auto s = forward_pca(q);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(q, Eigen::ComputeThinU | Eigen::ComputeThinV);
  for (Index i = 0; i < 8; ++i) {
    const double sv2 = svd.singularValues()[i] * svd.singularValues()[i];
    CHECK(std::abs(s.eigenvalues[i] - sv2) <= 1e-8 * sv2);
    // A = U Sigma up to column sign
    const Eigen::VectorXd us = svd.matrixU().col(i) * svd.singularValues()[i];
    const double err = std::min((s.components.col(i) - us).norm(), (s.components.col(i) + us).norm());
    CHECK(err <= 1e-8 * us.norm());
  }
  for (Index i = 1; i < 8; ++i) CHECK(s.eigenvalues[i] <= s.eigenvalues[i - 1]);
  CHECK(orthonormality_error(s.basis) <= 1e-10);
}

TEST_CASE("sign convention makes the largest entry positive") {
  const auto s = forward_pca(gaussian(60, 6, 4));
  for (Index c = 0; c < 6; ++c) {
    Index r;
    s.basis.col(c).cwiseAbs().maxCoeff(&r);
    CHECK(s.basis(r, c) > 0.0);
  }
}

TEST_CASE("round trip and identity basis") {
  const Eigen::MatrixXd q = gaussian(200, 10, 5);
  const auto s = forward_pca(q);
  CHECK((inverse_pca(s.components, s.basis) - q).norm() <= 1e-8 * q.norm());
  CHECK(inverse_pca(q, Eigen::MatrixXd::Identity(10, 10)) == q);
  CHECK(std::abs(s.components.norm() - q.norm()) <= 1e-10 * q.norm());
}

TEST_CASE("dropping the last PC equals truncated SVD") {
  const Eigen::MatrixXd q = gaussian(80, 6, 6);
  const auto s = forward_pca(q);
  Eigen::MatrixXd a = s.components;
  a.col(5).setZero();
  const Eigen::MatrixXd rec = inverse_pca(a, s.basis);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(q, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::MatrixXd oracle =
      svd.matrixU().leftCols(5) * svd.singularValues().head(5).asDiagonal() * svd.matrixV().leftCols(5).transpose();
  CHECK((rec - oracle).norm() <= 1e-8 * oracle.norm());
}

TEST_CASE("noise spreads evenly over PCs") {
  const Eigen::MatrixXd q = gaussian(4096, 16, 7);
  const auto s = forward_pca(q);
  for (Index c = 0; c < 16; ++c) {
    const auto col = s.components.col(c).array();
    const double var = (col - col.mean()).square().sum() / double(col.size() - 1);
    CHECK(var >= 0.85);
    CHECK(var <= 1.15);
  }
}

TEST_CASE("complex Hermitian path") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  const Eigen::MatrixXcd q = Eigen::MatrixXcd::NullaryExpr(40, 4, [&] { return Complex(n(rng), n(rng)); });
  const auto s = forward_pca(q);
  CHECK(orthonormality_error(s.basis) <= 1e-10);
  CHECK((inverse_pca(s.components, s.basis) - q).norm() <= 1e-8 * q.norm());
}

TEST_CASE("preconditions") {
  CHECK_THROWS_AS(forward_pca(Eigen::MatrixXd::Zero(3, 4)), std::invalid_argument);
  Eigen::MatrixXd bad = Eigen::MatrixXd::Ones(5, 2);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(forward_pca(bad), std::invalid_argument);
  CHECK_THROWS_AS(inverse_pca(Eigen::MatrixXd::Ones(5, 2), Eigen::MatrixXd::Ones(2, 2)), std::invalid_argument);
}
