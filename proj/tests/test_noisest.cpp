#include <doctest.h>

#include <random>

#include "bm4dpc/noisest.hpp"
#include "bm4dpc/parallel.hpp"
#include "bm4dpc/phasestab.hpp"
#include "bm4dpc/simulate.hpp"

using namespace bm4dpc;

namespace {

RealVolume white(Dims3 d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  RealVolume v(d);
  for (Index i = 0; i < v.size(); ++i) v[i] = scale * n(rng);
  return v;
}

RealVolume colored(Dims3 d, std::uint64_t seed) {
  ComplexVolume c(d);
  const RealVolume re = white(d, seed);
  for (Index i = 0; i < c.size(); ++i) c[i] = re[i];
  return real_part(circular_convolve(c, make_colored_kernel()));
}

double pearson(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
  const Eigen::ArrayXd x = a - a.mean(), y = b - b.mean();
  return (x * y).sum() / std::sqrt(x.square().sum() * y.square().sum());
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  return pearson(Eigen::Map<const Eigen::ArrayXd>(a.data(), Index(a.size())),
                 Eigen::Map<const Eigen::ArrayXd>(b.data(), Index(b.size())));
}

}  // namespace

TEST_CASE("noise map of a zero component is zero") {
  const auto m = estimate_noise_map({RealVolume(Dims3{8, 8, 8}, 0.0)}, 5);
  CHECK(m.sigma.samples().abs().maxCoeff() == 0.0);
}

TEST_CASE("noise map of unit white noise") {
  const auto m = estimate_noise_map({white(Dims3{32, 32, 32}, 1)}, 5);
  const double mean = m.sigma.samples().mean();
  CHECK(mean >= 0.95);
  CHECK(mean <= 1.05);
}

TEST_CASE("noise map follows a spatial profile") {
  // three tail components, as the estimator averages by default; one component alone
  // tops out near r = 0.8 because a 5^3 window std has ~6% relative error
  const Dims3 d{48, 48, 48};
  const RealVolume g = gfactor_map(d, 0.5, 0.25);
  std::vector<RealVolume> pcs;
  for (std::uint64_t s = 0; s < 3; ++s) {
    pcs.push_back(white(d, 20 + s));
    pcs.back().samples() *= g.samples();
  }
  const auto m = estimate_noise_map(pcs, 5);
  CHECK(pearson(m.sigma.samples(), g.samples()) >= 0.9);
}

TEST_CASE("noise map matches a brute-force window scan at a corner") {
  const RealVolume pc = white(Dims3{7, 6, 5}, 3);
  const auto m = estimate_noise_map({pc}, 5);
  // corner (0,0,0): window [0,2]^3
  double s = 0.0, ss = 0.0;
  for (Index k = 0; k < 3; ++k)
    for (Index j = 0; j < 3; ++j)
      for (Index i = 0; i < 3; ++i) {
        s += pc(i, j, k);
        ss += pc(i, j, k) * pc(i, j, k);
      }
  const double var = (ss - s * s / 27.0) / 26.0;
  CHECK(m.sigma(0, 0, 0) == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
  CHECK_THROWS_AS(estimate_noise_map({pc}, 7), std::invalid_argument);
  CHECK_THROWS_AS(estimate_noise_map({pc}, 4), std::invalid_argument);
}

TEST_CASE("flat PSD from white noise") {
  NoiseEstParams p;
  const Dims3 d{64, 64, 16};
  const auto psd = estimate_psd({white(d, 4)}, p);
  CHECK(std::abs(psd.mean() - 1.0) <= 1e-6);
  const double rms = std::sqrt((psd.psi.samples() - 1.0).square().mean());
  CHECK(rms <= 0.10);
  CHECK((psd.psi.samples() >= 0.0).all());
}

TEST_CASE("colored PSD matches the kernel spectrum radially") {
  NoiseEstParams p;
  const Dims3 d{64, 64, 16};
  const auto est = estimate_psd({colored(d, 5), colored(d, 6), colored(d, 7)}, p);
  const auto truth = kernel_to_psd(make_colored_kernel(), d);
  CHECK(pearson(radial_profile(est), radial_profile(truth)) >= 0.9);
  CHECK(std::abs(est.mean() - 1.0) <= 1e-6);
  // constant along the through-slice frequency axis
  for (Index k = 1; k < d.z; ++k) CHECK(est.psi(5, 9, k) == est.psi(5, 9, 0));
}

TEST_CASE("PSD preconditions") {
  NoiseEstParams p;
  CHECK_THROWS_AS(estimate_psd({white(Dims3{12, 32, 8}, 1)}, p), std::invalid_argument);
  CHECK_THROWS_AS(estimate_psd({white(Dims3{32, 32, 4}, 1)}, p), std::invalid_argument);
}

TEST_CASE("scale equivariance") {
  const Dims3 d{32, 32, 10};
  const std::vector<RealVolume> pcs{colored(d, 8), white(d, 9)};
  std::vector<RealVolume> scaled = pcs;
  for (auto& v : scaled) v.samples() *= 3.5;
  const auto m1 = estimate_noise_map(pcs, 5), m2 = estimate_noise_map(scaled, 5);
  CHECK(((m2.sigma.samples() - 3.5 * m1.sigma.samples()).abs() <= 1e-12 * m2.sigma.samples().abs().maxCoeff()).all());
  NoiseEstParams p;
  const auto p1 = estimate_psd(pcs, p), p2 = estimate_psd(scaled, p);
  CHECK((p1.psi.samples() - p2.psi.samples()).abs().maxCoeff() <= 1e-10);
}

TEST_CASE("clamp raises small values to a fraction of the median") {
  RealVolume s(Dims3{5, 1, 1});
  s.samples() << 0.0, 1.0, 2.0, 3.0, 4.0;
  const auto c = clamp_noise_map(NoiseMap(s), 0.1);
  // median of positive values {1,2,3,4} is 2.5
  CHECK(c.sigma[0] == doctest::Approx(0.25));
  CHECK(c.sigma[1] == 1.0);
  CHECK_THROWS_AS(clamp_noise_map(NoiseMap(s), 1.5), std::invalid_argument);
}

TEST_CASE("estimation from a simulated dataset") {
  const Phantom ph = make_phantom(PhantomSpec{});
  NoiseSpec ns;
  ns.level = 0.05;
  ns.kind = NoiseKind::Colored;
  const NoisyData nd = add_noise(ph.signal, ns);
  const RealDataset real = stabilize_phase(nd.noisy);
  const auto est = estimate_noise(real);
  double num = 0.0, den = 0.0;
  for (Index i = 0; i < ph.mask.size(); ++i)
    if (ph.mask[i] > 0.5) {
      num += std::pow(est.map.sigma[i] - nd.sigma.sigma[i], 2);
      den += std::pow(nd.sigma.sigma[i], 2);
    }
  CHECK(std::sqrt(num / den) <= 0.15);
  CHECK((est.map.sigma.samples() >= 0.0).all());
  CHECK((est.psd.psi.samples() >= 0.0).all());

  SUBCASE("known map is used as given") {
    const auto k = estimate_noise(real, {}, nd.sigma);
    CHECK((k.map.sigma.samples() == nd.sigma.sigma.samples()).all());
  }
  SUBCASE("deterministic across worker counts") {
    set_thread_count(1);
    const auto a = estimate_noise(real);
    set_thread_count(3);
    const auto b = estimate_noise(real);
    CHECK((a.map.sigma.samples() == b.map.sigma.samples()).all());
    CHECK((a.psd.psi.samples() == b.psd.psi.samples()).all());
  }
}

TEST_CASE("highest shell must exceed the tail count") {
  RealDataset d;
  for (int v = 0; v < 5; ++v) d.volumes.push_back(white(Dims3{16, 16, 8}, std::uint64_t(v)));
  d.bvals = {0, 0, 1000, 1000, 1000};
  CHECK_THROWS_AS(estimate_noise(d), std::invalid_argument);
  const auto pcs = highest_shell_tail_pcs(d, NoiseEstParams{.tail_count = 2});
  CHECK(pcs.size() == 2);
}
