#include <doctest.h>

#include <algorithm>
#include <functional>
#include <map>
#include <random>

#include "bm4dpc/bm4d.hpp"
#include "bm4dpc/gpca.hpp"
#include "bm4dpc/parallel.hpp"
#include "bm4dpc/simulate.hpp"

using namespace bm4dpc;

namespace {

RealVolume random_volume(Dims3 d, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  RealVolume v(d);
  for (Index i = 0; i < d.size(); ++i) v[i] = n(rng);
  return v;
}

StageParams small_params() {
  StageParams p;
  p.block = {4, 4, 4};
  p.max_group = 16;
  p.search_radius = {5, 5, 5};
  return p;
}

// Variances of the group coefficients computed from the explicit linear map T (voxels of the
// footprint -> coefficients) and a spatial covariance R(d): diag(T R T^T).
Eigen::MatrixXd direct_variances(const std::vector<Index3>& pos, Index3 block,
                                 const std::function<double(const Index3&)>& cov) {
  std::map<Index3, Index> index;
  for (const auto& c : pos)
    for (Index k = 0; k < block[2]; ++k)
      for (Index j = 0; j < block[1]; ++j)
        for (Index i = 0; i < block[0]; ++i) index.emplace(Index3{c[0] + i, c[1] + j, c[2] + k}, 0);
  std::vector<Index3> voxels;
  for (auto& [v, idx] : index) {
    idx = static_cast<Index>(voxels.size());
    voxels.push_back(v);
  }
  const Index p = block[0] * block[1] * block[2];
  const Index m = static_cast<Index>(pos.size());
  const Index nv = static_cast<Index>(voxels.size());
  const GroupTransform tr(block);
  Eigen::MatrixXd t(p * m, nv);
  for (Index v = 0; v < nv; ++v) {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, m);
    for (Index b = 0; b < m; ++b) {
      const Index3& c = pos[static_cast<std::size_t>(b)];
      const Index3& x = voxels[static_cast<std::size_t>(v)];
      const Index3 r{x[0] - c[0], x[1] - c[1], x[2] - c[2]};
      if (r[0] < 0 || r[1] < 0 || r[2] < 0 || r[0] >= block[0] || r[1] >= block[1] || r[2] >= block[2]) continue;
      g(r[0] + block[0] * (r[1] + block[1] * r[2]), b) = 1.0;
    }
    tr.forward(g);
    t.col(v) = Eigen::Map<Eigen::VectorXd>(g.data(), p * m);
  }
  Eigen::MatrixXd c(nv, nv);
  for (Index a = 0; a < nv; ++a)
    for (Index b = 0; b < nv; ++b) {
      const Index3& xa = voxels[static_cast<std::size_t>(a)];
      const Index3& xb = voxels[static_cast<std::size_t>(b)];
      c(a, b) = cov(Index3{xa[0] - xb[0], xa[1] - xb[1], xa[2] - xb[2]});
    }
  const Eigen::VectorXd var = (t * c * t.transpose()).diagonal();
  return Eigen::Map<const Eigen::MatrixXd>(var.data(), p, m);
}

double mse(const RealVolume& a, const RealVolume& b) { return (a.samples() - b.samples()).square().mean(); }

}  // namespace

TEST_CASE("profile defaults and reserved names") {
  const Bm4dProfile p = Bm4dProfile::by_name("np");
  CHECK(p.hard_threshold.block == Index3{4, 4, 4});
  CHECK(p.hard_threshold.max_group == 16);
  CHECK(p.hard_threshold.search_radius == Index3{5, 5, 5});
  CHECK(p.hard_threshold.step == 3);
  CHECK(p.hard_threshold.lambda == doctest::Approx(2.7));
  CHECK(p.wiener.block == Index3{4, 4, 4});
  CHECK(p.wiener.max_group == 32);
  CHECK(p.wiener.search_radius == Index3{5, 5, 5});
  CHECK(p.wiener.step == 3);
  CHECK_THROWS_AS(Bm4dProfile::by_name("lc"), std::invalid_argument);
  CHECK_THROWS_AS(Bm4dProfile::by_name("mp"), std::invalid_argument);
  CHECK_THROWS_AS(Bm4dProfile::by_name("xx"), std::invalid_argument);
  Bm4dProfile bad;
  bad.wiener.step = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = {};
  bad.hard_threshold.lambda = -1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("matching on a constant volume follows the tie rule") {
  const Dims3 d{16, 16, 16};
  const RealVolume v(d, 3.0);
  const StageParams p = small_params();
  const Index3 ref{5, 6, 7};
  const auto got = match_blocks(v, ref, p);
  REQUIRE(got.size() == 16);
  CHECK(got.front() == ref);
  std::vector<Index3> expect;
  for (Index x = 0; x <= 10; ++x)
    for (Index y = 1; y <= 11; ++y)
      for (Index z = 2; z <= 12; ++z)
        if (Index3{x, y, z} != ref) expect.push_back({x, y, z});
  std::sort(expect.begin(), expect.end());
  for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i] == expect[i - 1]);
}

TEST_CASE("matching finds a planted duplicate and agrees with brute force") {
  const Dims3 d{8, 8, 8};
  RealVolume v = random_volume(d, 11);
  for (Index k = 0; k < 4; ++k)
    for (Index j = 0; j < 4; ++j)
      for (Index i = 0; i < 4; ++i) v(4 + i, 4 + j, 4 + k) = v(i, j, k);
  const StageParams p = small_params();
  const auto got = match_blocks(v, {0, 0, 0}, p);
  REQUIRE(got.size() == 16);
  CHECK(got[0] == Index3{0, 0, 0});
  CHECK(got[1] == Index3{4, 4, 4});

  // brute force: every corner of the 8^3 volume is within the radius
  std::vector<std::pair<double, Index3>> all;
  for (Index x = 0; x <= 4; ++x)
    for (Index y = 0; y <= 4; ++y)
      for (Index z = 0; z <= 4; ++z) {
        if (x == 0 && y == 0 && z == 0) continue;
        double s = 0.0;
        for (Index k = 0; k < 4; ++k)
          for (Index j = 0; j < 4; ++j)
            for (Index i = 0; i < 4; ++i) {
              const double e = v(i, j, k) - v(x + i, y + j, z + k);
              s += e * e;
            }
        all.push_back({s / 64.0, Index3{x, y, z}});
      }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i] == all[i - 1].second);
}

TEST_CASE("group size is a power of two") {
  const RealVolume v = random_volume({6, 6, 5}, 3);
  StageParams p = small_params();
  p.search_radius = {1, 1, 0};
  // 2 x 2 x 1 = 4 candidates including the reference
  CHECK(match_blocks(v, {0, 0, 0}, p).size() == 4);
  p.search_radius = {1, 2, 0};
  CHECK(match_blocks(v, {1, 1, 1}, p).size() == 8);  // 3 x 3 = 9 -> 8
  p.max_group = 1;
  CHECK(match_blocks(v, {1, 1, 1}, p).size() == 1);
  CHECK_THROWS_AS(match_blocks(v, {3, 0, 0}, small_params()), std::invalid_argument);
}

TEST_CASE("group transform") {
  const GroupTransform tr({4, 4, 4});
  for (int a = 0; a < 3; ++a) CHECK((tr.dct(a) * tr.dct(a).transpose() - Eigen::MatrixXd::Identity(4, 4)).norm() < 1e-12);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  Eigen::MatrixXd g(64, 8);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = n(rng);
  Eigen::MatrixXd c = g;
  tr.forward(c);
  CHECK(std::abs(c.squaredNorm() - g.squaredNorm()) < 1e-10 * g.squaredNorm());
  CHECK(c(0, 0) == doctest::Approx(g.sum() / std::sqrt(64.0 * 8.0)));
  tr.inverse(c);
  CHECK((c - g).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(64, 1);
  tr.forward(zero);
  CHECK(zero.cwiseAbs().maxCoeff() == 0.0);

  Eigen::MatrixXd odd(64, 3);
  CHECK_THROWS_AS(tr.forward(odd), std::invalid_argument);
}

TEST_CASE("variances under white noise") {
  const Dims3 d{32, 32, 16};
  const NoisePsd flat = NoisePsd::flat(d);
  const Index3 block{4, 4, 4};

  // non-overlapping blocks: every coefficient has unit variance
  const std::vector<Index3> apart{{0, 0, 0}, {4, 0, 0}, {0, 8, 4}, {12, 12, 8}};
  const Eigen::MatrixXd v = coeff_variances(flat, apart, block);
  CHECK((v.array() - 1.0).abs().maxCoeff() < 1e-10);

  // overlapping blocks: compare against the explicit linear map
  const std::vector<Index3> near{{4, 4, 2}, {5, 4, 2}, {4, 6, 3}, {7, 7, 2}};
  const Eigen::MatrixXd got = coeff_variances(flat, near, block);
  const Eigen::MatrixXd want =
      direct_variances(near, block, [](const Index3& r) { return r == Index3{0, 0, 0} ? 1.0 : 0.0; });
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((got.array() - 1.0).abs().maxCoeff() > 0.1);

  // linear in psi
  NoisePsd scaled(RealVolume(d, 2.5));
  CHECK((coeff_variances(scaled, near, block) - 2.5 * got).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("variances under colored noise match the explicit covariance") {
  const Dims3 d{32, 32, 8};
  const SpatialKernel k = make_colored_kernel();
  const NoisePsd psd = kernel_to_psd(k, d);

  // circular autocorrelation of the kernel embedded in the grid
  RealVolume h(d);
  for (Index kk = 0; kk < k.g.dims().z; ++kk)
    for (Index j = 0; j < k.g.dims().y; ++j)
      for (Index i = 0; i < k.g.dims().x; ++i) {
        const Index x = ((i - k.center[0]) % d.x + d.x) % d.x;
        const Index y = ((j - k.center[1]) % d.y + d.y) % d.y;
        const Index z = ((kk - k.center[2]) % d.z + d.z) % d.z;
        h(x, y, z) += k.g(i, j, kk);
      }
  std::map<Index3, double> cache;
  auto cov = [&](const Index3& r) {
    auto it = cache.find(r);
    if (it != cache.end()) return it->second;
    double s = 0.0;
    for (Index z = 0; z < d.z; ++z)
      for (Index y = 0; y < d.y; ++y)
        for (Index x = 0; x < d.x; ++x)
          s += h(x, y, z) * h(((x + r[0]) % d.x + d.x) % d.x, ((y + r[1]) % d.y + d.y) % d.y,
                              ((z + r[2]) % d.z + d.z) % d.z);
    cache.emplace(r, s);
    return s;
  };

  const Index3 block{4, 4, 4};
  const std::vector<Index3> pos{{4, 4, 2}, {5, 4, 2}, {9, 6, 1}, {12, 3, 4}};
  const Eigen::MatrixXd got = coeff_variances(psd, pos, block);
  const Eigen::MatrixXd want = direct_variances(pos, block, cov);
  CHECK((got - want).cwiseAbs().maxCoeff() < 1e-9 * want.maxCoeff());

  const VarianceModel model(psd, block, {10, 10, 10});
  CHECK((model.variances(pos) - want).cwiseAbs().maxCoeff() < 1e-9 * want.maxCoeff());
}

TEST_CASE("hard threshold") {
  Eigen::MatrixXd c(2, 1);
  c << 3.0, 1.0;
  const Eigen::MatrixXd var = Eigen::MatrixXd::Ones(2, 1);
  Eigen::MatrixXd t = c;
  const ThresholdResult r = hard_threshold(t, var, 2.7);
  CHECK(t(0, 0) == 3.0);
  CHECK(t(1, 0) == 0.0);
  CHECK(r.retained == 1);
  CHECK(r.retained_variance == doctest::Approx(1.0));

  // the DC survives even below the threshold
  Eigen::MatrixXd dc(2, 1);
  dc << 0.5, 5.0;
  hard_threshold(dc, var, 2.7);
  CHECK(dc(0, 0) == 0.5);
  CHECK(dc(1, 0) == 5.0);

  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 3.0);
  Eigen::MatrixXd g(64, 4), v(64, 4);
  for (Index i = 0; i < g.size(); ++i) {
    g.data()[i] = n(rng);
    v.data()[i] = 0.5 + 0.01 * static_cast<double>(i);
  }
  Eigen::MatrixXd keep = g;
  hard_threshold(keep, v, 0.0);
  CHECK(keep == g);
  Eigen::MatrixXd once = g;
  hard_threshold(once, v, 2.7);
  Eigen::MatrixXd twice = once;
  hard_threshold(twice, v, 2.7);
  CHECK(twice == once);
}

TEST_CASE("wiener shrinkage") {
  Eigen::MatrixXd noisy(3, 1), pilot(3, 1), var(3, 1);
  noisy << 2.0, 2.0, 2.0;
  pilot << 0.0, 3.0, 1.0;
  var << 1.0, 0.0, 1.0;
  const double w = wiener_shrink(noisy, pilot, var);
  CHECK(noisy(0, 0) == 0.0);
  CHECK(noisy(1, 0) == 2.0);
  CHECK(noisy(2, 0) == doctest::Approx(1.0));
  CHECK(w == doctest::Approx(1.0 / 0.25));
  Eigen::MatrixXd bad(2, 1);
  CHECK_THROWS_AS(wiener_shrink(bad, pilot, var), std::invalid_argument);
}

TEST_CASE("aggregation") {
  const Dims3 d{4, 4, 4};
  const RealVolume v = random_volume(d, 21);
  const std::vector<Index3> one{{0, 0, 0}};
  Aggregator a(d);
  a.add(extract_group(v, one, {4, 4, 4}), one, {4, 4, 4}, 3.0);
  CHECK(a.result(RealVolume(d)).samples().isApprox(v.samples()));

  // overlapping blocks with equal content average to that content; uncovered voxels fall back
  const Dims3 e{6, 4, 4};
  const RealVolume c(e, 2.0);
  const std::vector<Index3> two{{0, 0, 0}, {1, 0, 0}};
  Aggregator b(e);
  b.add(extract_group(c, two, {4, 4, 4}), two, {4, 4, 4}, 0.7);
  b.add(extract_group(c, one, {4, 4, 4}), one, {4, 4, 4}, 5.0);
  const RealVolume r = b.result(RealVolume(e, -1.0));
  CHECK(r(0, 1, 2) == doctest::Approx(2.0));
  CHECK(r(4, 3, 3) == doctest::Approx(2.0));
  CHECK(r(5, 0, 0) == -1.0);
}

TEST_CASE("reference corners") {
  CHECK(reference_corners(10, 4, 3) == std::vector<Index>{0, 3, 6});
  CHECK(reference_corners(11, 4, 3) == std::vector<Index>{0, 3, 6, 7});
  CHECK(reference_corners(4, 4, 3) == std::vector<Index>{0});
  CHECK_THROWS_AS(reference_corners(3, 4, 3), std::invalid_argument);
}

TEST_CASE("zero threshold reproduces the input") {
  const Dims3 d{16, 16, 16};
  const std::vector<RealVolume> ch{random_volume(d, 1), random_volume(d, 2)};
  Bm4dProfile p;
  p.hard_threshold.lambda = 0.0;
  const auto out = bm4d_stage(ch, NoisePsd::flat(d), p, Stage::HardThreshold);
  REQUIRE(out.size() == 2);
  for (std::size_t c = 0; c < 2; ++c) CHECK((out[c].samples() - ch[c].samples()).abs().maxCoeff() < 1e-10);
}

TEST_CASE("denoising phantom principal components") {
  PhantomSpec spec;
  spec.shells = {{0.0, 2}, {1000.0, 6}};
  const Phantom ph = make_phantom(spec);
  const Dims3 d = spec.dims;
  const double sigma = 0.05 * ph.magnitude.volumes.front().samples().maxCoeff();

  const Eigen::MatrixXd clean = vectorize(ph.magnitude.volumes) / sigma;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> n;
  Eigen::MatrixXd noisy = clean;
  for (Index i = 0; i < noisy.size(); ++i) noisy.data()[i] += n(rng);
  const auto pca = forward_pca(noisy);
  const auto noisy_pcs = pca.pcs(d);
  const auto clean_pcs = devectorize(Eigen::MatrixXd(clean * pca.basis), d);

  const Bm4dProfile p;
  const NoisePsd flat = NoisePsd::flat(d);
  const auto basic = bm4d_stage(noisy_pcs, flat, p, Stage::HardThreshold);
  for (std::size_t c = 0; c < basic.size(); ++c) {
    CAPTURE(c);
    CHECK(mse(basic[c], clean_pcs[c]) < mse(noisy_pcs[c], clean_pcs[c]));
  }
  const auto final = bm4d_stage(noisy_pcs, flat, p, Stage::Wiener, &basic);
  double sum_basic = 0.0, sum_final = 0.0;
  for (std::size_t c = 0; c < basic.size(); ++c) {
    sum_basic += mse(basic[c], clean_pcs[c]);
    sum_final += mse(final[c], clean_pcs[c]);
  }
  CHECK(sum_final < sum_basic);
  for (std::size_t c = 1; c < 3; ++c) CHECK(mse(final[c], clean_pcs[c]) < mse(basic[c], clean_pcs[c]));
  // channel 0 of this piecewise-constant phantom is already near-ideal after hard
  // thresholding; with an exact pilot the Wiener stage still wins there
  const auto oracle = bm4d_stage(noisy_pcs, flat, p, Stage::Wiener, &clean_pcs);
  CHECK(mse(oracle[0], clean_pcs[0]) < mse(basic[0], clean_pcs[0]));

  std::vector<RealVolume> bad = noisy_pcs;
  CHECK_THROWS_AS(bm4d_stage(bad, NoisePsd::flat({8, 8, 8}), p, Stage::HardThreshold), std::invalid_argument);
  CHECK_THROWS_AS(bm4d_stage(bad, flat, p, Stage::Wiener), std::invalid_argument);
}

TEST_CASE("output does not depend on the thread count") {
  const Dims3 d{20, 18, 12};
  const std::vector<RealVolume> ch{random_volume(d, 4), random_volume(d, 5), random_volume(d, 6)};
  const NoisePsd psd = kernel_to_psd(make_colored_kernel(), d);
  const int saved = thread_count();
  set_thread_count(1);
  const auto a = bm4d_multichannel(ch, psd);
  set_thread_count(4);
  const auto b = bm4d_multichannel(ch, psd);
  set_thread_count(saved);
  for (std::size_t c = 0; c < a.size(); ++c) CHECK((a[c].samples() == b[c].samples()).all());
}
