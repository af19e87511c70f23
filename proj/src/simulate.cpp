#include "bm4dpc/simulate.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "bm4dpc/dataio.hpp"
#include "bm4dpc/fft.hpp"
#include "bm4dpc/parallel.hpp"

namespace bm4dpc {
namespace {

Eigen::Matrix3d stick_tensor(const Eigen::Vector3d& axis, double l1, double l2, double l3) {
  const Eigen::Vector3d e1 = axis.normalized();
  Eigen::Vector3d helper = std::abs(e1.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
  const Eigen::Vector3d e2 = e1.cross(helper).normalized();
  const Eigen::Vector3d e3 = e1.cross(e2);
  return l1 * e1 * e1.transpose() + l2 * e2 * e2.transpose() + l3 * e3 * e3.transpose();
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace

std::vector<Tissue> PhantomSpec::default_tissues() {
  const double iso_gm = 0.8e-3, iso_csf = 3.0e-3;
  return {
      {{0.5, 0.5, 0.5}, {0.45, 0.46, 0.75}, iso_gm * Eigen::Matrix3d::Identity(), 0.8},
      {{0.32, 0.52, 0.5}, {0.09, 0.30, 0.6}, stick_tensor({0, 1, 0}, 1.7e-3, 0.35e-3, 0.35e-3), 0.65},
      {{0.68, 0.52, 0.5}, {0.09, 0.30, 0.6}, stick_tensor({1, 1, 1}, 1.6e-3, 0.4e-3, 0.3e-3), 0.65},
      {{0.5, 0.24, 0.5}, {0.30, 0.07, 0.6}, stick_tensor({1, 0, 0}, 1.7e-3, 0.35e-3, 0.35e-3), 0.7},
      {{0.5, 0.56, 0.5}, {0.07, 0.16, 0.6}, iso_csf * Eigen::Matrix3d::Identity(), 1.0},
  };
}

void PhantomSpec::validate() const {
  if (!dims.valid()) throw std::invalid_argument("phantom dims must be positive");
  bool has_b0 = false;
  for (const auto& s : shells) {
    if (s.count < 1 || s.bval < 0.0) throw std::invalid_argument("invalid shell specification");
    if (s.bval == 0.0) has_b0 = true;
  }
  if (!has_b0) throw std::invalid_argument("phantom needs at least one b=0 volume");
  for (const auto& t : tissues) {
    if (!(t.s0 > 0.0)) throw std::invalid_argument("tissue S0 must be positive");
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(t.tensor);
    if ((t.tensor - t.tensor.transpose()).cwiseAbs().maxCoeff() > 1e-15 || eig.eigenvalues().minCoeff() <= 0.0)
      throw std::invalid_argument("tissue tensor is not symmetric positive definite");
  }
}

std::vector<Eigen::Vector3d> shell_directions(Index count, std::uint64_t seed) {
  std::vector<Eigen::Vector3d> dirs;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (Index i = 0; i < count; ++i) {
    const double z = (static_cast<double>(i) + 0.5) / static_cast<double>(count);
    const double r = std::sqrt(1.0 - z * z);
    const double phi = golden * static_cast<double>(i);
    dirs.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  auto rng = stream(seed, 0xd1ec7);
  std::normal_distribution<double> normal;
  Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
  q.normalize();
  for (auto& d : dirs) d = (q * d).normalized();
  return dirs;
}

Phantom make_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Dims3 d = spec.dims;

  Phantom ph;
  ph.s0 = RealVolume(d, 0.0);
  ph.mask = RealVolume(d, 0.0);
  ph.tensors.assign(static_cast<std::size_t>(d.size()), Eigen::Matrix3d::Zero());
  const Eigen::Vector3d extent(static_cast<double>(d.x), static_cast<double>(d.y), static_cast<double>(d.z));
  for (Index k = 0; k < d.z; ++k)
    for (Index j = 0; j < d.y; ++j)
      for (Index i = 0; i < d.x; ++i) {
        const Eigen::Vector3d p(static_cast<double>(i) + 0.5, static_cast<double>(j) + 0.5, static_cast<double>(k) + 0.5);
        for (const auto& t : spec.tissues) {
          const Eigen::Vector3d rel = (p - t.center.cwiseProduct(extent)).cwiseQuotient(t.semi_axes.cwiseProduct(extent));
          if (rel.squaredNorm() <= 1.0) {
            const Index idx = d.linear(i, j, k);
            ph.s0[idx] = t.s0;
            ph.mask[idx] = 1.0;
            ph.tensors[static_cast<std::size_t>(idx)] = t.tensor;
          }
        }
      }

  std::vector<double> bvals;
  std::vector<Eigen::Vector3d> bvecs;
  for (std::size_t s = 0; s < spec.shells.size(); ++s) {
    const auto& sh = spec.shells[s];
    if (sh.bval == 0.0) {
      for (Index n = 0; n < sh.count; ++n) {
        bvals.push_back(0.0);
        bvecs.push_back(Eigen::Vector3d::Zero());
      }
    } else {
      const auto dirs = shell_directions(sh.count, spec.seed + 101 * (s + 1));
      for (const auto& g : dirs) {
        bvals.push_back(sh.bval);
        bvecs.push_back(g);
      }
    }
  }

  const Index n = static_cast<Index>(bvals.size());
  ph.signal.bvals = bvals;
  ph.signal.bvecs = bvecs;
  ph.signal.volumes.assign(static_cast<std::size_t>(n), ComplexVolume(d));
  ph.magnitude.bvals = bvals;
  ph.magnitude.bvecs = bvecs;
  ph.magnitude.volumes.assign(static_cast<std::size_t>(n), RealVolume(d));

  parallel_for(n, [&](Index v) {
    const auto u = static_cast<std::size_t>(v);
    const double b = bvals[u];
    const Eigen::Vector3d& g = bvecs[u];
    auto rng = stream(spec.seed, static_cast<std::uint64_t>(v) + 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double global_phase = 2.0 * std::numbers::pi * unit(rng);
    auto& mag = ph.magnitude.volumes[u];
    auto& sig = ph.signal.volumes[u];
    for (Index k = 0; k < d.z; ++k) {
      // three low-frequency in-plane sinusoids per slice
      std::array<double, 3> amp{}, fx{}, fy{}, off{};
      for (int c = 0; c < 3; ++c) {
        amp[static_cast<std::size_t>(c)] = 0.3 + 0.7 * unit(rng);
        fx[static_cast<std::size_t>(c)] = 3.0 * unit(rng) - 1.5;
        fy[static_cast<std::size_t>(c)] = 3.0 * unit(rng) - 1.5;
        off[static_cast<std::size_t>(c)] = 2.0 * std::numbers::pi * unit(rng);
      }
      for (Index j = 0; j < d.y; ++j)
        for (Index i = 0; i < d.x; ++i) {
          const Index idx = d.linear(i, j, k);
          const double s0 = ph.s0[idx];
          const double s = s0 > 0.0 ? s0 * std::exp(-b * g.dot(ph.tensors[static_cast<std::size_t>(idx)] * g)) : 0.0;
          double phase = global_phase;
          for (std::size_t c = 0; c < 3; ++c)
            phase += amp[c] * std::sin(2.0 * std::numbers::pi *
                                           (fx[c] * static_cast<double>(i) / static_cast<double>(d.x) +
                                            fy[c] * static_cast<double>(j) / static_cast<double>(d.y)) +
                                       off[c]);
          mag[idx] = s;
          sig[idx] = std::polar(s, phase);
        }
    }
  });
  return ph;
}

SpatialKernel make_colored_kernel(double sigma_inner, double sigma_outer) {
  if (!(sigma_inner > 0.0) || !(sigma_outer > sigma_inner))
    throw std::invalid_argument("colored kernel needs 0 < sigma_inner < sigma_outer");
  const Index r = static_cast<Index>(std::ceil(4.0 * sigma_outer));
  const Index e = 2 * r + 1;
  auto gaussian = [&](double s) {
    Eigen::ArrayXd g(e * e);
    for (Index j = 0; j < e; ++j)
      for (Index i = 0; i < e; ++i) {
        const double x = static_cast<double>(i - r), y = static_cast<double>(j - r);
        g[i + e * j] = std::exp(-(x * x + y * y) / (2.0 * s * s));
      }
    return Eigen::ArrayXd(g / g.sum());
  };
  Eigen::ArrayXd g = gaussian(sigma_inner) - gaussian(sigma_outer);
  g /= g.matrix().norm();
  return SpatialKernel{RealVolume(Dims3{e, e, 1}, g), Index3{r, r, 0}};
}

namespace {

Eigen::ArrayXcd kernel_spectrum(const SpatialKernel& kernel, Dims3 dims) {
  const Dims3 kd = kernel.g.dims();
  if (kd.x > dims.x || kd.y > dims.y || kd.z > dims.z)
    throw std::invalid_argument("kernel " + to_string(kd) + " does not fit grid " + to_string(dims));
  Eigen::ArrayXcd pad = Eigen::ArrayXcd::Zero(dims.size());
  for (Index k = 0; k < kd.z; ++k)
    for (Index j = 0; j < kd.y; ++j)
      for (Index i = 0; i < kd.x; ++i) {
        const Index x = ((i - kernel.center[0]) % dims.x + dims.x) % dims.x;
        const Index y = ((j - kernel.center[1]) % dims.y + dims.y) % dims.y;
        const Index z = ((k - kernel.center[2]) % dims.z + dims.z) % dims.z;
        pad[dims.linear(x, y, z)] += kernel.g(i, j, k);
      }
  fft3(pad, dims, false);
  return pad;
}

}  // namespace

NoisePsd kernel_to_psd(const SpatialKernel& kernel, Dims3 dims) {
  RealVolume psi(dims, kernel_spectrum(kernel, dims).abs2());
  NoisePsd psd(std::move(psi), false);
  if (std::abs(psd.mean() - 1.0) <= 1e-6) psd.unit_variance = true;
  return psd;
}

ComplexVolume circular_convolve(const ComplexVolume& field, const SpatialKernel& kernel) {
  const Dims3 d = field.dims();
  Eigen::ArrayXcd f = field.samples();
  fft3(f, d, false);
  f *= kernel_spectrum(kernel, d);
  fft3(f, d, true);
  return ComplexVolume(d, f);
}

RealVolume gfactor_map(Dims3 dims, double amplitude, double width) {
  RealVolume g(dims);
  for (Index k = 0; k < dims.z; ++k)
    for (Index j = 0; j < dims.y; ++j)
      for (Index i = 0; i < dims.x; ++i) {
        double r2 = 0.0;
        const std::array<double, 3> p{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
        for (int a = 0; a < 3; ++a) {
          const double c = 0.5 * static_cast<double>(dims[a] - 1);
          const double s = width * static_cast<double>(dims[a]);
          const double t = (p[static_cast<std::size_t>(a)] - c) / s;
          r2 += t * t;
        }
        g(i, j, k) = 1.0 + amplitude * std::exp(-0.5 * r2);
      }
  return g;
}

NoisyData add_noise(const ComplexDataset& clean, const NoiseSpec& spec) {
  if (!(spec.level >= 0.0)) throw std::invalid_argument("noise level must be nonnegative");
  const Dims3 d = clean.dims();
  std::optional<SpatialKernel> kernel;
  if (spec.kind == NoiseKind::Colored) {
    kernel = spec.kernel ? *spec.kernel : make_colored_kernel();
    if (std::abs(kernel->norm() - 1.0) > 1e-9) throw std::invalid_argument("colored noise kernel must have unit l2 norm");
  }

  double peak = 0.0;
  bool any_b0 = false;
  for (std::size_t v = 0; v < clean.volumes.size(); ++v)
    if (clean.bvals.at(v) <= kDefaultShellTolerance) {
      any_b0 = true;
      peak = std::max(peak, clean.volumes[v].samples().abs().maxCoeff());
    }
  if (!any_b0)
    for (const auto& v : clean.volumes) peak = std::max(peak, v.samples().abs().maxCoeff());
  const double sigma0 = spec.level * peak;

  NoisyData out;
  RealVolume sigma = gfactor_map(d, spec.gfactor_amplitude, spec.gfactor_width);
  sigma.samples() *= sigma0;
  out.sigma = NoiseMap(sigma);
  out.psd = kernel ? kernel_to_psd(*kernel, d) : NoisePsd::flat(d);

  if (spec.level == 0.0) {
    out.noisy = clean;
    return out;
  }
  out.noisy.bvals = clean.bvals;
  out.noisy.bvecs = clean.bvecs;
  out.noisy.volumes.assign(clean.volumes.size(), ComplexVolume(d));
  parallel_for(clean.count(), [&](Index v) {
    const auto u = static_cast<std::size_t>(v);
    auto rng = stream(spec.seed, static_cast<std::uint64_t>(v));
    std::normal_distribution<double> normal(0.0, 1.0);
    ComplexVolume eta(d);
    for (Index i = 0; i < d.size(); ++i) {
      const double re = normal(rng);
      const double im = normal(rng);
      eta[i] = Complex(re, im);
    }
    if (kernel) eta = circular_convolve(eta, *kernel);
    out.noisy.volumes[u] = ComplexVolume(d, clean.volumes[u].samples() + eta.samples() * sigma.samples().cast<Complex>());
  });
  return out;
}

}  // namespace bm4dpc
