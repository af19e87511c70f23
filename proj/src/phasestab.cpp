#include "bm4dpc/phasestab.hpp"

#include <cmath>

#include "bm4dpc/parallel.hpp"

namespace bm4dpc {
namespace {

std::vector<double> gaussian_taps(double sigma) {
  const Index radius = std::max<Index>(1, static_cast<Index>(std::ceil(4.0 * sigma)));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (Index i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    taps[static_cast<std::size_t>(i + radius)] = w;
    sum += w;
  }
  for (double& t : taps) t /= sum;
  return taps;
}

void smooth_slice(const ComplexVolume& in, ComplexVolume& out, Index k, const std::vector<double>& taps) {
  const Dims3 d = in.dims();
  const Index radius = static_cast<Index>(taps.size() / 2);
  std::vector<Complex> tmp(static_cast<std::size_t>(d.x * d.y));
  for (Index j = 0; j < d.y; ++j)
    for (Index i = 0; i < d.x; ++i) {
      Complex acc(0.0, 0.0);
      for (Index t = -radius; t <= radius; ++t) {
        const Index ii = std::clamp<Index>(i + t, 0, d.x - 1);
        acc += taps[static_cast<std::size_t>(t + radius)] * in(ii, j, k);
      }
      tmp[static_cast<std::size_t>(i + d.x * j)] = acc;
    }
  for (Index j = 0; j < d.y; ++j)
    for (Index i = 0; i < d.x; ++i) {
      Complex acc(0.0, 0.0);
      for (Index t = -radius; t <= radius; ++t) {
        const Index jj = std::clamp<Index>(j + t, 0, d.y - 1);
        acc += taps[static_cast<std::size_t>(t + radius)] * tmp[static_cast<std::size_t>(i + d.x * jj)];
      }
      out(i, j, k) = acc;
    }
}

}  // namespace

ComplexVolume gaussian_smooth_slices(const ComplexVolume& volume, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("lowpass sigma must be positive");
  const auto taps = gaussian_taps(sigma);
  ComplexVolume out(volume.dims());
  parallel_for(volume.dims().z, [&](Index k) { smooth_slice(volume, out, k, taps); });
  return out;
}

RealVolume stabilize_phase(const ComplexVolume& volume, const PhaseFilterParams& params) {
  const ComplexVolume smooth = gaussian_smooth_slices(volume, params.lowpass_sigma);
  RealVolume out(volume.dims());
  for (Index i = 0; i < volume.size(); ++i) {
    const Complex lp = smooth[i];
    // arg(0) is taken as 0, which leaves exact zeros untouched
    const double phase = std::arg(lp);
    out[i] = (volume[i] * std::polar(1.0, -phase)).real();
  }
  return out;
}

RealDataset stabilize_phase(const ComplexDataset& dataset, const PhaseFilterParams& params) {
  if (!(params.lowpass_sigma > 0.0)) throw std::invalid_argument("lowpass sigma must be positive");
  RealDataset out;
  out.bvals = dataset.bvals;
  out.bvecs = dataset.bvecs;
  out.volumes.resize(dataset.volumes.size());
  const auto taps = gaussian_taps(params.lowpass_sigma);
  const Index n = dataset.count();
  const Dims3 d = dataset.dims();
  for (auto& v : out.volumes) v = RealVolume(d);
  // one task per (volume, slice); each writes a disjoint slice of the output
  parallel_for(n * d.z, [&](Index task) {
    const Index v = task / d.z;
    const Index k = task % d.z;
    const auto& in = dataset.volumes[static_cast<std::size_t>(v)];
    ComplexVolume smooth(Dims3{d.x, d.y, 1});
    ComplexVolume slice(Dims3{d.x, d.y, 1});
    for (Index j = 0; j < d.y; ++j)
      for (Index i = 0; i < d.x; ++i) slice(i, j, 0) = in(i, j, k);
    smooth_slice(slice, smooth, 0, taps);
    auto& o = out.volumes[static_cast<std::size_t>(v)];
    for (Index j = 0; j < d.y; ++j)
      for (Index i = 0; i < d.x; ++i) o(i, j, k) = (slice(i, j, 0) * std::polar(1.0, -std::arg(smooth(i, j, 0)))).real();
  });
  return out;
}

}  // namespace bm4dpc
