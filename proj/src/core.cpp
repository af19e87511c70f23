#include "bm4dpc/core.hpp"

#include <cmath>

namespace bm4dpc {

std::string to_string(const Dims3& dims) {
  return std::to_string(dims.x) + "x" + std::to_string(dims.y) + "x" + std::to_string(dims.z);
}

void NoiseMap::validate() const {
  const auto& s = sigma.samples();
  if (!s.allFinite()) throw std::invalid_argument("noise map contains non-finite values");
  if ((s < 0.0).any()) throw std::invalid_argument("noise map contains negative values");
}

void NoisePsd::normalize() {
  const double m = mean();
  if (!(m > 0.0) || !std::isfinite(m)) throw NumericalError("cannot normalize a PSD with zero total power");
  psi.samples() /= m;
  unit_variance = true;
}

void NoisePsd::validate() const {
  const auto& p = psi.samples();
  if (!p.allFinite()) throw std::invalid_argument("PSD contains non-finite values");
  if ((p < 0.0).any()) throw std::invalid_argument("PSD contains negative values");
  if (unit_variance && std::abs(mean() - 1.0) > 1e-6)
    throw std::invalid_argument("PSD flagged unit-variance but its mean is " + std::to_string(mean()));
}

RealVolume real_part(const ComplexVolume& v) { return RealVolume(v.dims(), v.samples().real()); }

RealVolume magnitude(const ComplexVolume& v) { return RealVolume(v.dims(), v.samples().abs()); }

ComplexVolume to_complex(const RealVolume& v) { return ComplexVolume(v.dims(), v.samples().cast<Complex>()); }

namespace {

template <typename F>
RealDataset map_dataset(const ComplexDataset& d, F&& f) {
  RealDataset out;
  out.bvals = d.bvals;
  out.bvecs = d.bvecs;
  out.volumes.reserve(d.volumes.size());
  for (const auto& v : d.volumes) out.volumes.push_back(f(v));
  return out;
}

}  // namespace

RealDataset real_part(const ComplexDataset& d) {
  return map_dataset(d, [](const ComplexVolume& v) { return real_part(v); });
}

RealDataset magnitude(const ComplexDataset& d) {
  return map_dataset(d, [](const ComplexVolume& v) { return magnitude(v); });
}

}  // namespace bm4dpc
