#include "bm4dpc/fft.hpp"

#include <unsupported/Eigen/FFT>

namespace bm4dpc {

void fft3(Eigen::ArrayXcd& data, Dims3 dims, bool inverse) {
  if (data.size() != dims.size()) throw std::invalid_argument("fft3: data size does not match dims");
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::Unscaled);
  std::vector<Complex> line;
  std::vector<Complex> out;
  const Index stride[3] = {1, dims.x, dims.x * dims.y};
  for (int axis = 0; axis < 3; ++axis) {
    const Index len = dims[axis];
    if (len == 1) continue;
    line.resize(static_cast<std::size_t>(len));
    out.resize(static_cast<std::size_t>(len));
    const Index s = stride[axis];
    for (Index base = 0; base < dims.size(); ++base) {
      // base must be the first sample of a line along this axis
      if ((base / s) % len != 0) continue;
      for (Index k = 0; k < len; ++k) line[static_cast<std::size_t>(k)] = data[base + k * s];
      if (inverse) {
        fft.inv(out.data(), line.data(), len);
      } else {
        fft.fwd(out.data(), line.data(), len);
      }
      for (Index k = 0; k < len; ++k) data[base + k * s] = out[static_cast<std::size_t>(k)];
    }
  }
  if (inverse) data /= static_cast<double>(dims.size());
}

Eigen::ArrayXcd fft3(const Eigen::ArrayXd& data, Dims3 dims) {
  Eigen::ArrayXcd c = data.cast<Complex>();
  fft3(c, dims, false);
  return c;
}

}  // namespace bm4dpc
