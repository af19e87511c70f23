#pragma once

#include "bm4dpc/core.hpp"

namespace bm4dpc {

/// In-place separable DFT over a first-axis-fastest grid. The forward transform is
/// unnormalized; the inverse carries the 1/|X| factor.
void fft3(Eigen::ArrayXcd& data, Dims3 dims, bool inverse = false);

/// Forward DFT of a real grid.
Eigen::ArrayXcd fft3(const Eigen::ArrayXd& data, Dims3 dims);

/// Signed frequency index of bin k on an axis of length n, in [-n/2, n/2).
inline Index signed_bin(Index k, Index n) { return k < (n + 1) / 2 ? k : k - n; }

}  // namespace bm4dpc
