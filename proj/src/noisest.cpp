#include "bm4dpc/noisest.hpp"

#include <algorithm>
#include <cmath>

#include "bm4dpc/fft.hpp"
#include "bm4dpc/gpca.hpp"
#include "bm4dpc/parallel.hpp"

namespace bm4dpc {

void NoiseEstParams::validate() const {
  if (tail_count < 1 || map_window < 1 || psd_window < 1 || chunk_size < 1 || chunk_step < 1 || window_step < 1)
    throw std::invalid_argument("noise estimation parameters must be positive");
  if (map_window % 2 == 0) throw std::invalid_argument("noise map window must be odd");
}

NoiseMap estimate_noise_map(const std::vector<RealVolume>& tail_pcs, Index window) {
  if (tail_pcs.empty()) throw std::invalid_argument("estimate_noise_map: no components");
  if (window < 1 || window % 2 == 0) throw std::invalid_argument("estimate_noise_map: window must be odd");
  const Dims3 d = tail_pcs.front().dims();
  for (const auto& pc : tail_pcs)
    if (pc.dims() != d) throw std::invalid_argument("estimate_noise_map: components differ in dims");
  if (window > d.x || window > d.y || window > d.z)
    throw std::invalid_argument("estimate_noise_map: window " + std::to_string(window) + " exceeds volume " +
                                to_string(d));
  const Index r = window / 2;
  RealVolume sigma(d, 0.0);
  const double inv_count = 1.0 / static_cast<double>(tail_pcs.size());
  parallel_for(d.z, [&](Index k) {
    const Index k0 = std::max<Index>(0, k - r), k1 = std::min(d.z - 1, k + r);
    for (Index j = 0; j < d.y; ++j) {
      const Index j0 = std::max<Index>(0, j - r), j1 = std::min(d.y - 1, j + r);
      for (Index i = 0; i < d.x; ++i) {
        const Index i0 = std::max<Index>(0, i - r), i1 = std::min(d.x - 1, i + r);
        const double n = static_cast<double>((k1 - k0 + 1) * (j1 - j0 + 1) * (i1 - i0 + 1));
        double acc = 0.0;
        for (const auto& pc : tail_pcs) {
          double mean = 0.0;
          for (Index kk = k0; kk <= k1; ++kk)
            for (Index jj = j0; jj <= j1; ++jj)
              for (Index ii = i0; ii <= i1; ++ii) mean += pc(ii, jj, kk);
          mean /= n;
          double ss = 0.0;
          for (Index kk = k0; kk <= k1; ++kk)
            for (Index jj = j0; jj <= j1; ++jj)
              for (Index ii = i0; ii <= i1; ++ii) {
                const double e = pc(ii, jj, kk) - mean;
                ss += e * e;
              }
          acc += n > 1.0 ? std::sqrt(ss / (n - 1.0)) : 0.0;
        }
        sigma(i, j, k) = acc * inv_count;
      }
    }
  });
  return NoiseMap(std::move(sigma));
}

namespace {

std::vector<Index> window_starts(Index extent, Index window, Index step) {
  std::vector<Index> s;
  for (Index p = 0; p + window <= extent; p += step) s.push_back(p);
  if (!s.empty() && s.back() != extent - window) s.push_back(extent - window);
  return s;
}

// Mean periodogram of all in-plane windows in slices [z0, z0 + count).
Eigen::ArrayXd chunk_periodogram(const RealVolume& pc, Index z0, Index count, const NoiseEstParams& p) {
  const Dims3 d = pc.dims();
  const Index w = p.psd_window;
  const Dims3 wd{w, w, 1};
  const auto xs = window_starts(d.x, w, p.window_step);
  const auto ys = window_starts(d.y, w, p.window_step);
  Eigen::ArrayXd acc = Eigen::ArrayXd::Zero(w * w);
  Eigen::ArrayXcd buf(w * w);
  Index windows = 0;
  for (Index k = z0; k < z0 + count; ++k)
    for (Index y0 : ys)
      for (Index x0 : xs) {
        double mean = 0.0;
        for (Index j = 0; j < w; ++j)
          for (Index i = 0; i < w; ++i) mean += pc(x0 + i, y0 + j, k);
        mean /= static_cast<double>(w * w);
        for (Index j = 0; j < w; ++j)
          for (Index i = 0; i < w; ++i) buf[i + w * j] = Complex(pc(x0 + i, y0 + j, k) - mean, 0.0);
        fft3(buf, wd, false);
        acc += buf.abs2() / static_cast<double>(w * w);
        ++windows;
      }
  return acc / static_cast<double>(windows);
}

// Autocorrelation-domain zero padding of a w x w PSD onto an m x n grid.
Eigen::ArrayXd upsample_psd(const Eigen::ArrayXd& local, Index w, Index m, Index n) {
  Eigen::ArrayXcd r = local.cast<Complex>();
  fft3(r, Dims3{w, w, 1}, true);
  Eigen::ArrayXcd big = Eigen::ArrayXcd::Zero(m * n);
  for (Index j = 0; j < w; ++j)
    for (Index i = 0; i < w; ++i) {
      const Index di = signed_bin(i, w), dj = signed_bin(j, w);
      const Index ti = ((di % m) + m) % m, tj = ((dj % n) + n) % n;
      big[ti + m * tj] += Complex(r[i + w * j].real(), 0.0);
    }
  fft3(big, Dims3{m, n, 1}, false);
  return big.real().max(0.0);
}

}  // namespace

NoisePsd estimate_psd(const std::vector<RealVolume>& pcs, const NoiseEstParams& params) {
  params.validate();
  if (pcs.empty()) throw std::invalid_argument("estimate_psd: no components");
  const Dims3 d = pcs.front().dims();
  for (const auto& pc : pcs)
    if (pc.dims() != d) throw std::invalid_argument("estimate_psd: components differ in dims");
  if (params.psd_window > d.x || params.psd_window > d.y)
    throw std::invalid_argument("estimate_psd: window " + std::to_string(params.psd_window) +
                                " exceeds slice dims " + std::to_string(d.x) + "x" + std::to_string(d.y));
  if (params.chunk_size > d.z)
    throw std::invalid_argument("estimate_psd: fewer slices (" + std::to_string(d.z) + ") than chunk size " +
                                std::to_string(params.chunk_size));

  std::vector<Index> chunks;
  for (Index z = 0; z + params.chunk_size <= d.z; z += params.chunk_step) chunks.push_back(z);
  const Index nchunks = static_cast<Index>(chunks.size());
  const Index npc = static_cast<Index>(pcs.size());

  std::vector<Eigen::ArrayXd> chunk_psd(static_cast<std::size_t>(npc * nchunks));
  parallel_for(npc * nchunks, [&](Index t) {
    const Index pc = t / nchunks, c = t % nchunks;
    chunk_psd[static_cast<std::size_t>(t)] =
        chunk_periodogram(pcs[static_cast<std::size_t>(pc)], chunks[static_cast<std::size_t>(c)], params.chunk_size,
                          params);
  });

  const Index slice = d.x * d.y;
  Eigen::ArrayXd total = Eigen::ArrayXd::Zero(d.size());
  for (Index pc = 0; pc < npc; ++pc) {
    Eigen::ArrayXd local = chunk_psd[static_cast<std::size_t>(pc * nchunks)];
    for (Index c = 1; c < nchunks; ++c) local = local.min(chunk_psd[static_cast<std::size_t>(pc * nchunks + c)]);
    const Eigen::ArrayXd plane = upsample_psd(local, params.psd_window, d.x, d.y);
    Eigen::ArrayXd full(d.size());
    for (Index k = 0; k < d.z; ++k) full.segment(k * slice, slice) = plane;
    const double m = full.mean();
    if (!(m > 0.0)) throw NumericalError("estimate_psd: component has zero estimated noise power");
    total += full / m;
  }
  NoisePsd psd(RealVolume(d, total / static_cast<double>(npc)), false);
  psd.normalize();
  return psd;
}

NoiseMap clamp_noise_map(const NoiseMap& map, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("clamp fraction must lie in (0, 1)");
  std::vector<double> positive;
  for (Index i = 0; i < map.sigma.size(); ++i)
    if (map.sigma[i] > 0.0) positive.push_back(map.sigma[i]);
  if (positive.empty()) throw NumericalError("noise map has no positive values");
  auto mid = positive.begin() + static_cast<std::ptrdiff_t>(positive.size() / 2);
  std::nth_element(positive.begin(), mid, positive.end());
  double median = *mid;
  if (positive.size() % 2 == 0) {
    const double below = *std::max_element(positive.begin(), mid);
    median = 0.5 * (median + below);
  }
  const double floor = fraction * median;
  return NoiseMap(RealVolume(map.dims(), map.sigma.samples().max(floor)));
}

RealVolume normalize_by(const RealVolume& v, const NoiseMap& clamped) {
  if (v.dims() != clamped.dims()) throw std::invalid_argument("noise map dims do not match the data");
  return RealVolume(v.dims(), v.samples() / clamped.sigma.samples());
}

std::vector<RealVolume> highest_shell_tail_pcs(const RealDataset& dataset, const NoiseEstParams& params) {
  params.validate();
  const ShellTable shells = group_shells(dataset.bvals, params.shell_tolerance);
  const Shell& top = shells.highest();
  const Index members = static_cast<Index>(top.members.size());
  if (members <= params.tail_count)
    throw std::invalid_argument("highest shell (b=" + std::to_string(top.center) + ") has " + std::to_string(members) +
                                " volumes; noise estimation needs more than " + std::to_string(params.tail_count));
  std::vector<RealVolume> vols;
  for (Index i : top.members) vols.push_back(dataset.volumes.at(static_cast<std::size_t>(i)));
  const auto stack = forward_pca(vectorize(vols));
  const auto pcs = stack.pcs(dataset.dims());
  return {pcs.end() - params.tail_count, pcs.end()};
}

NoiseEstimate estimate_noise(const RealDataset& dataset, const NoiseEstParams& params,
                             const std::optional<NoiseMap>& known_map, double clamp_fraction) {
  const auto tail = highest_shell_tail_pcs(dataset, params);
  NoiseMap map = known_map ? *known_map : estimate_noise_map(tail, params.map_window);
  if (map.dims() != dataset.dims()) throw std::invalid_argument("noise map dims do not match the data");
  const NoiseMap clamped = clamp_noise_map(map, clamp_fraction);
  std::vector<RealVolume> normalized;
  for (const auto& pc : tail) normalized.push_back(normalize_by(pc, clamped));
  return NoiseEstimate{std::move(map), estimate_psd(normalized, params)};
}

std::vector<double> radial_profile(const NoisePsd& psd) {
  const Dims3 d = psd.dims();
  const double scale = static_cast<double>(std::min(d.x, d.y));
  const Index bins = static_cast<Index>(std::ceil(scale * std::sqrt(0.5))) + 1;
  std::vector<double> sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<Index> count(static_cast<std::size_t>(bins), 0);
  for (Index k = 0; k < d.z; ++k)
    for (Index j = 0; j < d.y; ++j)
      for (Index i = 0; i < d.x; ++i) {
        const double fx = static_cast<double>(signed_bin(i, d.x)) / static_cast<double>(d.x);
        const double fy = static_cast<double>(signed_bin(j, d.y)) / static_cast<double>(d.y);
        const auto b = static_cast<std::size_t>(std::lround(std::hypot(fx, fy) * scale));
        sum[b] += psd.psi(i, j, k);
        ++count[b];
      }
  std::vector<double> out;
  for (std::size_t b = 0; b < sum.size(); ++b)
    if (count[b] > 0) out.push_back(sum[b] / static_cast<double>(count[b]));
  return out;
}

}  // namespace bm4dpc
