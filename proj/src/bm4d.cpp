#include "bm4dpc/bm4d.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "bm4dpc/fft.hpp"
#include "bm4dpc/parallel.hpp"

namespace bm4dpc {

namespace {

bool is_pow2(Index n) { return n > 0 && (n & (n - 1)) == 0; }

void validate_stage(const StageParams& s, const char* name) {
  for (int a = 0; a < 3; ++a) {
    if (s.block[static_cast<std::size_t>(a)] < 2)
      throw std::invalid_argument(std::string(name) + ": block edges must be at least 2");
    if (s.search_radius[static_cast<std::size_t>(a)] < 0)
      throw std::invalid_argument(std::string(name) + ": search radius must be nonnegative");
  }
  if (s.max_group < 1) throw std::invalid_argument(std::string(name) + ": max group size must be at least 1");
  if (s.step < 1) throw std::invalid_argument(std::string(name) + ": step must be at least 1");
  if (!(s.lambda >= 0.0)) throw std::invalid_argument(std::string(name) + ": lambda must be nonnegative");
}

}  // namespace

void Bm4dProfile::validate() const {
  validate_stage(hard_threshold, "hard-threshold stage");
  validate_stage(wiener, "Wiener stage");
}

Bm4dProfile Bm4dProfile::by_name(std::string_view name) {
  if (name == "np") return Bm4dProfile{};
  if (name == "lc" || name == "mp")
    throw std::invalid_argument("profile '" + std::string(name) + "' is reserved and not available");
  throw std::invalid_argument("unknown profile '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------------------
// Block matching

std::vector<Index3> match_blocks(const RealVolume& guide, const Index3& ref, const StageParams& params) {
  const Dims3 d = guide.dims();
  Index3 lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    const auto u = static_cast<std::size_t>(a);
    const Index last = d[a] - params.block[u];
    if (last < 0) throw std::invalid_argument("match_blocks: volume " + to_string(d) + " is smaller than the block");
    if (ref[u] < 0 || ref[u] > last) throw std::invalid_argument("match_blocks: reference block leaves the volume");
    lo[u] = std::max<Index>(0, ref[u] - params.search_radius[u]);
    hi[u] = std::min(last, ref[u] + params.search_radius[u]);
  }
  const Index bx = params.block[0], by = params.block[1], bz = params.block[2];
  const double inv_p = 1.0 / static_cast<double>(params.block_size());

  struct Candidate {
    double distance;
    Index3 corner;
  };
  std::vector<Candidate> cands;
  cands.reserve(static_cast<std::size_t>((hi[0] - lo[0] + 1) * (hi[1] - lo[1] + 1) * (hi[2] - lo[2] + 1)));
  for (Index x = lo[0]; x <= hi[0]; ++x)
    for (Index y = lo[1]; y <= hi[1]; ++y)
      for (Index z = lo[2]; z <= hi[2]; ++z) {
        const Index3 c{x, y, z};
        if (c == ref) continue;
        double acc = 0.0;
        for (Index k = 0; k < bz; ++k)
          for (Index j = 0; j < by; ++j) {
            const double* a = &guide(ref[0], ref[1] + j, ref[2] + k);
            const double* b = &guide(x, y + j, z + k);
            for (Index i = 0; i < bx; ++i) {
              const double e = a[i] - b[i];
              acc += e * e;
            }
          }
        cands.push_back({acc * inv_p, c});
      }

  const Index total = static_cast<Index>(cands.size()) + 1;
  Index keep = std::min(total, params.max_group);
  keep = Index{1} << (std::bit_width(static_cast<std::uint64_t>(keep)) - 1);
  const auto others = static_cast<std::ptrdiff_t>(keep - 1);
  std::partial_sort(cands.begin(), cands.begin() + others, cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.corner < b.corner;
  });
  std::vector<Index3> out;
  out.reserve(static_cast<std::size_t>(keep));
  out.push_back(ref);
  for (std::ptrdiff_t i = 0; i < others; ++i) out.push_back(cands[static_cast<std::size_t>(i)].corner);
  return out;
}

// ---------------------------------------------------------------------------------------
// Transforms

Eigen::MatrixXd dct2_matrix(Index n) {
  Eigen::MatrixXd d(n, n);
  for (Index k = 0; k < n; ++k) {
    const double c = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n));
    for (Index u = 0; u < n; ++u)
      d(k, u) = c * std::cos(std::numbers::pi * static_cast<double>((2 * u + 1) * k) / (2.0 * static_cast<double>(n)));
  }
  return d;
}

void haar_forward(double* data, Index n, Index stride) {
  if (!is_pow2(n)) throw std::invalid_argument("haar: length must be a power of two");
  thread_local std::vector<double> tmp;
  tmp.resize(static_cast<std::size_t>(n));
  const double s = std::numbers::sqrt2 / 2.0;
  for (Index len = n; len > 1; len /= 2) {
    const Index half = len / 2;
    for (Index i = 0; i < half; ++i) {
      const double a = data[2 * i * stride], b = data[(2 * i + 1) * stride];
      tmp[static_cast<std::size_t>(i)] = (a + b) * s;
      tmp[static_cast<std::size_t>(half + i)] = (a - b) * s;
    }
    for (Index i = 0; i < len; ++i) data[i * stride] = tmp[static_cast<std::size_t>(i)];
  }
}

void haar_inverse(double* data, Index n, Index stride) {
  if (!is_pow2(n)) throw std::invalid_argument("haar: length must be a power of two");
  thread_local std::vector<double> tmp;
  tmp.resize(static_cast<std::size_t>(n));
  const double s = std::numbers::sqrt2 / 2.0;
  for (Index len = 2; len <= n; len *= 2) {
    const Index half = len / 2;
    for (Index i = 0; i < half; ++i) {
      const double a = data[i * stride], b = data[(half + i) * stride];
      tmp[static_cast<std::size_t>(2 * i)] = (a + b) * s;
      tmp[static_cast<std::size_t>(2 * i + 1)] = (a - b) * s;
    }
    for (Index i = 0; i < len; ++i) data[i * stride] = tmp[static_cast<std::size_t>(i)];
  }
}

GroupTransform::GroupTransform(Index3 block) : block_(block) {
  for (int a = 0; a < 3; ++a) {
    if (block_[static_cast<std::size_t>(a)] < 1) throw std::invalid_argument("GroupTransform: empty block");
    dct_[static_cast<std::size_t>(a)] = dct2_matrix(block_[static_cast<std::size_t>(a)]);
  }
}

void GroupTransform::apply_block(Eigen::MatrixXd& group, bool transpose) const {
  const Index bx = block_[0], by = block_[1], bz = block_[2];
  Eigen::MatrixXd tmp;
  for (Index m = 0; m < group.cols(); ++m) {
    double* col = group.col(m).data();
    {
      Eigen::Map<Eigen::MatrixXd> v(col, bx, by * bz);
      tmp = transpose ? Eigen::MatrixXd(dct_[0].transpose() * v) : Eigen::MatrixXd(dct_[0] * v);
      v = tmp;
    }
    for (Index k = 0; k < bz; ++k) {
      Eigen::Map<Eigen::MatrixXd> v(col + k * bx * by, bx, by);
      tmp = transpose ? Eigen::MatrixXd(v * dct_[1]) : Eigen::MatrixXd(v * dct_[1].transpose());
      v = tmp;
    }
    {
      Eigen::Map<Eigen::MatrixXd> v(col, bx * by, bz);
      tmp = transpose ? Eigen::MatrixXd(v * dct_[2]) : Eigen::MatrixXd(v * dct_[2].transpose());
      v = tmp;
    }
  }
}

void GroupTransform::forward(Eigen::MatrixXd& group) const {
  if (group.rows() != block_size()) throw std::invalid_argument("GroupTransform: block size mismatch");
  apply_block(group, false);
  if (group.cols() > 1)
    for (Index p = 0; p < group.rows(); ++p) haar_forward(group.data() + p, group.cols(), group.rows());
}

void GroupTransform::inverse(Eigen::MatrixXd& group) const {
  if (group.rows() != block_size()) throw std::invalid_argument("GroupTransform: block size mismatch");
  if (group.cols() > 1)
    for (Index p = 0; p < group.rows(); ++p) haar_inverse(group.data() + p, group.cols(), group.rows());
  apply_block(group, true);
}

// ---------------------------------------------------------------------------------------
// Exact variances

VarianceModel::VarianceModel(const NoisePsd& psd, Index3 block, Index3 reach) : block_(block) {
  const Dims3 d = psd.dims();
  block_size_ = block[0] * block[1] * block[2];
  for (int a = 0; a < 3; ++a) {
    const auto u = static_cast<std::size_t>(a);
    if (block[u] < 1 || block[u] > d[a]) throw std::invalid_argument("VarianceModel: block does not fit the PSD grid");
    reach_[u] = std::clamp<Index>(reach[u], 0, d[a] - 1);
    extent_[u] = 2 * reach_[u] + 1;
  }
  floor_ = 1e-12 * std::max(psd.mean(), 1e-300);

  // |DFT|^2 of every 1D DCT basis function on each axis of the PSD grid
  std::array<Eigen::MatrixXd, 3> mag;
  for (int a = 0; a < 3; ++a) {
    const auto u = static_cast<std::size_t>(a);
    const Eigen::MatrixXd dct = dct2_matrix(block[u]);
    const Index n = d[a];
    mag[u].resize(block[u], n);
    for (Index q = 0; q < block[u]; ++q)
      for (Index f = 0; f < n; ++f) {
        Complex acc(0.0, 0.0);
        for (Index t = 0; t < block[u]; ++t)
          acc += dct(q, t) * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(f * t) / static_cast<double>(n));
        mag[u](q, f) = std::norm(acc);
      }
  }

  const Index cells = extent_[0] * extent_[1] * extent_[2];
  table_.assign(static_cast<std::size_t>(block_size_ * cells), 0.0);
  parallel_for(block_size_, [&](Index p) {
    const Index px = p % block[0], py = (p / block[0]) % block[1], pz = p / (block[0] * block[1]);
    Eigen::ArrayXcd spec(d.size());
    for (Index k = 0; k < d.z; ++k)
      for (Index j = 0; j < d.y; ++j) {
        const double wyz = mag[1](py, j) * mag[2](pz, k);
        for (Index i = 0; i < d.x; ++i) {
          const Index idx = d.linear(i, j, k);
          spec[idx] = Complex(psd.psi[idx] * mag[0](px, i) * wyz, 0.0);
        }
      }
    fft3(spec, d, true);
    double* out = table_.data() + p * cells;
    for (Index dz = -reach_[2]; dz <= reach_[2]; ++dz)
      for (Index dy = -reach_[1]; dy <= reach_[1]; ++dy)
        for (Index dx = -reach_[0]; dx <= reach_[0]; ++dx) {
          const Index sx = ((dx % d.x) + d.x) % d.x, sy = ((dy % d.y) + d.y) % d.y, sz = ((dz % d.z) + d.z) % d.z;
          out[(dx + reach_[0]) + extent_[0] * ((dy + reach_[1]) + extent_[1] * (dz + reach_[2]))] =
              spec[d.linear(sx, sy, sz)].real();
        }
  });
}

double VarianceModel::correlation(Index p, const Index3& d) const {
  for (int a = 0; a < 3; ++a)
    if (std::abs(d[static_cast<std::size_t>(a)]) > reach_[static_cast<std::size_t>(a)])
      throw std::out_of_range("VarianceModel: displacement beyond precomputed reach");
  const Index cells = extent_[0] * extent_[1] * extent_[2];
  return table_[static_cast<std::size_t>(p * cells + (d[0] + reach_[0]) +
                                         extent_[0] * ((d[1] + reach_[1]) + extent_[1] * (d[2] + reach_[2])))];
}

Eigen::MatrixXd VarianceModel::variances(std::span<const Index3> positions) const {
  const Index m = static_cast<Index>(positions.size());
  if (!is_pow2(m)) throw std::invalid_argument("VarianceModel: group size must be a power of two");
  Eigen::MatrixXd out(block_size_, m);
  Eigen::MatrixXd g(m, m);
  std::vector<Index3> disp(static_cast<std::size_t>(m * m));
  for (Index a = 0; a < m; ++a)
    for (Index b = 0; b < m; ++b) {
      const auto& pa = positions[static_cast<std::size_t>(a)];
      const auto& pb = positions[static_cast<std::size_t>(b)];
      disp[static_cast<std::size_t>(a + m * b)] = Index3{pa[0] - pb[0], pa[1] - pb[1], pa[2] - pb[2]};
    }
  for (Index p = 0; p < block_size_; ++p) {
    for (Index b = 0; b < m; ++b)
      for (Index a = 0; a < m; ++a) g(a, b) = correlation(p, disp[static_cast<std::size_t>(a + m * b)]);
    if (m > 1) {
      for (Index b = 0; b < m; ++b) haar_forward(g.col(b).data(), m, 1);
      for (Index a = 0; a < m; ++a) haar_forward(g.data() + a, m, m);
    }
    for (Index k = 0; k < m; ++k) out(p, k) = std::max(g(k, k), floor_);
  }
  return out;
}

Eigen::MatrixXd coeff_variances(const NoisePsd& psd, std::span<const Index3> positions, Index3 block) {
  Index3 reach{0, 0, 0};
  for (const auto& a : positions)
    for (const auto& b : positions)
      for (std::size_t u = 0; u < 3; ++u) reach[u] = std::max(reach[u], std::abs(a[u] - b[u]));
  return VarianceModel(psd, block, reach).variances(positions);
}

// ---------------------------------------------------------------------------------------
// Shrinkage

ThresholdResult hard_threshold(Eigen::MatrixXd& coeffs, const Eigen::MatrixXd& variances, double lambda) {
  if (coeffs.rows() != variances.rows() || coeffs.cols() != variances.cols())
    throw std::invalid_argument("hard_threshold: shape mismatch");
  ThresholdResult r;
  for (Index k = 0; k < coeffs.cols(); ++k)
    for (Index p = 0; p < coeffs.rows(); ++p) {
      const double v = variances(p, k);
      const bool dc = p == 0 && k == 0;
      if (dc || std::abs(coeffs(p, k)) > lambda * std::sqrt(v)) {
        ++r.retained;
        r.retained_variance += v;
      } else {
        coeffs(p, k) = 0.0;
      }
    }
  return r;
}

double wiener_shrink(Eigen::MatrixXd& noisy, const Eigen::MatrixXd& pilot, const Eigen::MatrixXd& variances) {
  if (noisy.rows() != pilot.rows() || noisy.cols() != pilot.cols() || noisy.rows() != variances.rows() ||
      noisy.cols() != variances.cols())
    throw std::invalid_argument("wiener_shrink: shape mismatch");
  double energy = 0.0;
  for (Index k = 0; k < noisy.cols(); ++k)
    for (Index p = 0; p < noisy.rows(); ++p) {
      const double e = pilot(p, k) * pilot(p, k);
      const double v = variances(p, k);
      const double denom = e + v;
      const double gain = denom > 0.0 ? e / denom : 1.0;
      noisy(p, k) *= gain;
      energy += gain * gain * v;
    }
  return 1.0 / std::max(energy, 1e-12);
}

// ---------------------------------------------------------------------------------------
// Aggregation

Aggregator::Aggregator(Dims3 dims)
    : dims_(dims), numerator_(Eigen::ArrayXd::Zero(dims.size())), denominator_(Eigen::ArrayXd::Zero(dims.size())) {}

void Aggregator::add(const Eigen::MatrixXd& blocks, std::span<const Index3> positions, const Index3& block,
                     double weight) {
  if (blocks.cols() != static_cast<Index>(positions.size()) || blocks.rows() != block[0] * block[1] * block[2])
    throw std::invalid_argument("Aggregator: block matrix does not match positions");
  for (Index m = 0; m < blocks.cols(); ++m) {
    const Index3& c = positions[static_cast<std::size_t>(m)];
    Index s = 0;
    for (Index k = 0; k < block[2]; ++k)
      for (Index j = 0; j < block[1]; ++j) {
        const Index base = dims_.linear(c[0], c[1] + j, c[2] + k);
        for (Index i = 0; i < block[0]; ++i, ++s) {
          numerator_[base + i] += weight * blocks(s, m);
          denominator_[base + i] += weight;
        }
      }
  }
}

RealVolume Aggregator::result(const RealVolume& fallback) const {
  if (fallback.dims() != dims_) throw std::invalid_argument("Aggregator: fallback dims mismatch");
  RealVolume out(dims_);
  for (Index i = 0; i < dims_.size(); ++i) out[i] = denominator_[i] > 0.0 ? numerator_[i] / denominator_[i] : fallback[i];
  return out;
}

Eigen::MatrixXd extract_group(const RealVolume& v, std::span<const Index3> positions, const Index3& block) {
  Eigen::MatrixXd g(block[0] * block[1] * block[2], static_cast<Index>(positions.size()));
  for (Index m = 0; m < g.cols(); ++m) {
    const Index3& c = positions[static_cast<std::size_t>(m)];
    Index s = 0;
    for (Index k = 0; k < block[2]; ++k)
      for (Index j = 0; j < block[1]; ++j)
        for (Index i = 0; i < block[0]; ++i, ++s) g(s, m) = v(c[0] + i, c[1] + j, c[2] + k);
  }
  return g;
}

std::vector<Index> reference_corners(Index extent, Index block, Index step) {
  if (extent < block) throw std::invalid_argument("reference_corners: extent smaller than block");
  std::vector<Index> out;
  for (Index p = 0; p <= extent - block; p += step) out.push_back(p);
  if (out.back() != extent - block) out.push_back(extent - block);
  return out;
}

// ---------------------------------------------------------------------------------------
// Stages

std::vector<RealVolume> bm4d_stage(const std::vector<RealVolume>& channels, const NoisePsd& psd,
                                   const Bm4dProfile& profile, Stage stage, const std::vector<RealVolume>* pilot) {
  profile.validate();
  if (channels.empty()) throw std::invalid_argument("bm4d_stage: no channels");
  const Dims3 d = channels.front().dims();
  for (const auto& c : channels)
    if (c.dims() != d) throw std::invalid_argument("bm4d_stage: channels differ in dims");
  if (psd.dims() != d)
    throw std::invalid_argument("bm4d_stage: PSD dims " + to_string(psd.dims()) + " do not match data " + to_string(d));
  const StageParams& params = stage == Stage::HardThreshold ? profile.hard_threshold : profile.wiener;
  for (int a = 0; a < 3; ++a)
    if (d[a] < params.block[static_cast<std::size_t>(a)])
      throw std::invalid_argument("bm4d_stage: volume " + to_string(d) + " is smaller than the block");
  if (stage == Stage::Wiener) {
    if (pilot == nullptr || pilot->size() != channels.size())
      throw std::invalid_argument("bm4d_stage: the Wiener stage needs one pilot per channel");
    for (const auto& c : *pilot)
      if (c.dims() != d) throw std::invalid_argument("bm4d_stage: pilot dims mismatch");
  }

  const Index3 reach{2 * params.search_radius[0], 2 * params.search_radius[1], 2 * params.search_radius[2]};
  const VarianceModel model(psd, params.block, reach);
  const GroupTransform transform(params.block);
  const RealVolume& guide = stage == Stage::HardThreshold ? channels.front() : pilot->front();

  const auto xs = reference_corners(d.x, params.block[0], params.step);
  const auto ys = reference_corners(d.y, params.block[1], params.step);
  const auto zs = reference_corners(d.z, params.block[2], params.step);
  std::vector<Index3> refs;
  refs.reserve(xs.size() * ys.size() * zs.size());
  for (Index z : zs)
    for (Index y : ys)
      for (Index x : xs) refs.push_back(Index3{x, y, z});

  const Index nch = static_cast<Index>(channels.size());
  std::vector<Aggregator> agg(static_cast<std::size_t>(nch), Aggregator(d));

  // Batches have a fixed size so the aggregation order never depends on the worker count.
  constexpr Index kBatch = 256;
  const Index nrefs = static_cast<Index>(refs.size());
  std::vector<std::vector<Index3>> positions(static_cast<std::size_t>(kBatch));
  std::vector<Eigen::MatrixXd> variances(static_cast<std::size_t>(kBatch));
  for (Index b0 = 0; b0 < nrefs; b0 += kBatch) {
    const Index nb = std::min(kBatch, nrefs - b0);
    parallel_for(nb, [&](Index t) {
      const auto u = static_cast<std::size_t>(t);
      positions[u] = match_blocks(guide, refs[static_cast<std::size_t>(b0 + t)], params);
      variances[u] = model.variances(positions[u]);
    });
    parallel_for(nch, [&](Index c) {
      const auto uc = static_cast<std::size_t>(c);
      for (Index t = 0; t < nb; ++t) {
        const auto u = static_cast<std::size_t>(t);
        Eigen::MatrixXd group = extract_group(channels[uc], positions[u], params.block);
        transform.forward(group);
        double weight = 0.0;
        if (stage == Stage::HardThreshold) {
          const ThresholdResult r = hard_threshold(group, variances[u], params.lambda);
          weight = 1.0 / std::max(r.retained_variance, 1e-12);
        } else {
          Eigen::MatrixXd pg = extract_group((*pilot)[uc], positions[u], params.block);
          transform.forward(pg);
          weight = wiener_shrink(group, pg, variances[u]);
        }
        transform.inverse(group);
        agg[uc].add(group, positions[u], params.block, weight);
      }
    });
  }

  std::vector<RealVolume> out;
  out.reserve(channels.size());
  for (Index c = 0; c < nch; ++c) {
    out.push_back(agg[static_cast<std::size_t>(c)].result(channels[static_cast<std::size_t>(c)]));
    if (!out.back().all_finite()) throw NumericalError("bm4d_stage: non-finite output");
  }
  return out;
}

std::vector<RealVolume> bm4d_multichannel(const std::vector<RealVolume>& channels, const NoisePsd& psd,
                                          const Bm4dProfile& profile) {
  const auto basic = bm4d_stage(channels, psd, profile, Stage::HardThreshold);
  return bm4d_stage(channels, psd, profile, Stage::Wiener, &basic);
}

}  // namespace bm4dpc
