#include "bm4dpc/evaluate.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "bm4dpc/bm4d.hpp"
#include "bm4dpc/dataio.hpp"
#include "bm4dpc/parallel.hpp"

namespace bm4dpc {
namespace {

void require_same_dims(const RealVolume& a, const RealVolume& b, const char* what) {
  if (a.dims() != b.dims())
    throw std::invalid_argument(std::string(what) + ": dims " + to_string(a.dims()) + " and " + to_string(b.dims()) +
                                " differ");
}

// Valid-mode separable filtering along the three axes.
Eigen::ArrayXd filter_valid(const Eigen::ArrayXd& in, Dims3 d, const Eigen::ArrayXd& w, Dims3& out_dims) {
  const Index e = w.size();
  Eigen::ArrayXd cur = in;
  Dims3 cd = d;
  for (int axis = 0; axis < 3; ++axis) {
    Dims3 nd = cd;
    if (axis == 0) nd.x -= e - 1;
    if (axis == 1) nd.y -= e - 1;
    if (axis == 2) nd.z -= e - 1;
    Eigen::ArrayXd next = Eigen::ArrayXd::Zero(nd.size());
    const Index stride = axis == 0 ? 1 : (axis == 1 ? cd.x : cd.x * cd.y);
    for (Index k = 0; k < nd.z; ++k)
      for (Index j = 0; j < nd.y; ++j)
        for (Index i = 0; i < nd.x; ++i) {
          const Index src = cd.linear(i, j, k);
          double acc = 0.0;
          for (Index t = 0; t < e; ++t) acc += w[t] * cur[src + t * stride];
          next[nd.linear(i, j, k)] = acc;
        }
    cur = std::move(next);
    cd = nd;
  }
  out_dims = cd;
  return cur;
}

}  // namespace

double psnr(const RealVolume& gt, const RealVolume& test) {
  require_same_dims(gt, test, "psnr");
  const double peak = gt.samples().maxCoeff();
  if ((gt.samples() == 0.0).all()) throw std::invalid_argument("psnr: reference volume is all zero");
  const double mse = (gt.samples() - test.samples()).square().mean();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const RealVolume& gt, const RealVolume& test, const SsimOptions& options) {
  require_same_dims(gt, test, "ssim");
  const Index e = options.window;
  if (e < 1 || e % 2 == 0) throw std::invalid_argument("ssim window must be odd and positive");
  const Dims3 d = gt.dims();
  if (d.x < e || d.y < e || d.z < e)
    throw std::invalid_argument("ssim window " + std::to_string(e) + " exceeds volume " + to_string(d));
  const double range = options.data_range ? *options.data_range : gt.samples().maxCoeff() - gt.samples().minCoeff();
  if (!(range > 0.0)) throw std::invalid_argument("ssim: dynamic range must be positive");

  Eigen::ArrayXd w(e);
  const Index r = e / 2;
  for (Index t = 0; t < e; ++t) {
    const double x = static_cast<double>(t - r);
    w[t] = std::exp(-x * x / (2.0 * options.sigma * options.sigma));
  }
  w /= w.sum();

  const Eigen::ArrayXd& x = gt.samples();
  const Eigen::ArrayXd& y = test.samples();
  Dims3 od;
  const Eigen::ArrayXd mx = filter_valid(x, d, w, od);
  const Eigen::ArrayXd my = filter_valid(y, d, w, od);
  const Eigen::ArrayXd mxx = filter_valid(x * x, d, w, od);
  const Eigen::ArrayXd myy = filter_valid(y * y, d, w, od);
  const Eigen::ArrayXd mxy = filter_valid(x * y, d, w, od);

  const double c1 = std::pow(options.k1 * range, 2);
  const double c2 = std::pow(options.k2 * range, 2);
  const Eigen::ArrayXd vx = mxx - mx.square();
  const Eigen::ArrayXd vy = myy - my.square();
  const Eigen::ArrayXd cxy = mxy - mx * my;
  const Eigen::ArrayXd s = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
                           ((mx.square() + my.square() + c1) * (vx + vy + c2));
  return s.mean();
}

double rmse_map(const RealVolume& gt, const RealVolume& test, const RealVolume& mask) {
  require_same_dims(gt, test, "rmse_map");
  require_same_dims(gt, mask, "rmse_map");
  double acc = 0.0;
  Index n = 0;
  for (Index i = 0; i < gt.size(); ++i)
    if (mask[i] > 0.5) {
      const double e = gt[i] - test[i];
      acc += e * e;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("rmse_map: empty mask");
  return std::sqrt(acc / static_cast<double>(n));
}

double fractional_anisotropy(const Eigen::Matrix3d& d) {
  const double norm = d.norm();
  if (norm == 0.0) return 0.0;
  const double md = d.trace() / 3.0;
  return std::sqrt(1.5) * (d - md * Eigen::Matrix3d::Identity()).norm() / norm;
}

DtiMaps fit_dti(const RealDataset& dataset, const RealVolume& mask, const DtiOptions& options) {
  dataset.validate();
  if (!dataset.bvecs) throw std::invalid_argument("fit_dti needs gradient directions");
  const Dims3 dims = dataset.dims();
  if (mask.dims() != dims) throw std::invalid_argument("fit_dti: mask dims do not match the data");

  std::vector<Index> used;
  bool has_b0 = false;
  for (Index v = 0; v < dataset.count(); ++v) {
    const double b = dataset.bvals[static_cast<std::size_t>(v)];
    if (b <= options.max_bval + options.tolerance) {
      used.push_back(v);
      if (b <= options.tolerance) has_b0 = true;
    }
  }
  if (!has_b0) throw std::invalid_argument("fit_dti needs a b=0 volume");
  const Index n = static_cast<Index>(used.size());
  Eigen::MatrixXd design(n, 7);
  for (Index r = 0; r < n; ++r) {
    const auto u = static_cast<std::size_t>(used[static_cast<std::size_t>(r)]);
    double b = dataset.bvals[u];
    if (b <= options.tolerance) b = 0.0;
    const Eigen::Vector3d& g = (*dataset.bvecs)[u];
    design.row(r) << 1.0, -b * g.x() * g.x(), -b * g.y() * g.y(), -b * g.z() * g.z(), -2.0 * b * g.x() * g.y(),
        -2.0 * b * g.x() * g.z(), -2.0 * b * g.y() * g.z();
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (n < 7 || qr.rank() < 7)
    throw std::invalid_argument("fit_dti: design matrix is rank deficient (need 6 non-collinear directions and b=0)");

  DtiMaps out{RealVolume(dims, 0.0), RealVolume(dims, 0.0),
              std::vector<Eigen::Matrix3d>(static_cast<std::size_t>(dims.size()), Eigen::Matrix3d::Zero())};
  std::atomic<bool> failed{false};
  parallel_for(dims.z, [&](Index k) {
    Eigen::VectorXd s(n), w(n);
    for (Index j = 0; j < dims.y; ++j)
      for (Index i = 0; i < dims.x; ++i) {
        const Index idx = dims.linear(i, j, k);
        if (!(mask[idx] > 0.5)) continue;
        for (Index r = 0; r < n; ++r) s[r] = dataset.volumes[static_cast<std::size_t>(used[static_cast<std::size_t>(r)])][idx];
        const double top = s.maxCoeff();
        if (!(top > 0.0)) continue;
        // non-positive samples would break the log; floor them far below the signal
        s = s.cwiseMax(1e-4 * top);
        w = s.cwiseAbs2();
        const Eigen::MatrixXd xtw = design.transpose() * w.asDiagonal();
        Eigen::LDLT<Eigen::MatrixXd> ldlt(xtw * design);
        if (ldlt.info() != Eigen::Success) {
          failed = true;
          continue;
        }
        const Eigen::VectorXd beta = ldlt.solve(xtw * s.array().log().matrix());
        Eigen::Matrix3d d;
        d << beta[1], beta[4], beta[5], beta[4], beta[2], beta[6], beta[5], beta[6], beta[3];
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(d);
        const Eigen::Vector3d lam = eig.eigenvalues().cwiseMax(0.0);
        d = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
        out.tensors[static_cast<std::size_t>(idx)] = d;
        out.md[idx] = d.trace() / 3.0;
        out.fa[idx] = fractional_anisotropy(d);
      }
  });
  if (failed) throw NumericalError("fit_dti: weighted normal equations are singular");
  return out;
}

Index mp_signal_rank(const Eigen::VectorXd& lam, Index voxels) {
  const Index n = lam.size();
  const double m = static_cast<double>(voxels);
  double tail = lam.sum();
  for (Index p = 0; p < n; ++p) {
    // tail holds sum_{i>p} lambda_i (1-based), i.e. lam[p..n-1]
    const double sigma2 = tail / static_cast<double>(n - p);
    if (lam[p] - lam[n - 1] < 4.0 * std::sqrt(static_cast<double>(n - p) / m) * sigma2) return p;
    tail -= lam[p];
  }
  return n;
}

RealDataset mppca_denoise(const RealDataset& dataset, Index kernel, Index step) {
  dataset.validate();
  if (kernel < 1 || step < 1) throw std::invalid_argument("mppca kernel and step must be positive");
  const Dims3 d = dataset.dims();
  const Index n = dataset.count();
  const Index m = kernel * kernel * kernel;
  if (m < n)
    throw std::invalid_argument("mppca kernel^3 = " + std::to_string(m) + " is smaller than the volume count " +
                                std::to_string(n));
  if (d.x < kernel || d.y < kernel || d.z < kernel)
    throw std::invalid_argument("mppca kernel exceeds volume " + to_string(d));

  const auto cx = reference_corners(d.x, kernel, step);
  const auto cy = reference_corners(d.y, kernel, step);
  const auto cz = reference_corners(d.z, kernel, step);
  std::vector<Index3> corners;
  for (Index k : cz)
    for (Index j : cy)
      for (Index i : cx) corners.push_back({i, j, k});

  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d.size(), n);
  Eigen::VectorXd count = Eigen::VectorXd::Zero(d.size());
  constexpr Index kBatch = 256;
  const Index total = static_cast<Index>(corners.size());
  std::vector<Eigen::MatrixXd> est(static_cast<std::size_t>(std::min(kBatch, total)));
  for (Index b0 = 0; b0 < total; b0 += kBatch) {
    const Index nb = std::min(kBatch, total - b0);
    parallel_for(nb, [&](Index t) {
      const Index3& c = corners[static_cast<std::size_t>(b0 + t)];
      Eigen::MatrixXd x(m, n);
      Index row = 0;
      for (Index k = 0; k < kernel; ++k)
        for (Index j = 0; j < kernel; ++j)
          for (Index i = 0; i < kernel; ++i, ++row) {
            const Index idx = d.linear(c[0] + i, c[1] + j, c[2] + k);
            for (Index v = 0; v < n; ++v) x(row, v) = dataset.volumes[static_cast<std::size_t>(v)][idx];
          }
      const Eigen::RowVectorXd mean = x.colwise().mean();
      x.rowwise() -= mean;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(x.transpose() * x / static_cast<double>(m));
      if (eig.info() != Eigen::Success) throw NumericalError("mppca: eigendecomposition failed");
      const Eigen::VectorXd lam = eig.eigenvalues().reverse();
      const Eigen::MatrixXd vecs = eig.eigenvectors().rowwise().reverse();
      const Index p = mp_signal_rank(lam, m);
      const Eigen::MatrixXd vp = vecs.leftCols(p);
      Eigen::MatrixXd y = x * vp * vp.transpose();
      y.rowwise() += mean;
      est[static_cast<std::size_t>(t)] = std::move(y);
    });
    for (Index t = 0; t < nb; ++t) {
      const Index3& c = corners[static_cast<std::size_t>(b0 + t)];
      const Eigen::MatrixXd& y = est[static_cast<std::size_t>(t)];
      Index row = 0;
      for (Index k = 0; k < kernel; ++k)
        for (Index j = 0; j < kernel; ++j)
          for (Index i = 0; i < kernel; ++i, ++row) {
            const Index idx = d.linear(c[0] + i, c[1] + j, c[2] + k);
            sum.row(idx) += y.row(row);
            count[idx] += 1.0;
          }
    }
  }
  sum.array().colwise() /= count.array();
  if (!sum.allFinite()) throw NumericalError("mppca produced non-finite values");

  RealDataset out;
  out.bvals = dataset.bvals;
  out.bvecs = dataset.bvecs;
  out.volumes = devectorize(sum, d);
  return out;
}

const ShellMetrics& MetricReport::shell(double bval, double tolerance) const {
  for (const auto& s : shells)
    if (std::abs(s.bval - bval) <= tolerance) return s;
  throw std::out_of_range("no shell near b=" + std::to_string(bval));
}

namespace {

nlohmann::ordered_json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "+inf" : "-inf";
  return v;
}

}  // namespace

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["volume_count"] = volume_count;
  j["mask_voxels"] = mask_voxels;
  j["shells"] = nlohmann::ordered_json::array();
  for (const auto& s : shells) {
    nlohmann::ordered_json e;
    e["bval"] = s.bval;
    e["volumes"] = s.volumes;
    e["psnr_db"] = number_or_inf(s.psnr);
    e["ssim"] = s.ssim;
    j["shells"].push_back(e);
  }
  j["fa_rmse"] = fa_rmse ? nlohmann::ordered_json(*fa_rmse) : nlohmann::ordered_json();
  j["md_rmse"] = md_rmse ? nlohmann::ordered_json(*md_rmse) : nlohmann::ordered_json();
  return j.dump(2) + "\n";
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "bval,volumes,psnr_db,ssim\n";
  for (const auto& s : shells) {
    os << s.bval << ',' << s.volumes << ',';
    if (std::isinf(s.psnr))
      os << (s.psnr > 0 ? "inf" : "-inf");
    else
      os << s.psnr;
    os << ',' << s.ssim << '\n';
  }
  if (fa_rmse) os << "fa_rmse,,," << *fa_rmse << '\n';
  if (md_rmse) os << "md_rmse,,," << *md_rmse << '\n';
  return os.str();
}

MetricReport evaluate_metrics(const RealDataset& gt, const RealDataset& test, const std::optional<RealVolume>& mask) {
  gt.validate();
  test.validate();
  if (gt.count() != test.count() || gt.dims() != test.dims())
    throw std::invalid_argument("metrics: reference and test datasets differ in shape");
  const Index n = gt.count();
  std::vector<double> p(static_cast<std::size_t>(n)), s(static_cast<std::size_t>(n));
  parallel_for(n, [&](Index v) {
    const auto u = static_cast<std::size_t>(v);
    p[u] = psnr(gt.volumes[u], test.volumes[u]);
    s[u] = ssim(gt.volumes[u], test.volumes[u]);
  });

  MetricReport report;
  report.volume_count = n;
  const ShellTable table = group_shells(gt.bvals);
  for (const auto& sh : table.shells) {
    ShellMetrics m;
    m.bval = sh.center;
    m.volumes = static_cast<Index>(sh.members.size());
    for (Index v : sh.members) {
      m.psnr += p[static_cast<std::size_t>(v)];
      m.ssim += s[static_cast<std::size_t>(v)];
    }
    m.psnr /= static_cast<double>(m.volumes);
    m.ssim /= static_cast<double>(m.volumes);
    report.shells.push_back(m);
  }

  RealVolume support(gt.dims(), 0.0);
  if (mask) {
    if (mask->dims() != gt.dims()) throw std::invalid_argument("metrics: mask dims do not match the data");
    support = *mask;
  } else {
    const Shell& lowest = table.shells.front();
    Eigen::ArrayXd b0 = Eigen::ArrayXd::Zero(gt.dims().size());
    for (Index v : lowest.members) b0 += gt.volumes[static_cast<std::size_t>(v)].samples();
    support.samples() = (b0 > 0.0).cast<double>();
  }
  report.mask_voxels = (support.samples() > 0.5).count();

  if (gt.bvecs && test.bvecs && report.mask_voxels > 0) {
    const DtiMaps a = fit_dti(gt, support);
    const DtiMaps b = fit_dti(test, support);
    report.fa_rmse = rmse_map(a.fa, b.fa, support);
    report.md_rmse = rmse_map(a.md, b.md, support);
  }
  return report;
}

}  // namespace bm4dpc
