#include "bm4dpc/cli.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "bm4dpc/dataio.hpp"
#include "bm4dpc/evaluate.hpp"
#include "bm4dpc/noisest.hpp"
#include "bm4dpc/parallel.hpp"
#include "bm4dpc/phasestab.hpp"
#include "bm4dpc/pipeline.hpp"
#include "bm4dpc/simulate.hpp"

namespace bm4dpc {
namespace {

namespace fs = std::filesystem;
using AnyDataset = std::variant<RealDataset, ComplexDataset>;

std::vector<ShellSpec> parse_shells(const std::string& text) {
  std::vector<ShellSpec> shells;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("shell '" + item + "' is not b:count");
    try {
      std::size_t used = 0;
      ShellSpec s;
      s.bval = std::stod(item.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument("bad b-value");
      const std::string count = item.substr(colon + 1);
      s.count = static_cast<Index>(std::stol(count, &used));
      if (used != count.size()) throw std::invalid_argument("bad count");
      shells.push_back(s);
    } catch (const std::logic_error&) {
      throw std::invalid_argument("shell '" + item + "' is not b:count");
    }
  }
  if (shells.empty()) throw std::invalid_argument("no shells given");
  return shells;
}

AnyDataset load(const std::string& path, const std::string& bval, const std::string& bvec) {
  AnyDataset data = read_dataset(path);
  auto [bvals, bvecs] = read_bvals_bvecs(bval, bvec.empty() ? std::nullopt : std::optional<fs::path>(bvec));
  std::visit([&](auto& d) { attach_encoding(d, bvals, bvecs); }, data);
  return data;
}

RealDataset as_magnitude(const AnyDataset& data) {
  if (const auto* r = std::get_if<RealDataset>(&data)) return *r;
  return magnitude(std::get<ComplexDataset>(data));
}

RealDataset as_stabilized(const AnyDataset& data) {
  if (const auto* r = std::get_if<RealDataset>(&data)) return *r;
  return stabilize_phase(std::get<ComplexDataset>(data));
}

RealVolume default_mask(const RealDataset& data) {
  const ShellTable table = group_shells(data.bvals);
  Eigen::ArrayXd b0 = Eigen::ArrayXd::Zero(data.dims().size());
  for (Index v : table.shells.front().members) b0 += data.volumes[static_cast<std::size_t>(v)].samples();
  return RealVolume(data.dims(), (b0 > 0.0).cast<double>());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw IoError("failed writing " + path.string());
}

RealDataset pcs_dataset(std::vector<RealVolume> pcs) {
  RealDataset d;
  d.bvals.assign(pcs.size(), 0.0);
  d.volumes = std::move(pcs);
  return d;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"BM4D denoising of diffusion MRI with global PCA and correlated noise", "bm4dpc"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  int threads = 0;
  std::uint64_t seed = 1;
  bool verbose = false;
  app.add_option("--threads", threads, "worker threads (default: BM4DPC_THREADS or all cores)")
      ->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "random seed for simulate");
  app.add_flag("--verbose,-v", verbose, "print pipeline steps to stderr");

  // simulate
  auto* sim = app.add_subcommand("simulate", "write a noisy phantom with its ground truth");
  std::string sim_out;
  std::vector<Index> sim_size{32, 32, 16};
  std::string sim_shells = "0:3,1000:15,2000:15";
  double sim_level = 0.05;
  std::string sim_type = "colored";
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--size", sim_size, "grid M N O")->expected(3)->check(CLI::PositiveNumber);
  sim->add_option("--shells", sim_shells, "b:count[,b:count...]");
  sim->add_option("--noise-level", sim_level, "noise std as a fraction of the maximum b=0 signal")
      ->check(CLI::NonNegativeNumber);
  sim->add_option("--noise-type", sim_type, "white or colored")->check(CLI::IsMember({"white", "colored"}));

  // denoise
  auto* den = app.add_subcommand("denoise", "BM4D-PC denoising of a DWI series");
  std::string den_in, den_bval, den_bvec, den_out, den_map, den_psd, den_profile = "np", den_save;
  bool den_real = false;
  den->add_option("--in", den_in, "input 4D NIfTI (complex or real)")->required();
  den->add_option("--bval", den_bval)->required();
  den->add_option("--bvec", den_bvec);
  den->add_option("--out", den_out, "denoised 4D NIfTI")->required();
  den->add_option("--noise-map", den_map, "known noise map (std)");
  den->add_option("--psd", den_psd, "known noise PSD");
  den->add_option("--profile", den_profile, "BM4D profile");
  den->add_flag("--real-input", den_real, "input is already real valued; skip phase stabilization");
  den->add_option("--save-noise-estimates", den_save, "directory for the noise map, PSD and PC stack");

  // estimate-noise
  auto* est = app.add_subcommand("estimate-noise", "estimate the noise map and PSD from the highest shell");
  std::string est_in, est_bval, est_map, est_psd;
  est->add_option("--in", est_in)->required();
  est->add_option("--bval", est_bval)->required();
  est->add_option("--out-map", est_map)->required();
  est->add_option("--out-psd", est_psd)->required();

  // metrics
  auto* met = app.add_subcommand("metrics", "PSNR/SSIM per shell and FA/MD RMSE");
  std::string met_ref, met_test, met_bval, met_bvec, met_mask, met_out;
  met->add_option("--ref", met_ref)->required();
  met->add_option("--test", met_test)->required();
  met->add_option("--bval", met_bval)->required();
  met->add_option("--bvec", met_bvec, "enables FA/MD RMSE");
  met->add_option("--mask", met_mask);
  met->add_option("--out", met_out, "JSON report; a CSV is written next to it")->required();

  // dti
  auto* dti = app.add_subcommand("dti", "weighted least-squares tensor fit");
  std::string dti_in, dti_bval, dti_bvec, dti_mask, dti_fa, dti_md;
  dti->add_option("--in", dti_in)->required();
  dti->add_option("--bval", dti_bval)->required();
  dti->add_option("--bvec", dti_bvec)->required();
  dti->add_option("--mask", dti_mask);
  dti->add_option("--out-fa", dti_fa)->required();
  dti->add_option("--out-md", dti_md)->required();

  // baseline-mppca
  auto* mp = app.add_subcommand("baseline-mppca", "Marchenko-Pastur PCA baseline");
  std::string mp_in, mp_out, mp_bval;
  Index mp_kernel = 5, mp_step = 3;
  mp->add_option("--in", mp_in)->required();
  mp->add_option("--out", mp_out)->required();
  mp->add_option("--bval", mp_bval, "optional b-values to carry along");
  mp->add_option("--kernel", mp_kernel)->check(CLI::PositiveNumber);
  mp->add_option("--step", mp_step)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  auto log = [&](const std::string& line) {
    if (verbose) err << line << '\n';
  };

  try {
    if (threads > 0) set_thread_count(threads);

    if (*sim) {
      PhantomSpec spec;
      spec.dims = Dims3{sim_size[0], sim_size[1], sim_size[2]};
      spec.shells = parse_shells(sim_shells);
      spec.seed = seed;
      log("building phantom " + to_string(spec.dims));
      const Phantom ph = make_phantom(spec);
      NoiseSpec ns;
      ns.level = sim_level;
      ns.kind = sim_type == "white" ? NoiseKind::White : NoiseKind::Colored;
      ns.seed = seed + 1;
      const NoisyData noisy = add_noise(ph.signal, ns);
      const fs::path dir(sim_out);
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
      write_nifti(ph.magnitude, dir / "gt.nii");
      write_nifti(noisy.noisy, dir / "noisy.nii");
      write_nifti(noisy.sigma.sigma, dir / "sigma_true.nii");
      write_nifti(noisy.psd.psi, dir / "psd_true.nii");
      write_nifti(ph.mask, dir / "mask.nii");
      write_bvals(ph.signal.bvals, dir / "bvals");
      write_bvecs(*ph.signal.bvecs, dir / "bvecs");
      log("wrote " + dir.string());
    } else if (*den) {
      const AnyDataset data = load(den_in, den_bval, den_bvec);
      PipelineOptions opt;
      opt.bm4d_profile = Bm4dProfile::by_name(den_profile);
      opt.skip_phase_stabilization = den_real;
      opt.keep_pcs = !den_save.empty();
      opt.log = log;
      if (!den_map.empty()) opt.provided_noise_map = read_noise_map(den_map);
      if (!den_psd.empty()) opt.provided_psd = read_psd(den_psd);
      if (std::holds_alternative<RealDataset>(data) && !den_real)
        throw std::invalid_argument("input is real valued; pass --real-input to skip phase stabilization");
      const PipelineResult res = denoise_bm4dpc(data, opt);
      write_nifti(res.denoised, den_out);
      if (!den_save.empty()) {
        const fs::path dir(den_save);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        write_nifti(res.noise_map.sigma, dir / "sigma_est.nii");
        write_nifti(res.psd.psi, dir / "psd_est.nii");
        write_nifti(pcs_dataset(res.pcs), dir / "pcs.nii");
      }
      log("wrote " + den_out);
    } else if (*est) {
      const RealDataset data = as_stabilized(load(est_in, est_bval, ""));
      const NoiseEstimate e = estimate_noise(data);
      write_nifti(e.map.sigma, est_map);
      write_nifti(e.psd.psi, est_psd);
    } else if (*met) {
      const RealDataset ref = as_magnitude(load(met_ref, met_bval, met_bvec));
      const RealDataset test = as_magnitude(load(met_test, met_bval, met_bvec));
      std::optional<RealVolume> mask;
      if (!met_mask.empty()) mask = read_real_volume(met_mask);
      const MetricReport report = evaluate_metrics(ref, test, mask);
      write_text(met_out, report.to_json());
      fs::path csv(met_out);
      csv.replace_extension(".csv");
      write_text(csv, report.to_csv());
      out << report.to_json();
    } else if (*dti) {
      const RealDataset data = as_magnitude(load(dti_in, dti_bval, dti_bvec));
      const RealVolume mask = dti_mask.empty() ? default_mask(data) : read_real_volume(dti_mask);
      const DtiMaps maps = fit_dti(data, mask);
      write_nifti(maps.fa, dti_fa);
      write_nifti(maps.md, dti_md);
    } else if (*mp) {
      AnyDataset data = read_dataset(mp_in);
      std::visit(
          [&](auto& d) {
            std::vector<double> bvals(d.volumes.size(), 0.0);
            if (!mp_bval.empty()) bvals = read_bvals_bvecs(mp_bval).first;
            attach_encoding(d, bvals, std::nullopt);
          },
          data);
      write_nifti(mppca_denoise(as_stabilized(data), mp_kernel, mp_step), mp_out);
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << '\n';
    return kExitIo;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back("bm4dpc");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace bm4dpc
