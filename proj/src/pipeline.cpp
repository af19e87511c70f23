#include "bm4dpc/pipeline.hpp"

#include "bm4dpc/gpca.hpp"

namespace bm4dpc {
namespace {

void say(const PipelineOptions& o, const std::string& line) {
  if (o.log) o.log(line);
}

PipelineResult denoise_real(const RealDataset& data, const PipelineOptions& options) {
  data.validate();
  if (!(options.sigma_clamp_fraction > 0.0 && options.sigma_clamp_fraction < 1.0))
    throw std::invalid_argument("sigma clamp fraction must lie in (0, 1)");
  options.bm4d_profile.validate();
  const Dims3 dims = data.dims();

  PipelineResult result;
  if (options.provided_noise_map && options.provided_psd) {
    say(options, "noise estimation skipped: using the provided noise map and PSD");
    result.noise_map = *options.provided_noise_map;
    result.psd = *options.provided_psd;
  } else {
    say(options, options.provided_noise_map ? "estimating noise PSD from the highest shell (noise map provided)"
                 : options.provided_psd     ? "estimating noise map from the highest shell (PSD provided)"
                                            : "estimating noise map and PSD from the highest shell");
    NoiseEstimate est =
        estimate_noise(data, options.noise_est_params, options.provided_noise_map, options.sigma_clamp_fraction);
    result.noise_map = std::move(est.map);
    result.psd = options.provided_psd ? *options.provided_psd : std::move(est.psd);
    result.estimated_noise = true;
  }
  if (result.noise_map.dims() != dims)
    throw std::invalid_argument("noise map dims " + to_string(result.noise_map.dims()) + " do not match data " +
                                to_string(dims));
  if (result.psd.dims() != dims)
    throw std::invalid_argument("PSD dims " + to_string(result.psd.dims()) + " do not match data " + to_string(dims));
  if (!result.psd.unit_variance) result.psd.normalize();

  const NoiseMap clamped = clamp_noise_map(result.noise_map, options.sigma_clamp_fraction);
  std::vector<RealVolume> normalized;
  normalized.reserve(data.volumes.size());
  for (const auto& v : data.volumes) normalized.push_back(normalize_by(v, clamped));

  say(options, "global PCA over " + std::to_string(data.count()) + " volumes");
  const auto stack = forward_pca(vectorize(normalized));

  say(options, "BM4D on " + std::to_string(stack.count()) + " components");
  auto pcs = stack.pcs(dims);
  const auto denoised_pcs = bm4d_multichannel(pcs, result.psd, options.bm4d_profile);
  if (options.keep_pcs) result.pcs = std::move(pcs);

  const Eigen::MatrixXd recon = inverse_pca(vectorize(denoised_pcs), stack.basis);
  if (!recon.allFinite()) throw NumericalError("non-finite values after inverse PCA");

  result.denoised.bvals = data.bvals;
  result.denoised.bvecs = data.bvecs;
  result.denoised.volumes = devectorize(recon, dims);
  for (auto& v : result.denoised.volumes) v.samples() *= clamped.sigma.samples();
  return result;
}

}  // namespace

PipelineResult denoise_bm4dpc(const RealDataset& dataset, const PipelineOptions& options) {
  if (!options.skip_phase_stabilization)
    throw std::invalid_argument("real-valued input needs skip_phase_stabilization (phase stabilization requires complex data)");
  return denoise_real(dataset, options);
}

PipelineResult denoise_bm4dpc(const ComplexDataset& dataset, const PipelineOptions& options) {
  if (options.skip_phase_stabilization) {
    say(options, "phase stabilization skipped: keeping the real part");
    return denoise_real(real_part(dataset), options);
  }
  say(options, "phase stabilization");
  return denoise_real(stabilize_phase(dataset, options.phase_params), options);
}

PipelineResult denoise_bm4dpc(const std::variant<RealDataset, ComplexDataset>& dataset,
                              const PipelineOptions& options) {
  return std::visit([&](const auto& d) { return denoise_bm4dpc(d, options); }, dataset);
}

}  // namespace bm4dpc
