#pragma once

#include <functional>
#include <optional>
#include <string>
#include <variant>

#include "bm4dpc/bm4d.hpp"
#include "bm4dpc/core.hpp"
#include "bm4dpc/noisest.hpp"
#include "bm4dpc/phasestab.hpp"

namespace bm4dpc {

struct PipelineOptions {
  std::optional<NoiseMap> provided_noise_map;
  std::optional<NoisePsd> provided_psd;
  NoiseEstParams noise_est_params{};
  Bm4dProfile bm4d_profile{};
  PhaseFilterParams phase_params{};
  double sigma_clamp_fraction = 0.01;
  bool skip_phase_stabilization = false;
  /// Keep the normalized principal-component stack in the result.
  bool keep_pcs = false;
  /// Receives one line per pipeline step when set.
  std::function<void(const std::string&)> log;
};

struct PipelineResult {
  RealDataset denoised;
  NoiseMap noise_map;  ///< as estimated or provided, before clamping
  NoisePsd psd;
  bool estimated_noise = false;
  std::vector<RealVolume> pcs;  ///< filled when keep_pcs is set
};

/// Global-PCA denoising of a DWI series: phase stabilization, noise estimation on the
/// highest shell, normalization by the noise map, PCA over volumes, two-stage BM4D on
/// every component, inverse PCA and rescaling.
PipelineResult denoise_bm4dpc(const std::variant<RealDataset, ComplexDataset>& dataset,
                              const PipelineOptions& options = {});

PipelineResult denoise_bm4dpc(const ComplexDataset& dataset, const PipelineOptions& options = {});
PipelineResult denoise_bm4dpc(const RealDataset& dataset, const PipelineOptions& options = {});

}  // namespace bm4dpc
