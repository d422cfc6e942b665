#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "spiro/types.hpp"

namespace spiro::preproc {

/// Acceptability codes 0 and 32 mark a usable blow.
bool validate_blow(int acceptability_code);

std::vector<double> to_liters(const VolumeTimeSeries& blow);

/// FEV1 and FVC come from the raw volume trace; PEF and FEF25/50/75 from the
/// flow of the smoothed trace (sigma = 1 sample).
SpiroSummary compute_summary(const VolumeTimeSeries& blow);

/// Linear-interpolation (inclusive) empirical percentile, q in [0, 1].
/// `sorted` must be ascending and non-empty.
double percentile(std::span<const double> sorted, double q);

inline constexpr double kQcTail = 0.005;

/// Indices (ascending) of blows whose FEV1, FVC and PEF all lie inside the
/// [0.5th, 99.5th] percentile band of the input list.
std::vector<std::size_t> qc_filter(std::span<const SpiroSummary> summaries);

/// Normalized kernel, radius round(4 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Discrete Gaussian convolution with half-sample symmetric (reflect)
/// boundary extension.
std::vector<double> smooth_gaussian(std::span<const double> series, double sigma);

/// F(t) = (V(t + dt) - V(t)) / dt; output has one sample fewer than input.
std::vector<double> volume_to_flow(std::span<const double> volume_l, double dt = kBlowDt);

struct FlowVolumeCurve {
  std::vector<double> flow_lps;  // length T, zero for i >= valid_len
  std::size_t valid_len = 0;
  double dv_l = 0.01;

  std::size_t length() const { return flow_lps.size(); }
};

/// Interpolates flow onto the volume grid {0, dv, 2 dv, ...} up to FVC (the
/// maximum of the running-max volume) and zero-pads to t_max samples.
/// `flow` and `volume` must be sample-aligned and of equal length.
FlowVolumeCurve build_flow_volume(std::span<const double> flow, std::span<const double> volume,
                                  double dv_l, std::size_t t_max);

/// Full chain for one blow: litres, smoothing, forward difference, grid.
FlowVolumeCurve flow_volume_from_blow(const VolumeTimeSeries& blow, double dv_l,
                                      std::size_t t_max, double sigma = 1.0);

/// Smallest multiple of patch_len that is >= t_max.
std::size_t padded_length(std::size_t t_max, std::size_t patch_len);

struct PatchSequence {
  std::vector<double> values;  // n_patches * patch_len, patch-major
  std::vector<bool> mask;      // n_patches + 1; mask[0] is the CLS slot; true = padding
  std::size_t n_patches = 0;
  std::size_t patch_len = 0;

  std::span<const double> patch(std::size_t i) const {
    return {values.data() + i * patch_len, patch_len};
  }
  std::size_t valid_patches() const;
};

PatchSequence patchify(const FlowVolumeCurve& curve, std::size_t patch_len);

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> sd;
};

inline constexpr double kSdFloor = 1e-6;

/// Per-position mean/sd over the curves whose valid region covers the
/// position. Positions no curve covers get mean 0, sd 1.
Standardizer fit_standardizer(std::span<const FlowVolumeCurve> curves);
FlowVolumeCurve apply_standardizer(const Standardizer& std, const FlowVolumeCurve& curve);

}  // namespace spiro::preproc
