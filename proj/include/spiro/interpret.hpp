#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "spiro/preproc.hpp"
#include "spiro/tensor.hpp"
#include "spiro/types.hpp"

namespace spiro::interpret {

/// Patch i is valid iff i < valid_patches (padding is always at the end).
struct AttentionProfile {
  std::vector<double> importance;  // length N, 0 on padding patches
  std::size_t valid_patches = 0;
  std::size_t most_important_patch = 0;
};

enum class Aggregation {
  mean_then_softmax,  // average raw CLS attention over heads/layers, then softmax
  softmax_then_mean,  // softmax each (layer, head) row, then average
};

Aggregation aggregation_from_string(std::string_view s);

/// Uses the CLS query row (toward keys 1..N) of an attention tensor
/// [layers, heads, N+1, N+1]. mask has N+1 entries (mask[0] is CLS).
AttentionProfile cls_attention_profile(const tc::Tensor& attention, const std::vector<bool>& mask,
                                       Aggregation agg = Aggregation::mean_then_softmax);

/// Element-wise mean over the cohort, renormalized over patches valid in
/// any profile.
AttentionProfile cohort_mean_profile(const std::vector<AttentionProfile>& profiles);

/// Predicted FEV1 (L) = a_height * height_cm + b_age * age + c.
struct ReferenceCoefficients {
  double a_height = 0.0;
  double b_age = 0.0;
  double c = 0.0;
};

struct ReferenceEquation {
  ReferenceCoefficients male;
  ReferenceCoefficients female;
};

ReferenceEquation reference_from_json(const std::string& text);

enum class GoldCohort { stage12, stage34 };
std::string_view to_string(GoldCohort g);

inline constexpr double kGoldThreshold = 50.0;

double fev1_percent_predicted(const SpiroSummary& s, const Demographics& d,
                              const ReferenceEquation& ref);
/// stage12 iff FEV1 % predicted >= 50.
GoldCohort gold_stratify(const SpiroSummary& s, const Demographics& d,
                         const ReferenceEquation& ref);

struct MarkerSet {
  std::size_t pef_pos = 0;
  std::size_t fef25_pos = 0;
  std::size_t fef50_pos = 0;
  std::size_t fef75_pos = 0;
};

/// pef_pos = argmax flow over the valid samples (lowest index on ties);
/// fefQ_pos = round-half-up(Q * FVC / dv), clamped to the valid range.
MarkerSet locate_markers(const SpiroSummary& s, const preproc::FlowVolumeCurve& curve);

struct OverlayPaths {
  std::string csv;
  std::string svg;
};

/// Writes <base>.csv (volume_l, flow_lps, patch_index, importance; one row per
/// valid sample) and <base>.svg. Shading opacity of patch i is
/// importance[i] / max importance.
OverlayPaths overlay_export(const preproc::FlowVolumeCurve& curve, const AttentionProfile& profile,
                            const MarkerSet& markers, const std::string& base_path);

std::string overlay_csv(const preproc::FlowVolumeCurve& curve, const AttentionProfile& profile);
std::string overlay_svg(const preproc::FlowVolumeCurve& curve, const AttentionProfile& profile,
                        const MarkerSet& markers);

}  // namespace spiro::interpret
