#include "spiro/preproc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spiro/errors.hpp"

namespace spiro::preproc {

bool validate_blow(int acceptability_code) {
  return acceptability_code == 0 || acceptability_code == 32;
}

std::vector<double> to_liters(const VolumeTimeSeries& blow) {
  std::vector<double> v(blow.volume_ml.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(blow.volume_ml[i]) / 1000.0;
  return v;
}

namespace {

// Flow at the first crossing of `target` along the aligned (volume, flow) pairs.
double flow_at_volume(std::span<const double> volume, std::span<const double> flow,
                      double target) {
  const std::size_t m = flow.size();
  for (std::size_t k = 0; k < m; ++k) {
    if (volume[k] >= target) {
      if (k == 0 || volume[k] == volume[k - 1]) return flow[k];
      const double frac = (target - volume[k - 1]) / (volume[k] - volume[k - 1]);
      return flow[k - 1] + frac * (flow[k] - flow[k - 1]);
    }
  }
  return flow[m - 1];
}

std::size_t reflect_index(long long idx, std::size_t n) {
  const long long period = 2 * static_cast<long long>(n);
  long long r = idx % period;
  if (r < 0) r += period;
  if (r >= static_cast<long long>(n)) r = period - 1 - r;
  return static_cast<std::size_t>(r);
}

}  // namespace

SpiroSummary compute_summary(const VolumeTimeSeries& blow) {
  const std::size_t n = blow.volume_ml.size();
  require(n >= 2, ErrorKind::degenerate, "blow needs at least two samples");
  const double dt = blow.dt_s;
  const double duration = static_cast<double>(n - 1) * dt;
  require(duration + 1e-9 >= 1.0, ErrorKind::degenerate,
          "blow shorter than 1 s; FEV1 undefined");

  const std::vector<double> v = to_liters(blow);
  SpiroSummary s;
  s.fvc_l = *std::max_element(v.begin(), v.end());
  require(s.fvc_l > 0.0, ErrorKind::degenerate, "blow has zero FVC");

  const double pos = 1.0 / dt;
  const std::size_t k = std::min(static_cast<std::size_t>(std::floor(pos + 1e-9)), n - 1);
  const double frac = k + 1 < n ? std::max(0.0, pos - static_cast<double>(k)) : 0.0;
  s.fev1_l = frac > 1e-9 ? v[k] + frac * (v[k + 1] - v[k]) : v[k];
  require(s.fev1_l > 0.0, ErrorKind::degenerate, "blow has zero FEV1");
  s.ratio = s.fev1_l / s.fvc_l;

  const std::vector<double> smooth = smooth_gaussian(v, 1.0);
  const std::vector<double> flow = volume_to_flow(smooth, dt);
  s.pef_lps = *std::max_element(flow.begin(), flow.end());
  const std::span<const double> aligned(smooth.data(), flow.size());
  s.fef25_lps = flow_at_volume(aligned, flow, 0.25 * s.fvc_l);
  s.fef50_lps = flow_at_volume(aligned, flow, 0.50 * s.fvc_l);
  s.fef75_lps = flow_at_volume(aligned, flow, 0.75 * s.fvc_l);
  return s;
}

double percentile(std::span<const double> sorted, double q) {
  require(!sorted.empty(), ErrorKind::parameter, "percentile of an empty list");
  const double h = static_cast<double>(sorted.size() - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

std::vector<std::size_t> qc_filter(std::span<const SpiroSummary> summaries) {
  require(!summaries.empty(), ErrorKind::parameter, "qc_filter needs at least one blow");
  const std::size_t n = summaries.size();
  std::vector<bool> drop(n, false);
  const auto measures = {&SpiroSummary::fev1_l, &SpiroSummary::fvc_l, &SpiroSummary::pef_lps};
  for (auto field : measures) {
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = summaries[i].*field;
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const double lo = percentile(sorted, kQcTail);
    const double hi = percentile(sorted, 1.0 - kQcTail);
    for (std::size_t i = 0; i < n; ++i) {
      if (values[i] < lo || values[i] > hi) drop[i] = true;
    }
  }
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < n; ++i) {
    if (!drop[i]) kept.push_back(i);
  }
  return kept;
}

std::vector<double> gaussian_kernel(double sigma) {
  require(sigma > 0.0 && std::isfinite(sigma), ErrorKind::parameter,
          "gaussian sigma must be positive");
  const auto radius = static_cast<long long>(std::floor(4.0 * sigma + 0.5));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (long long i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = w;
    total += w;
  }
  for (double& w : k) w /= total;
  return k;
}

std::vector<double> smooth_gaussian(std::span<const double> series, double sigma) {
  const std::vector<double> kernel = gaussian_kernel(sigma);
  const auto radius = static_cast<long long>(kernel.size() / 2);
  const std::size_t n = series.size();
  std::vector<double> out(n, 0.0);
  if (n == 0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (long long j = -radius; j <= radius; ++j) {
      acc += kernel[static_cast<std::size_t>(j + radius)] *
             series[reflect_index(static_cast<long long>(i) + j, n)];
    }
    out[i] = acc;
  }
  return out;
}

std::vector<double> volume_to_flow(std::span<const double> volume_l, double dt) {
  require(volume_l.size() >= 2, ErrorKind::parameter, "volume_to_flow needs at least two samples");
  require(dt > 0.0, ErrorKind::parameter, "dt must be positive");
  std::vector<double> f(volume_l.size() - 1);
  for (std::size_t i = 0; i + 1 < volume_l.size(); ++i) {
    f[i] = (volume_l[i + 1] - volume_l[i]) / dt;
  }
  return f;
}

FlowVolumeCurve build_flow_volume(std::span<const double> flow, std::span<const double> volume,
                                  double dv_l, std::size_t t_max) {
  require(flow.size() == volume.size(), ErrorKind::shape,
          "flow (" + std::to_string(flow.size()) + ") and volume (" +
              std::to_string(volume.size()) + ") must be sample-aligned");
  require(!flow.empty(), ErrorKind::parameter, "empty flow series");
  require(dv_l > 0.0, ErrorKind::parameter, "dv_l must be positive");

  std::vector<double> vmax(volume.begin(), volume.end());
  for (std::size_t i = 1; i < vmax.size(); ++i) vmax[i] = std::max(vmax[i], vmax[i - 1]);
  const double fvc = vmax.back();
  require(fvc >= 0.0, ErrorKind::degenerate, "negative exhaled volume");

  // The guard keeps exact grid multiples (0.3 / 0.01) from flooring down.
  const auto valid_len = static_cast<std::size_t>(std::floor(fvc / dv_l + 1e-9)) + 1;
  require(valid_len <= t_max, ErrorKind::data,
          "curve too long: FVC " + std::to_string(fvc) + " L needs " + std::to_string(valid_len) +
              " grid samples but t_max is " + std::to_string(t_max));

  FlowVolumeCurve out;
  out.dv_l = dv_l;
  out.valid_len = valid_len;
  out.flow_lps.assign(t_max, 0.0);
  std::size_t k = 0;
  const std::size_t m = flow.size();
  for (std::size_t j = 0; j < valid_len; ++j) {
    const double g = static_cast<double>(j) * dv_l;
    while (k < m && vmax[k] < g) ++k;
    double f;
    if (k >= m) {
      f = flow[m - 1];
    } else if (k == 0 || vmax[k] == vmax[k - 1]) {
      f = flow[k];
    } else {
      const double frac = (g - vmax[k - 1]) / (vmax[k] - vmax[k - 1]);
      f = flow[k - 1] + frac * (flow[k] - flow[k - 1]);
    }
    out.flow_lps[j] = f;
  }
  return out;
}

FlowVolumeCurve flow_volume_from_blow(const VolumeTimeSeries& blow, double dv_l,
                                      std::size_t t_max, double sigma) {
  require(blow.volume_ml.size() >= 2, ErrorKind::degenerate, "blow needs at least two samples");
  const std::vector<double> smooth = smooth_gaussian(to_liters(blow), sigma);
  const std::vector<double> flow = volume_to_flow(smooth, blow.dt_s);
  return build_flow_volume(flow, std::span<const double>(smooth.data(), flow.size()), dv_l,
                           t_max);
}

std::size_t padded_length(std::size_t t_max, std::size_t patch_len) {
  require(patch_len > 0, ErrorKind::config, "patch length must be positive");
  return (t_max + patch_len - 1) / patch_len * patch_len;
}

std::size_t PatchSequence::valid_patches() const {
  std::size_t n = 0;
  for (std::size_t i = 1; i < mask.size(); ++i) n += mask[i] ? 0 : 1;
  return n;
}

PatchSequence patchify(const FlowVolumeCurve& curve, std::size_t patch_len) {
  const std::size_t t = curve.length();
  require(patch_len > 0 && t > 0 && t % patch_len == 0, ErrorKind::config,
          "curve length " + std::to_string(t) + " is not divisible by patch length " +
              std::to_string(patch_len));
  PatchSequence seq;
  seq.patch_len = patch_len;
  seq.n_patches = t / patch_len;
  seq.values = curve.flow_lps;
  seq.mask.assign(seq.n_patches + 1, false);
  for (std::size_t i = 0; i < seq.n_patches; ++i) {
    seq.mask[i + 1] = i * patch_len >= curve.valid_len;
  }
  return seq;
}

Standardizer fit_standardizer(std::span<const FlowVolumeCurve> curves) {
  require(!curves.empty(), ErrorKind::parameter, "cannot fit a standardizer on zero curves");
  const std::size_t t = curves.front().length();
  for (const auto& c : curves) {
    require(c.length() == t, ErrorKind::shape, "curves passed to the standardizer differ in length");
  }
  // Welford updates in fixed curve order: deterministic, and identical
  // inputs give an exactly zero deviation.
  std::vector<double> m2(t, 0.0);
  std::vector<std::size_t> count(t, 0);
  Standardizer s;
  s.mean.assign(t, 0.0);
  s.sd.assign(t, 1.0);
  for (const auto& c : curves) {
    for (std::size_t i = 0; i < c.valid_len && i < t; ++i) {
      ++count[i];
      const double x = c.flow_lps[i];
      const double delta = x - s.mean[i];
      s.mean[i] += delta / static_cast<double>(count[i]);
      m2[i] += delta * (x - s.mean[i]);
    }
  }
  for (std::size_t i = 0; i < t; ++i) {
    if (count[i] > 0) s.sd[i] = std::max(kSdFloor, std::sqrt(m2[i] / static_cast<double>(count[i])));
  }
  return s;
}

FlowVolumeCurve apply_standardizer(const Standardizer& std, const FlowVolumeCurve& curve) {
  require(std.mean.size() == curve.length() && std.sd.size() == curve.length(), ErrorKind::shape,
          "standardizer length " + std::to_string(std.mean.size()) +
              " does not match curve length " + std::to_string(curve.length()));
  FlowVolumeCurve out = curve;
  for (std::size_t i = 0; i < out.flow_lps.size(); ++i) {
    out.flow_lps[i] = i < curve.valid_len ? (curve.flow_lps[i] - std.mean[i]) / std.sd[i] : 0.0;
  }
  return out;
}

}  // namespace spiro::preproc
