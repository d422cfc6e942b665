#include "spiro/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "spiro/errors.hpp"
#include "spiro/io.hpp"

namespace spiro::interpret {

namespace {

std::size_t argmax_lowest(const std::vector<double>& v, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

void softmax_prefix(std::vector<double>& v, std::size_t n) {
  const double m = *std::max_element(v.begin(), v.begin() + static_cast<long>(n));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = std::exp(v[i] - m);
    total += v[i];
  }
  for (std::size_t i = 0; i < n; ++i) v[i] /= total;
  std::fill(v.begin() + static_cast<long>(n), v.end(), 0.0);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

Aggregation aggregation_from_string(std::string_view s) {
  if (s == "mean_then_softmax") return Aggregation::mean_then_softmax;
  if (s == "softmax_then_mean") return Aggregation::softmax_then_mean;
  fail(ErrorKind::config, "unknown attention aggregation '" + std::string(s) + "'");
}

AttentionProfile cls_attention_profile(const tc::Tensor& attention, const std::vector<bool>& mask,
                                       Aggregation agg) {
  require(attention.rank() == 4 && attention.size() > 0, ErrorKind::data,
          "trace holds no attention weights");
  const std::size_t layers = attention.dim(0);
  const std::size_t heads = attention.dim(1);
  const std::size_t len = attention.dim(2);
  require(attention.dim(3) == len && mask.size() == len && len >= 2, ErrorKind::shape,
          "attention " + attention.shape_string() + " does not match a mask of length " +
              std::to_string(mask.size()));
  const std::size_t n = len - 1;
  std::size_t valid = 0;
  while (valid < n && !mask[valid + 1]) ++valid;
  for (std::size_t i = valid; i < n; ++i) {
    require(mask[i + 1], ErrorKind::shape, "padding patches must form a suffix");
  }
  require(valid > 0, ErrorKind::degenerate, "no valid patches");

  AttentionProfile p;
  p.valid_patches = valid;
  p.importance.assign(n, 0.0);
  const double inv = 1.0 / static_cast<double>(layers * heads);
  std::vector<double> row(n);
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      const double* cls_row = attention.data() + ((l * heads + h) * len) * len;
      for (std::size_t i = 0; i < n; ++i) row[i] = cls_row[i + 1];
      if (agg == Aggregation::softmax_then_mean) softmax_prefix(row, valid);
      for (std::size_t i = 0; i < valid; ++i) p.importance[i] += row[i] * inv;
    }
  }
  if (agg == Aggregation::mean_then_softmax) {
    softmax_prefix(p.importance, valid);
  } else {
    double total = 0.0;
    for (std::size_t i = 0; i < valid; ++i) total += p.importance[i];
    for (std::size_t i = 0; i < valid; ++i) p.importance[i] /= total;
  }
  p.most_important_patch = argmax_lowest(p.importance, valid);
  return p;
}

AttentionProfile cohort_mean_profile(const std::vector<AttentionProfile>& profiles) {
  require(!profiles.empty(), ErrorKind::data, "cannot average an empty cohort");
  const std::size_t n = profiles.front().importance.size();
  AttentionProfile out;
  out.importance.assign(n, 0.0);
  for (const auto& p : profiles) {
    require(p.importance.size() == n, ErrorKind::shape, "profiles differ in patch count");
    out.valid_patches = std::max(out.valid_patches, p.valid_patches);
    for (std::size_t i = 0; i < n; ++i) out.importance[i] += p.importance[i];
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out.importance[i] /= static_cast<double>(profiles.size());
    total += out.importance[i];
  }
  require(total > 0.0, ErrorKind::degenerate, "cohort importance sums to zero");
  for (double& v : out.importance) v /= total;
  out.most_important_patch = argmax_lowest(out.importance, std::max<std::size_t>(out.valid_patches, 1));
  return out;
}

ReferenceEquation reference_from_json(const std::string& text) {
  using nlohmann::json;
  ReferenceEquation r;
  try {
    const json j = json::parse(text);
    for (auto [key, slot] : {std::pair{"male", &r.male}, std::pair{"female", &r.female}}) {
      const json& c = j.at(key);
      slot->a_height = c.at("a_height");
      slot->b_age = c.at("b_age");
      slot->c = c.at("c");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::config, std::string("bad reference equation: ") + e.what());
  }
  return r;
}

std::string_view to_string(GoldCohort g) { return g == GoldCohort::stage12 ? "stage12" : "stage34"; }

double fev1_percent_predicted(const SpiroSummary& s, const Demographics& d,
                              const ReferenceEquation& ref) {
  const ReferenceCoefficients& k = d.sex == 1 ? ref.male : ref.female;
  const double predicted = k.a_height * d.height_cm + k.b_age * d.age + k.c;
  require(predicted > 0.0 && std::isfinite(predicted), ErrorKind::degenerate,
          "predicted FEV1 is not positive (" + std::to_string(predicted) + " L)");
  return 100.0 * s.fev1_l / predicted;
}

GoldCohort gold_stratify(const SpiroSummary& s, const Demographics& d,
                         const ReferenceEquation& ref) {
  return fev1_percent_predicted(s, d, ref) >= kGoldThreshold ? GoldCohort::stage12
                                                             : GoldCohort::stage34;
}

MarkerSet locate_markers(const SpiroSummary& s, const preproc::FlowVolumeCurve& curve) {
  require(curve.valid_len >= 1 && curve.valid_len <= curve.length() && curve.dv_l > 0.0,
          ErrorKind::degenerate, "curve has no valid samples");
  require(s.fvc_l > 0.0, ErrorKind::degenerate, "FVC must be positive to place markers");
  MarkerSet m;
  m.pef_pos = argmax_lowest(curve.flow_lps, curve.valid_len);
  auto pos = [&](double q) {
    // The small guard keeps exact halves (7.5 computed as 7.4999...) rounding up.
    const double x = std::floor(q * s.fvc_l / curve.dv_l + 0.5 + 1e-9);
    return std::min(static_cast<std::size_t>(std::max(x, 0.0)), curve.valid_len - 1);
  };
  m.fef25_pos = pos(0.25);
  m.fef50_pos = pos(0.50);
  m.fef75_pos = pos(0.75);
  return m;
}

namespace {

std::size_t patch_len_of(const preproc::FlowVolumeCurve& curve, const AttentionProfile& p) {
  const std::size_t n = p.importance.size();
  require(n > 0 && curve.length() % n == 0, ErrorKind::shape,
          "curve length " + std::to_string(curve.length()) + " is not a multiple of " +
              std::to_string(n) + " patches");
  return curve.length() / n;
}

}  // namespace

std::string overlay_csv(const preproc::FlowVolumeCurve& curve, const AttentionProfile& profile) {
  const std::size_t plen = patch_len_of(curve, profile);
  std::string out = "volume_l,flow_lps,patch_index,importance\n";
  for (std::size_t i = 0; i < curve.valid_len; ++i) {
    const std::size_t patch = i / plen;
    out += fmt("%.6f", static_cast<double>(i) * curve.dv_l) + "," +
           fmt("%.17g", curve.flow_lps[i]) + "," + std::to_string(patch) + "," +
           fmt("%.17g", profile.importance[patch]) + "\n";
  }
  return out;
}

std::string overlay_svg(const preproc::FlowVolumeCurve& curve, const AttentionProfile& profile,
                        const MarkerSet& markers) {
  const std::size_t plen = patch_len_of(curve, profile);
  require(curve.valid_len >= 1, ErrorKind::degenerate, "empty curve");
  constexpr double kW = 800, kH = 400, kLeft = 50, kRight = 20, kTop = 20, kBottom = 40;
  const double plot_w = kW - kLeft - kRight;
  const double plot_h = kH - kTop - kBottom;
  const double n_samples = static_cast<double>(std::max<std::size_t>(curve.valid_len, 2) - 1);
  double fmax = 0.0;
  for (std::size_t i = 0; i < curve.valid_len; ++i) fmax = std::max(fmax, curve.flow_lps[i]);
  if (fmax <= 0.0) fmax = 1.0;
  const auto x_of = [&](double sample) { return kLeft + plot_w * sample / n_samples; };
  const auto y_of = [&](double flow) { return kTop + plot_h * (1.0 - flow / fmax); };
  double imax = 0.0;
  for (double v : profile.importance) imax = std::max(imax, v);

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"400\" "
                  "viewBox=\"0 0 800 400\">\n";
  s += "<rect class=\"background\" x=\"0\" y=\"0\" width=\"800\" height=\"400\" fill=\"white\" "
       "stroke=\"none\"/>\n";
  const std::size_t valid_patches =
      std::min(profile.valid_patches, (curve.valid_len + plen - 1) / plen);
  for (std::size_t p = 0; p < valid_patches; ++p) {
    const double x0 = x_of(static_cast<double>(p * plen));
    const double x1 = x_of(std::min(static_cast<double>((p + 1) * plen), n_samples));
    const double opacity = imax > 0.0 ? profile.importance[p] / imax : 0.0;
    s += "<rect class=\"importance\" data-patch=\"" + std::to_string(p) + "\" x=\"" +
         fmt("%.3f", x0) + "\" y=\"" + fmt("%.3f", kTop) + "\" width=\"" +
         fmt("%.3f", x1 - x0) + "\" height=\"" + fmt("%.3f", plot_h) +
         "\" fill=\"#d62728\" stroke=\"none\" fill-opacity=\"" + fmt("%.17g", opacity) + "\"/>\n";
  }
  s += "<line class=\"axis\" x1=\"" + fmt("%.3f", kLeft) + "\" y1=\"" + fmt("%.3f", kTop + plot_h) +
       "\" x2=\"" + fmt("%.3f", kLeft + plot_w) + "\" y2=\"" + fmt("%.3f", kTop + plot_h) +
       "\" stroke=\"#444\"/>\n";
  s += "<line class=\"axis\" x1=\"" + fmt("%.3f", kLeft) + "\" y1=\"" + fmt("%.3f", kTop) +
       "\" x2=\"" + fmt("%.3f", kLeft) + "\" y2=\"" + fmt("%.3f", kTop + plot_h) +
       "\" stroke=\"#444\"/>\n";
  s += "<text x=\"400\" y=\"392\" font-family=\"sans-serif\" font-size=\"12\" "
       "text-anchor=\"middle\">Volume (L), max " +
       fmt("%.2f", n_samples * curve.dv_l) + "</text>\n";
  s += "<text x=\"14\" y=\"200\" font-family=\"sans-serif\" font-size=\"12\" "
       "transform=\"rotate(-90 14 200)\" text-anchor=\"middle\">Flow (L/s), max " +
       fmt("%.2f", fmax) + "</text>\n";

  s += "<polyline class=\"curve\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i = 0; i < curve.valid_len; ++i) {
    s += fmt("%.3f", x_of(static_cast<double>(i))) + "," + fmt("%.3f", y_of(curve.flow_lps[i]));
    s += i + 1 < curve.valid_len ? " " : "";
  }
  s += "\"/>\n";

  {
    const std::size_t p = profile.most_important_patch;
    const double x0 = x_of(static_cast<double>(p * plen));
    const double x1 = x_of(std::min(static_cast<double>((p + 1) * plen), n_samples));
    s += "<rect class=\"most-important\" x=\"" + fmt("%.3f", x0) + "\" y=\"" + fmt("%.3f", kTop) +
         "\" width=\"" + fmt("%.3f", x1 - x0) + "\" height=\"" + fmt("%.3f", plot_h) +
         "\" fill=\"none\" stroke=\"black\" stroke-width=\"2\"/>\n";
  }
  const std::pair<const char*, std::size_t> lines[] = {{"PEF", markers.pef_pos},
                                                       {"FEF25", markers.fef25_pos},
                                                       {"FEF50", markers.fef50_pos},
                                                       {"FEF75", markers.fef75_pos}};
  for (const auto& [name, pos] : lines) {
    const double x = x_of(static_cast<double>(pos));
    s += "<line class=\"marker\" data-marker=\"" + std::string(name) + "\" x1=\"" + fmt("%.3f", x) +
         "\" y1=\"" + fmt("%.3f", kTop) + "\" x2=\"" + fmt("%.3f", x) + "\" y2=\"" +
         fmt("%.3f", kTop + plot_h) + "\" stroke=\"#2ca02c\" stroke-dasharray=\"4 3\"/>\n";
    s += "<text class=\"marker-label\" x=\"" + fmt("%.3f", x + 3) + "\" y=\"" +
         fmt("%.3f", kTop + 12) + "\" font-family=\"sans-serif\" font-size=\"11\">" + name +
         "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

OverlayPaths overlay_export(const preproc::FlowVolumeCurve& curve, const AttentionProfile& profile,
                            const MarkerSet& markers, const std::string& base_path) {
  OverlayPaths paths{base_path + ".csv", base_path + ".svg"};
  const std::string csv = overlay_csv(curve, profile);
  const std::string svg = overlay_svg(curve, profile, markers);
  io::atomic_write(paths.csv, csv);
  io::atomic_write(paths.svg, svg);
  return paths;
}

}  // namespace spiro::interpret
