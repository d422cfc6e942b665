#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "spiro/preproc.hpp"
#include "spiro/synthdata.hpp"
#include "spiro/types.hpp"

namespace spiro::data {

/// One preprocessed record. `curve` is the unstandardized flow-volume curve,
/// padded to the dataset's T and rounded to single precision (the storage
/// precision), so in-memory and reloaded datasets agree bit for bit.
struct Sample {
  std::string id;
  preproc::FlowVolumeCurve curve;
  Demographics demographics;
  EndpointLabels labels;
  SpiroSummary summary;
};

using SplitFractions = std::array<double, 3>;  // train, val, test

struct Dataset {
  std::size_t t_max = 1024;     // longest allowed valid length
  std::size_t length = 1050;    // T: t_max padded up to a multiple of patch_len
  std::size_t patch_len = 30;
  double dv_l = 0.01;
  std::uint64_t split_seed = 1;
  SplitFractions split{0.8, 0.1, 0.1};
  preproc::Standardizer standardizer;  // fit on the training split of split_seed
  std::vector<Sample> samples;
};

struct PreprocessOptions {
  double dv_l = 0.01;
  std::size_t t_max = 1024;
  std::size_t patch_len = 30;
  double sigma = 1.0;
  std::uint64_t split_seed = 1;
  SplitFractions split{0.8, 0.1, 0.1};
};

struct PreprocessReport {
  std::size_t input = 0;
  std::size_t invalid_code = 0;
  std::size_t degenerate = 0;
  std::size_t qc_dropped = 0;
  std::size_t too_long = 0;
  std::size_t kept = 0;
  std::vector<std::string> messages;  // one line per dropped record
};

/// Acceptability filter, summary + QC, flow-volume conversion. Records whose
/// curve exceeds t_max are dropped and reported, never truncated.
Dataset preprocess_cohort(const std::vector<synth::CohortRecord>& cohort,
                          const PreprocessOptions& opts, PreprocessReport* report = nullptr);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Seeded shuffle of 0..n-1; train = floor(f0 n), val = floor(f1 n), test
/// takes the rest.
Split split_indices(std::size_t n, std::uint64_t seed, const SplitFractions& fractions);

preproc::Standardizer fit_on(const Dataset& ds, const std::vector<std::size_t>& indices);

// Container layout:
//   "SPFD" | u32 version | u64 manifest length | manifest JSON
//   | f32 curve block (n x T, row-major) | metadata JSON array
inline constexpr std::uint32_t kDatasetVersion = 1;

std::string serialize_dataset(const Dataset& ds);
Dataset deserialize_dataset(std::string_view bytes);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

}  // namespace spiro::data
