#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace molgnn {

constexpr double kDefaultRtZ = 2.58;

struct RtCalibration {
  double mu = 0.0;
  double sigma = 0.0;
  double z = kDefaultRtZ;
  double lower = 0.0;
  double upper = 0.0;
};

/// Bounds mu +/- z*sigma from residuals (experimental minus predicted, in
/// minutes) using the population standard deviation. Needs two residuals.
RtCalibration calibrate(const std::vector<double>& residuals, double z = kDefaultRtZ);

/// Calibration from known bounds (mu is their midpoint, sigma is unknown).
RtCalibration calibration_from_bounds(double lower, double upper);

struct Candidate {
  std::string smiles;
  double external_score = 0.0;
  double predicted_rt = 0.0;
  bool is_true_identity = false;
};

struct CandidateVerdict {
  std::string smiles;
  double external_score = 0.0;
  double predicted_rt = 0.0;
  double rt_difference = 0.0;  // analyte_rt - predicted_rt
  bool filtered_out = false;
  int rank = 0;  // 1-based among kept candidates, 0 when filtered out
  bool is_true_identity = false;
};

/// One verdict per candidate, ordered by external score (descending, stable).
/// Differences exactly on a bound are kept.
std::vector<CandidateVerdict> apply_filter(const RtCalibration& calibration, double analyte_rt,
                                           const std::vector<Candidate>& candidates);

struct Analyte {
  std::string id;
  double rt = 0.0;
  std::vector<Candidate> candidates;
};

struct AnalyteVerdicts {
  std::string id;
  double rt = 0.0;
  std::vector<CandidateVerdict> verdicts;
};

struct AnalyteSummary {
  std::string id;
  std::size_t total = 0;
  std::size_t filtered = 0;
  std::size_t kept = 0;
  double filtered_fraction = 0.0;
  bool false_negative = false;  // the true identity was filtered out
};

struct FilterReport {
  std::vector<AnalyteSummary> analytes;
  std::size_t total = 0;
  std::size_t filtered = 0;
  double filtered_fraction = 0.0;
  std::vector<std::string> false_negatives;  // analyte ids
};

FilterReport filter_report(const std::vector<AnalyteVerdicts>& analytes);

/// Candidate CSV: analyte_id, analyte_rt, candidate_smiles, external_score,
/// plus optional predicted_rt and is_true columns. Analytes keep the order
/// of their first row.
std::vector<Analyte> read_candidates(const std::filesystem::path& path);

/// Verdict CSV with every CandidateVerdict field, one row per candidate.
void write_verdicts_csv(const std::filesystem::path& path, const std::vector<AnalyteVerdicts>& analytes);

}  // namespace molgnn
