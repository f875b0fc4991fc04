#include "molgnn/rt_filter.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>

#include "molgnn/csv.hpp"
#include "molgnn/error.hpp"

namespace molgnn {
namespace {

double parse_number(const std::string& text, const std::string& what, std::size_t line) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value))
    throw Error(ErrorCode::ConfigError, what + " on row " + std::to_string(line) + " is not a number: '" + text + "'");
  return value;
}

std::string number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

RtCalibration calibrate(const std::vector<double>& residuals, double z) {
  if (residuals.size() < 2)
    throw Error(ErrorCode::TooFewResiduals, "calibration needs at least 2 residuals, got " + std::to_string(residuals.size()));
  if (!(z > 0.0) || !std::isfinite(z)) throw Error(ErrorCode::ConfigError, "z must be positive");
  for (double r : residuals)
    if (!std::isfinite(r)) throw Error(ErrorCode::ConfigError, "residuals must be finite");
  const double n = static_cast<double>(residuals.size());
  RtCalibration c;
  c.z = z;
  c.mu = std::accumulate(residuals.begin(), residuals.end(), 0.0) / n;
  double ss = 0.0;
  for (double r : residuals) ss += (r - c.mu) * (r - c.mu);
  c.sigma = std::sqrt(ss / n);
  c.lower = c.mu - z * c.sigma;
  c.upper = c.mu + z * c.sigma;
  return c;
}

RtCalibration calibration_from_bounds(double lower, double upper) {
  if (!(lower <= upper)) throw Error(ErrorCode::ConfigError, "lower bound exceeds upper bound");
  RtCalibration c;
  c.lower = lower;
  c.upper = upper;
  c.mu = 0.5 * (lower + upper);
  c.sigma = (upper - lower) / (2.0 * c.z);
  return c;
}

std::vector<CandidateVerdict> apply_filter(const RtCalibration& calibration, double analyte_rt,
                                           const std::vector<Candidate>& candidates) {
  std::vector<CandidateVerdict> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (!std::isfinite(c.predicted_rt)) throw Error(ErrorCode::ConfigError, "predicted RT of " + c.smiles + " is not finite");
    CandidateVerdict v;
    v.smiles = c.smiles;
    v.external_score = c.external_score;
    v.predicted_rt = c.predicted_rt;
    v.rt_difference = analyte_rt - c.predicted_rt;
    v.filtered_out = v.rt_difference < calibration.lower || v.rt_difference > calibration.upper;
    v.is_true_identity = c.is_true_identity;
    out.push_back(std::move(v));
  }
  std::stable_sort(out.begin(), out.end(), [](const CandidateVerdict& a, const CandidateVerdict& b) {
    return a.external_score > b.external_score;
  });
  int rank = 0;
  for (auto& v : out) v.rank = v.filtered_out ? 0 : ++rank;
  return out;
}

FilterReport filter_report(const std::vector<AnalyteVerdicts>& analytes) {
  FilterReport report;
  for (const auto& a : analytes) {
    AnalyteSummary s;
    s.id = a.id;
    s.total = a.verdicts.size();
    for (const auto& v : a.verdicts) {
      if (v.filtered_out) ++s.filtered;
      if (v.filtered_out && v.is_true_identity) s.false_negative = true;
    }
    s.kept = s.total - s.filtered;
    s.filtered_fraction = s.total ? static_cast<double>(s.filtered) / static_cast<double>(s.total) : 0.0;
    if (s.false_negative) report.false_negatives.push_back(s.id);
    report.total += s.total;
    report.filtered += s.filtered;
    report.analytes.push_back(std::move(s));
  }
  report.filtered_fraction =
      report.total ? static_cast<double>(report.filtered) / static_cast<double>(report.total) : 0.0;
  return report;
}

std::vector<Analyte> read_candidates(const std::filesystem::path& path) {
  const CsvTable csv = read_csv(path.string());
  auto need = [&](const char* name) {
    const int at = csv.column(name);
    if (at < 0) throw Error(ErrorCode::MissingColumn, std::string("candidate file lacks column '") + name + "'");
    return static_cast<std::size_t>(at);
  };
  const std::size_t id_at = need("analyte_id"), rt_at = need("analyte_rt"), smiles_at = need("candidate_smiles"),
                    score_at = need("external_score");
  const int pred_at = csv.column("predicted_rt");
  const int truth_at = csv.column("is_true");

  std::vector<Analyte> analytes;
  std::map<std::string, std::size_t> index;
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto& row = csv.rows[r];
    auto cell = [&](std::size_t at) { return at < row.size() ? row[at] : std::string(); };
    const std::string id = cell(id_at);
    const double rt = parse_number(cell(rt_at), "analyte_rt", r + 1);
    auto [it, fresh] = index.try_emplace(id, analytes.size());
    if (fresh) analytes.push_back({id, rt, {}});
    Analyte& a = analytes[it->second];
    if (a.rt != rt) throw Error(ErrorCode::ConfigError, "analyte " + id + " has conflicting retention times");
    Candidate c;
    c.smiles = cell(smiles_at);
    c.external_score = parse_number(cell(score_at), "external_score", r + 1);
    if (pred_at >= 0 && !cell(static_cast<std::size_t>(pred_at)).empty())
      c.predicted_rt = parse_number(cell(static_cast<std::size_t>(pred_at)), "predicted_rt", r + 1);
    if (truth_at >= 0) {
      const std::string t = cell(static_cast<std::size_t>(truth_at));
      c.is_true_identity = t == "1" || t == "true" || t == "yes" || t == "Yes";
    }
    a.candidates.push_back(std::move(c));
  }
  if (analytes.empty()) throw Error(ErrorCode::NoValidRows, "candidate file has no rows");
  return analytes;
}

void write_verdicts_csv(const std::filesystem::path& path, const std::vector<AnalyteVerdicts>& analytes) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  write_csv_row(out, {"analyte_id", "analyte_rt", "candidate_smiles", "external_score", "predicted_rt",
                      "rt_difference", "filtered_out", "rank", "is_true"});
  for (const auto& a : analytes)
    for (const auto& v : a.verdicts)
      write_csv_row(out, {a.id, number(a.rt), v.smiles, number(v.external_score), number(v.predicted_rt),
                          number(v.rt_difference), v.filtered_out ? "yes" : "no", std::to_string(v.rank),
                          v.is_true_identity ? "1" : "0"});
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

}  // namespace molgnn
