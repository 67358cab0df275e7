#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crivet/cohort.hpp"
#include "crivet/fine_gray.hpp"

namespace crivet {

// Epidemic-phase-bias probe: onset dates of fatal cases are moved backwards
// by c days and the month-of-onset factor is recomputed; admission-based
// event times are untouched.
struct ShiftSpec {
  std::vector<int> shifts = {0, 1, 2, 3, 4};
  std::string month_factor = "onset_month";

  void validate() const;  // distinct, non-negative, must contain 0
};

// Shifts onset for records whose final outcome (after the palliative
// reclassification) is death; everything else passes through unchanged.
std::vector<RawAdmission> apply_phase_shift(const std::vector<RawAdmission>& cohort, int c);

struct SensitivityFitConfig {
  std::vector<std::string> main_effects;  // must include the onset-month factor
  std::vector<std::string> stratum_factors;
  std::vector<std::pair<std::string, std::string>> references;  // factor -> ref level
  PreprocessOptions preprocess;
  FgOptions fit;
};

struct SensitivityResult {
  struct ShiftFit {
    int shift_days = 0;
    HazardRatioTable table;
    FgModel model;
  };
  std::vector<ShiftFit> fits;  // ascending shift order
  std::int64_t excluded_no_onset = 0;
};

// Discover a schema from records: per-factor levels observed in the data
// (sorted), with the requested or conventional reference level.
CovariateSchema discover_schema(
    const std::vector<AnalysisRecord>& records,
    const std::vector<std::string>& main_effects,
    const std::vector<std::string>& stratum_factors,
    const std::vector<std::pair<std::string, std::string>>& references);

// One full preprocess + fit per shift. Records without an onset date are
// excluded up front (counted once); a fit failure is reported with the
// offending shift attached.
SensitivityResult run_sensitivity(const std::vector<RawAdmission>& cohort,
                                  const SensitivityFitConfig& config,
                                  const ShiftSpec& spec);

}  // namespace crivet
