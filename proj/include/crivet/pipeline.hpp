#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crivet/aalen_johansen.hpp"
#include "crivet/cohort.hpp"
#include "crivet/fine_gray.hpp"
#include "crivet/sensitivity.hpp"
#include "crivet/synthcohort.hpp"

namespace crivet {

// One serialisable run description; CLI flags override file values.
struct RunConfig {
  std::string input;
  std::string out_dir = ".";
  double horizon = 90.0;
  std::optional<Day> extraction;
  std::vector<std::string> group_by = {"admission_month"};

  // Regression schema. "month" and "vaccination" presets mirror the two
  // published analyses; "custom" uses the explicit lists below.
  std::string preset = "month";
  std::string month_source = "admission";  // admission | onset
  std::vector<std::string> main_effects;
  std::vector<std::string> stratum_factors;
  std::vector<std::pair<std::string, std::string>> references;

  int bootstrap_b = 500;
  std::vector<int> shifts = {0, 1, 2, 3, 4};
  std::uint64_t seed = 0;
  int n_threads = 0;

  // Resolved schema factor lists after applying the preset.
  std::vector<std::string> resolved_main_effects() const;
  std::vector<std::string> resolved_strata() const;
};

RunConfig run_config_from_json_file(const std::string& path);
RunConfig run_config_from_json_string(const std::string& text);

// Analysis-table round trip (the preprocess output consumed by cif/fit).
void write_analysis_csv(const std::vector<AnalysisRecord>& records, const std::string& path);
std::vector<AnalysisRecord> read_analysis_csv(const std::string& path);

// Display formatting shared by the emitted tables.
std::string format_percent_ci(double risk, double lo, double hi);     // "40.3% (39.4 - 41.3%)"
std::string format_days_ci(double days, double lo, double hi);        // "5.6 (5.5 - 5.6)"

// Commands. Each throws IoError / ValidationError / NumericalError; the CLI
// maps these to exit codes 1 / 2 / 3.
void run_preprocess(const RunConfig& cfg);
void run_cif(const RunConfig& cfg);
void run_fit(const RunConfig& cfg);
void run_sensitivity_cmd(const RunConfig& cfg);
void run_simulate(const RunConfig& cfg, const std::string& spec_path);

// Pieces exposed for tests and for the benchmark driver.
struct GroupSummary {
  std::string group;
  bool empty = false;
  double n_subjects = 0.0;
  RiskAtHorizon hfr;
  bool has_deaths = false, has_discharges = false;
  MedianLosEstimate median_death, median_discharge;
};

std::vector<GroupSummary> grouped_cif_summaries(const std::vector<AnalysisRecord>& records,
                                                const RunConfig& cfg);

void write_hr_table_csv(const HazardRatioTable& table, const std::string& path);
void write_model_json(const FgModel& model, const HazardRatioTable& table,
                      const std::string& path);
void write_curves_csv(const AjEstimate& est, const std::string& path);

}  // namespace crivet
