#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crivet/cohort.hpp"
#include "crivet/event_table.hpp"
#include "crivet/rng.hpp"

namespace crivet {

// Factor sampled per subject. The names age_band, cci_band and
// vaccination_status are rendered back into raw fields (an age in the band,
// a CCI score, dose dates consistent with the category); other factors pass
// through as labels.
struct GenFactor {
  std::string name;
  std::vector<std::string> levels;
  std::vector<double> probs;  // same length, sums to 1
};

// Synthetic-cohort parameters. Events follow the indirect-CIF competing
// risks model: with theta = exp(x'beta_death),
//   P(cause 1 | x)  = 1 - (1 - p_mix)^theta
//   F1(t | x)       = 1 - (1 - p_mix (1 - e^-t))^theta
// so beta_death is exactly the true subdistribution log-hazard-ratio vector.
// Cause-2 times are exponential with rate exp(x'beta_discharge). Times are
// multiplied by day_scale afterwards; calendar rendering is cosmetic.
struct CohortSpec {
  std::int64_t n = 0;
  std::uint64_t seed = 0;
  double p_mix = 0.3;
  double day_scale = 10.0;
  double censor_max = 0.0;  // uniform censoring bound in days; 0 = none
  std::vector<std::pair<std::string, double>> beta_death;      // "factor=level" -> coef
  std::vector<std::pair<std::string, double>> beta_discharge;
  std::vector<GenFactor> factors;
  int trust_count = 3;
  Day admission_start = make_day(2020, 3, 1);
  int admission_window_days = 180;
  int onset_lag_min = 2;
  int onset_lag_max = 6;
  double onset_missing_prob = 0.0;
  // Optional admission clustering so trust-load fixtures have a real peak.
  double peak_mass = 0.0;
  int peak_offset_days = 0;
  int peak_window_days = 7;

  void validate() const;  // throws ValidationError on contract violations
};

CohortSpec cohort_spec_from_json_file(const std::string& path);
CohortSpec cohort_spec_from_json_string(const std::string& text);

// Ground-truth ledger: latent event time/cause before censoring, the applied
// censor time (uniform bound and 90-day horizon combined), and the sampled
// factor levels.
struct TruthRecord {
  std::string subject_id;
  double true_time = 0.0;  // day-scaled
  int true_cause = 1;
  double censor_time = 0.0;
  std::vector<std::pair<std::string, std::string>> levels;
};

struct GeneratedCohort {
  std::vector<RawAdmission> admissions;
  std::vector<TruthRecord> truth;
};

// One latent draw. Exposed for the distributional tests.
std::pair<double, int> sample_competing_event(Rng& rng, double lp_death,
                                              double lp_discharge, const CohortSpec& spec);

// Deterministic under (spec, seed): subject i draws only from substream
// (seed, i), so sharded parallel generation equals serial generation.
GeneratedCohort generate_cohort(const CohortSpec& spec, int n_threads = 0);

// Estimator-ready records straight from the truth ledger (pre-rendered
// continuous times, observed = min(event, censor)).
std::vector<AnalysisRecord> truth_to_records(const std::vector<TruthRecord>& truth);

void write_cohort_csv(const std::vector<RawAdmission>& admissions, const std::string& path);
void write_truth_csv(const std::vector<TruthRecord>& truth, const CohortSpec& spec,
                     const std::string& path);

}  // namespace crivet
