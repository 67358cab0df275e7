#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crivet/dates.hpp"

namespace crivet {

enum class OutcomeKind { DiedInHospital, Discharged, StillInHospital };

enum class Event : int { Censored = 0, Death = 1, Discharge = 2 };

enum class VaccinationStatus {
  Unvaccinated,
  FirstDoseUnder21d,
  FirstDose21dPlus,
  SecondDose14dPlus,
};

const std::string& vaccination_label(VaccinationStatus s);

// One linked hospital admission as it arrives from the input CSV, before any
// censoring or covariate derivation.
struct RawAdmission {
  std::string subject_id;
  Day admission_date = 0;
  std::optional<Day> specimen_date;  // first positive test; may be missing upstream
  std::optional<Day> onset_date;
  OutcomeKind outcome_kind = OutcomeKind::StillInHospital;
  std::optional<Day> outcome_date;
  std::optional<Day> post_discharge_death_date;
  std::optional<Day> dose1_date;
  std::optional<Day> dose2_date;
  int age_years = 0;
  std::string sex, ethnicity, region, imd_quintile;
  int cci_score = 0;
  std::string trust_id;
};

// Estimator-ready record: follow-up time in days from admission, terminal
// event, and the derived factor levels. Covariates keep insertion order.
struct AnalysisRecord {
  std::string subject_id;
  double time_days = 0.0;
  Event event = Event::Censored;
  std::vector<std::pair<std::string, std::string>> covariates;
  std::string stratum;
  double weight = 1.0;

  const std::string* level(const std::string& factor) const {
    for (const auto& [name, value] : covariates) {
      if (name == factor) return &value;
    }
    return nullptr;
  }
  void set_level(const std::string& factor, std::string value);
};

struct FactorSpec {
  std::string name;
  std::vector<std::string> levels;  // ordered; reference must be a member
  std::string reference;
};

struct CovariateSchema {
  std::vector<FactorSpec> factors;
  std::vector<std::string> stratum_factors;  // subset of factor names

  const FactorSpec* find(const std::string& name) const;
};

// Daily admission counts per trust plus the precomputed busiest 7-day window
// total, supporting the hospital-load proxy.
class TrustLoadIndex {
public:
  static TrustLoadIndex from_records(const std::vector<RawAdmission>& records);

  void add(const std::string& trust_id, Day day, std::int64_t count = 1);
  void finalize();

  // Fraction of the busiest week represented by the 7-day window centred on
  // `admission` (3 days before through 3 after), and its band label.
  std::pair<double, std::string> load_at(const std::string& trust_id, Day admission) const;

  bool has_trust(const std::string& trust_id) const { return series_.count(trust_id) > 0; }

private:
  struct Series {
    Day first = 0;
    std::vector<std::int64_t> daily;
    std::vector<std::int64_t> prefix;   // prefix[i] = sum of daily[0..i)
    std::int64_t busiest_week = 0;
    std::int64_t window_sum(Day lo, Day hi) const;  // inclusive day range
  };
  std::map<std::string, Series> series_;
  bool finalized_ = false;
};

std::string load_band(std::int64_t window_sum, std::int64_t busiest_week);

// Vaccination category at admission, evaluated most-protected-first.
// A dose dated after admission counts as not yet received.
VaccinationStatus derive_vaccination_status(std::optional<Day> dose1,
                                            std::optional<Day> dose2,
                                            Day admission);

std::string age_band(int age_years);
std::string cci_band(int cci_score);

// Demographic and banded factor levels for one admission, excluding the
// load and vaccination factors (which need the index / dose dates).
std::vector<std::pair<std::string, std::string>> band_covariates(const RawAdmission& raw);

// Deaths within 14 days of discharge are recorded as in-hospital deaths at
// the date of death (palliative-discharge correction). Other records pass
// through unchanged.
RawAdmission reclassify_palliative(const RawAdmission& raw);

// 90-day horizon from the first positive specimen (admission date when the
// specimen date is missing). Returns the record with time/event only; the
// caller attaches covariates.
AnalysisRecord apply_censoring(const RawAdmission& raw, Day extraction);

struct RejectionReport {
  std::map<std::string, std::int64_t> counts;  // reason -> count

  void bump(const std::string& reason) { ++counts[reason]; }
  std::int64_t total_rejections() const;  // excludes "warning: ..." rows
};

// Reason strings used by validation; tests and the report format pin them.
namespace reject {
inline const std::string kMalformedRow = "malformed row";
inline const std::string kInconsistentDates = "inconsistent dates";
inline const std::string kOutOfWindowSpecimen = "out-of-window specimen date";
inline const std::string kMissingDemographic = "missing demographic";
inline const std::string kWarnMissingSpecimen = "warning: missing specimen date";
}  // namespace reject

// Returns a failure reason, or nullopt when the record satisfies every
// RawAdmission invariant.
std::optional<std::string> validate_raw(const RawAdmission& raw);

struct IngestResult {
  std::vector<RawAdmission> records;
  RejectionReport report;
};

// Parse + validate a cohort CSV stream. Malformed or invalid rows are counted
// per reason and never abort the batch.
IngestResult ingest_cohort(std::istream& in);
IngestResult ingest_cohort_file(const std::string& path);

struct PreprocessOptions {
  Day extraction = make_day(2262, 4, 1);  // effectively "no extraction cutoff"
  bool derive_onset_month = true;
};

struct PreprocessResult {
  std::vector<AnalysisRecord> records;
  RejectionReport report;  // carries warnings (e.g. missing specimen date)
};

// Full derivation: palliative reclassification, covariate banding, load
// proxy, vaccination status, censoring. Record order follows input order.
PreprocessResult preprocess_cohort(const std::vector<RawAdmission>& raws,
                                   const PreprocessOptions& opts = {});

void write_rejection_report(const RejectionReport& report, const std::string& path);

}  // namespace crivet
