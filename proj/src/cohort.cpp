#include "crivet/cohort.hpp"

#include <algorithm>
#include <cassert>
#include <charconv>
#include <fstream>
#include <istream>
#include <sstream>

#include "crivet/csv.hpp"
#include "crivet/errors.hpp"

namespace crivet {

const std::string& vaccination_label(VaccinationStatus s) {
  static const std::string labels[] = {
      "Unvaccinated",
      "<21 days after first dose",
      ">=21 days after first dose",
      ">=14 days after second dose",
  };
  return labels[static_cast<int>(s)];
}

void AnalysisRecord::set_level(const std::string& factor, std::string value) {
  for (auto& [name, v] : covariates) {
    if (name == factor) {
      v = std::move(value);
      return;
    }
  }
  covariates.emplace_back(factor, std::move(value));
}

const FactorSpec* CovariateSchema::find(const std::string& name) const {
  for (const auto& f : factors) {
    if (f.name == name) return &f;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Hospital load

TrustLoadIndex TrustLoadIndex::from_records(const std::vector<RawAdmission>& records) {
  TrustLoadIndex index;
  for (const auto& r : records) index.add(r.trust_id, r.admission_date);
  index.finalize();
  return index;
}

void TrustLoadIndex::add(const std::string& trust_id, Day day, std::int64_t count) {
  auto& s = series_[trust_id];
  if (s.daily.empty()) {
    s.first = day;
    s.daily.push_back(count);
    return;
  }
  if (day < s.first) {
    s.daily.insert(s.daily.begin(), std::size_t(s.first - day), 0);
    s.first = day;
  }
  const std::size_t idx = std::size_t(day - s.first);
  if (idx >= s.daily.size()) s.daily.resize(idx + 1, 0);
  s.daily[idx] += count;
  finalized_ = false;
}

std::int64_t TrustLoadIndex::Series::window_sum(Day lo, Day hi) const {
  // Truncate to available days; no padding at the series boundaries.
  const Day last = first + Day(daily.size()) - 1;
  lo = std::max(lo, first);
  hi = std::min(hi, last);
  if (lo > hi) return 0;
  return prefix[std::size_t(hi - first) + 1] - prefix[std::size_t(lo - first)];
}

void TrustLoadIndex::finalize() {
  for (auto& [trust, s] : series_) {
    (void)trust;
    s.prefix.assign(s.daily.size() + 1, 0);
    for (std::size_t i = 0; i < s.daily.size(); ++i) {
      s.prefix[i + 1] = s.prefix[i] + s.daily[i];
    }
    s.busiest_week = 0;
    const Day last = s.first + Day(s.daily.size()) - 1;
    for (Day d = s.first; d <= last; ++d) {
      s.busiest_week = std::max(s.busiest_week, s.window_sum(d - 3, d + 3));
    }
  }
  finalized_ = true;
}

std::string load_band(std::int64_t window_sum, std::int64_t busiest_week) {
  // Bands in percent: [0,20], (20,40], (40,60], (60,80], (80,90], (90,100].
  // Integer comparisons keep the boundaries exact.
  const std::int64_t pct100 = window_sum * 100;
  if (pct100 <= 20 * busiest_week) return "0-20";
  if (pct100 <= 40 * busiest_week) return "20-40";
  if (pct100 <= 60 * busiest_week) return "40-60";
  if (pct100 <= 80 * busiest_week) return "60-80";
  if (pct100 <= 90 * busiest_week) return "80-90";
  return "90-100";
}

std::pair<double, std::string> TrustLoadIndex::load_at(const std::string& trust_id,
                                                       Day admission) const {
  assert(finalized_);
  auto it = series_.find(trust_id);
  if (it == series_.end() || it->second.busiest_week <= 0) {
    throw ValidationError("unknown trust id: " + trust_id);
  }
  const auto& s = it->second;
  const std::int64_t win = s.window_sum(admission - 3, admission + 3);
  return {double(win) / double(s.busiest_week), load_band(win, s.busiest_week)};
}

// ---------------------------------------------------------------------------
// Covariate derivation

VaccinationStatus derive_vaccination_status(std::optional<Day> dose1,
                                            std::optional<Day> dose2,
                                            Day admission) {
  if (dose1 && dose2 && *dose2 < *dose1) {
    throw ValidationError("dose2 date precedes dose1 date");
  }
  if (dose2 && admission - *dose2 >= 14) return VaccinationStatus::SecondDose14dPlus;
  if (dose1 && admission - *dose1 >= 21) return VaccinationStatus::FirstDose21dPlus;
  if (dose1 && admission >= *dose1) return VaccinationStatus::FirstDoseUnder21d;
  return VaccinationStatus::Unvaccinated;
}

std::string age_band(int age_years) {
  if (age_years < 0) throw ValidationError("negative age");
  if (age_years <= 14) return "0-14";
  if (age_years <= 24) return "15-24";
  if (age_years <= 44) return "25-44";
  if (age_years <= 64) return "45-64";
  if (age_years <= 74) return "65-74";
  if (age_years <= 84) return "75-84";
  return "85+";
}

std::string cci_band(int cci_score) {
  if (cci_score < 0) throw ValidationError("negative CCI score");
  if (cci_score == 0) return "0";
  if (cci_score <= 2) return "1-2";
  if (cci_score <= 4) return "3-4";
  return "5+";
}

std::vector<std::pair<std::string, std::string>> band_covariates(const RawAdmission& raw) {
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("age_band", age_band(raw.age_years));
  out.emplace_back("sex", raw.sex);
  out.emplace_back("ethnicity", raw.ethnicity);
  out.emplace_back("region", raw.region);
  out.emplace_back("imd_quintile", raw.imd_quintile);
  out.emplace_back("cci_band", cci_band(raw.cci_score));
  out.emplace_back("admission_month", month_label(raw.admission_date));
  return out;
}

// ---------------------------------------------------------------------------
// Censoring rules

RawAdmission reclassify_palliative(const RawAdmission& raw) {
  if (raw.outcome_kind != OutcomeKind::Discharged || !raw.post_discharge_death_date) {
    return raw;
  }
  if (!raw.outcome_date) throw ValidationError("discharge without outcome date");
  if (*raw.post_discharge_death_date < *raw.outcome_date) {
    throw ValidationError("post-discharge death precedes discharge");
  }
  RawAdmission out = raw;
  if (*raw.post_discharge_death_date - *raw.outcome_date <= 14) {
    out.outcome_kind = OutcomeKind::DiedInHospital;
    out.outcome_date = raw.post_discharge_death_date;
    out.post_discharge_death_date.reset();
  }
  return out;
}

AnalysisRecord apply_censoring(const RawAdmission& raw, Day extraction) {
  if (extraction < raw.admission_date) {
    throw ValidationError("extraction date precedes admission");
  }
  const Day origin = raw.specimen_date.value_or(raw.admission_date);
  const Day horizon = origin + 90;

  AnalysisRecord rec;
  rec.subject_id = raw.subject_id;
  double time = 0.0;
  Event event = Event::Censored;

  if (raw.outcome_kind == OutcomeKind::StillInHospital) {
    time = double(std::min(extraction, horizon) - raw.admission_date);
    event = Event::Censored;
  } else if (raw.outcome_date && *raw.outcome_date <= horizon) {
    time = double(*raw.outcome_date - raw.admission_date);
    event = raw.outcome_kind == OutcomeKind::DiedInHospital ? Event::Death : Event::Discharge;
  } else {
    time = double(horizon - raw.admission_date);
    event = Event::Censored;
  }
  rec.time_days = std::max(time, 0.0);
  rec.event = event;
  return rec;
}

// ---------------------------------------------------------------------------
// Ingestion

std::optional<std::string> validate_raw(const RawAdmission& raw) {
  if (raw.sex.empty() || raw.ethnicity.empty() || raw.region.empty() ||
      raw.imd_quintile.empty()) {
    return reject::kMissingDemographic;
  }
  if (raw.age_years < 0 || raw.cci_score < 0) return reject::kMissingDemographic;
  if (raw.specimen_date) {
    const Day offset = *raw.specimen_date - raw.admission_date;
    if (offset < -14 || offset > 1) return reject::kOutOfWindowSpecimen;
  }
  const bool has_outcome = raw.outcome_kind != OutcomeKind::StillInHospital;
  if (has_outcome && !raw.outcome_date) return reject::kInconsistentDates;
  if (!has_outcome && raw.outcome_date) return reject::kInconsistentDates;
  if (raw.outcome_date && *raw.outcome_date < raw.admission_date) {
    return reject::kInconsistentDates;
  }
  if (raw.dose2_date && !raw.dose1_date) return reject::kInconsistentDates;
  if (raw.dose1_date && raw.dose2_date && *raw.dose2_date < *raw.dose1_date) {
    return reject::kInconsistentDates;
  }
  if (raw.post_discharge_death_date) {
    if (raw.outcome_kind != OutcomeKind::Discharged || !raw.outcome_date ||
        *raw.post_discharge_death_date < *raw.outcome_date) {
      return reject::kInconsistentDates;
    }
  }
  return std::nullopt;
}

namespace {

const std::vector<std::string> kCohortHeader = {
    "subject_id",     "admission_date", "specimen_date",
    "onset_date",     "outcome_kind",   "outcome_date",
    "post_discharge_death_date", "dose1_date", "dose2_date",
    "age_years",      "sex",            "ethnicity",
    "region",         "imd_quintile",   "cci_score",
    "trust_id"};

bool parse_optional_day(const std::string& field, std::optional<Day>& out) {
  if (field.empty()) {
    out.reset();
    return true;
  }
  const auto day = parse_day(field);
  if (!day) return false;
  out = *day;
  return true;
}

bool parse_int_field(const std::string& field, int& out) {
  if (field.empty()) return false;
  const char* begin = field.data();
  const char* end = begin + field.size();
  const auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc() && res.ptr == end;
}

// Returns nullopt on a malformed row (unparseable field / bad shape).
std::optional<RawAdmission> parse_cohort_row(const std::vector<std::string>& f) {
  if (f.size() != kCohortHeader.size()) return std::nullopt;
  RawAdmission raw;
  raw.subject_id = f[0];
  if (raw.subject_id.empty()) return std::nullopt;
  const auto admission = parse_day(f[1]);
  if (!admission) return std::nullopt;
  raw.admission_date = *admission;
  if (!parse_optional_day(f[2], raw.specimen_date)) return std::nullopt;
  if (!parse_optional_day(f[3], raw.onset_date)) return std::nullopt;
  if (f[4] == "DiedInHospital") {
    raw.outcome_kind = OutcomeKind::DiedInHospital;
  } else if (f[4] == "Discharged") {
    raw.outcome_kind = OutcomeKind::Discharged;
  } else if (f[4] == "StillInHospital") {
    raw.outcome_kind = OutcomeKind::StillInHospital;
  } else {
    return std::nullopt;
  }
  if (!parse_optional_day(f[5], raw.outcome_date)) return std::nullopt;
  if (!parse_optional_day(f[6], raw.post_discharge_death_date)) return std::nullopt;
  if (!parse_optional_day(f[7], raw.dose1_date)) return std::nullopt;
  if (!parse_optional_day(f[8], raw.dose2_date)) return std::nullopt;
  if (f[9].empty()) {
    raw.age_years = -1;  // missing demographic, caught by validate_raw
  } else if (!parse_int_field(f[9], raw.age_years)) {
    return std::nullopt;
  }
  raw.sex = f[10];
  raw.ethnicity = f[11];
  raw.region = f[12];
  raw.imd_quintile = f[13];
  if (f[14].empty()) {
    raw.cci_score = -1;
  } else if (!parse_int_field(f[14], raw.cci_score)) {
    return std::nullopt;
  }
  raw.trust_id = f[15];
  if (raw.trust_id.empty()) return std::nullopt;
  return raw;
}

}  // namespace

std::int64_t RejectionReport::total_rejections() const {
  std::int64_t total = 0;
  for (const auto& [reason, count] : counts) {
    if (reason.rfind("warning:", 0) != 0) total += count;
  }
  return total;
}

IngestResult ingest_cohort(std::istream& in) {
  IngestResult result;
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty cohort stream");
  const auto header = split_csv_line(line);
  if (header != kCohortHeader) {
    throw ValidationError("cohort CSV header does not match the expected schema");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    auto raw = parse_cohort_row(fields);
    if (!raw) {
      result.report.bump(reject::kMalformedRow);
      continue;
    }
    if (auto reason = validate_raw(*raw)) {
      result.report.bump(*reason);
      continue;
    }
    result.records.push_back(std::move(*raw));
  }
  if (in.bad()) throw IoError("read failure on cohort stream");
  return result;
}

IngestResult ingest_cohort_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open cohort file: " + path);
  return ingest_cohort(in);
}

PreprocessResult preprocess_cohort(const std::vector<RawAdmission>& raws,
                                   const PreprocessOptions& opts) {
  PreprocessResult result;
  std::vector<RawAdmission> cleaned;
  cleaned.reserve(raws.size());
  for (const auto& raw : raws) {
    cleaned.push_back(reclassify_palliative(raw));
  }
  const TrustLoadIndex index = TrustLoadIndex::from_records(cleaned);

  result.records.reserve(cleaned.size());
  for (const auto& raw : cleaned) {
    AnalysisRecord rec = apply_censoring(raw, opts.extraction);
    if (!raw.specimen_date) result.report.bump(reject::kWarnMissingSpecimen);
    rec.covariates = band_covariates(raw);
    rec.set_level("vaccination_status",
                  vaccination_label(derive_vaccination_status(
                      raw.dose1_date, raw.dose2_date, raw.admission_date)));
    const auto [fraction, band] = index.load_at(raw.trust_id, raw.admission_date);
    rec.set_level("hospital_load", band);
    rec.set_level("load_fraction", format_double(fraction));
    if (opts.derive_onset_month) {
      rec.set_level("onset_month",
                    raw.onset_date ? month_label(*raw.onset_date) : std::string());
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

void write_rejection_report(const RejectionReport& report, const std::string& path) {
  CsvWriter out(path);
  out.row({"reason", "count"});
  for (const auto& [reason, count] : report.counts) {
    out.row({reason, std::to_string(count)});
  }
}

}  // namespace crivet
