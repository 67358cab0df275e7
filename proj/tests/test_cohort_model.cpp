#include "doctest.h"

#include <algorithm>
#include <random>
#include <sstream>

#include "crivet/cohort.hpp"
#include "crivet/errors.hpp"
#include "testutil.hpp"

using namespace crivet;

namespace {

RawAdmission base_raw() {
  RawAdmission raw;
  raw.subject_id = "X1";
  raw.admission_date = make_day(2021, 3, 10);
  raw.specimen_date = raw.admission_date;
  raw.outcome_kind = OutcomeKind::StillInHospital;
  raw.age_years = 60;
  raw.sex = "Male";
  raw.ethnicity = "White";
  raw.region = "London";
  raw.imd_quintile = "3";
  raw.cci_score = 1;
  raw.trust_id = "T1";
  return raw;
}

}  // namespace

TEST_CASE("vaccination status: category boundaries") {
  const Day adm = make_day(2021, 6, 1);

  CHECK(derive_vaccination_status(adm - 14, {}, adm) == VaccinationStatus::FirstDoseUnder21d);
  CHECK(derive_vaccination_status({}, {}, adm) == VaccinationStatus::Unvaccinated);
  CHECK(derive_vaccination_status(adm - 30, adm - 14, adm) ==
        VaccinationStatus::SecondDose14dPlus);

  // Enumerated decision table over dose offsets 0..30 days before admission.
  for (int off1 = 0; off1 <= 30; ++off1) {
    const VaccinationStatus got = derive_vaccination_status(adm - off1, {}, adm);
    const VaccinationStatus want = off1 >= 21 ? VaccinationStatus::FirstDose21dPlus
                                              : VaccinationStatus::FirstDoseUnder21d;
    CHECK(got == want);
    for (int off2 = 0; off2 <= off1; ++off2) {
      const VaccinationStatus got2 = derive_vaccination_status(adm - off1, adm - off2, adm);
      VaccinationStatus want2;
      if (off2 >= 14) {
        want2 = VaccinationStatus::SecondDose14dPlus;
      } else if (off1 >= 21) {
        want2 = VaccinationStatus::FirstDose21dPlus;
      } else {
        want2 = VaccinationStatus::FirstDoseUnder21d;
      }
      CHECK(got2 == want2);
    }
  }

  // Doses after admission do not count yet.
  CHECK(derive_vaccination_status(adm + 1, {}, adm) == VaccinationStatus::Unvaccinated);
  CHECK(derive_vaccination_status(adm + 1, adm + 30, adm) == VaccinationStatus::Unvaccinated);
  CHECK_THROWS_AS(derive_vaccination_status(adm - 5, adm - 10, adm), ValidationError);
}

TEST_CASE("vaccination status: protection is monotone in admission date") {
  const Day dose1 = make_day(2021, 1, 10);
  const Day dose2 = make_day(2021, 2, 20);
  int prev = 0;
  for (Day adm = dose1 - 10; adm <= dose2 + 60; ++adm) {
    const int cat = int(derive_vaccination_status(dose1, dose2, adm));
    CHECK(cat >= prev);
    prev = cat;
  }
}

TEST_CASE("hospital load: brute-force window oracle on a crafted series") {
  TrustLoadIndex index;
  std::map<Day, std::int64_t> series;
  const Day start = make_day(2020, 11, 1);
  Rng rng(99);
  for (int d = 0; d < 60; ++d) {
    const std::int64_t count = std::int64_t(rng.below(12));
    if (count > 0) {
      index.add("T9", start + d, count);
      series[start + d] += count;
    }
  }
  index.add("T9", start + 30, 1);  // ensure the query day itself has an admission
  series[start + 30] += 1;
  index.finalize();

  const std::int64_t busiest = testutil::busiest_week_oracle(series);
  for (int d = 0; d < 60; ++d) {
    const auto [fraction, band] = index.load_at("T9", start + d);
    const std::int64_t win = testutil::window_sum_oracle(series, start + d);
    CHECK(fraction == doctest::Approx(double(win) / double(busiest)).epsilon(1e-12));
    CHECK(band == load_band(win, busiest));
  }
}

TEST_CASE("hospital load: worked example and band edges") {
  // 45 admissions in the query week against a busiest week of 100.
  TrustLoadIndex index;
  const Day t0 = make_day(2021, 1, 1);
  for (int d = 0; d < 7; ++d) index.add("A", t0 + d, d == 3 ? 3 : 7);       // 45 in week 1
  for (int d = 20; d < 27; ++d) index.add("A", t0 + d, d == 23 ? 16 : 14);  // 100
  index.finalize();
  const auto [fraction, band] = index.load_at("A", t0 + 3);
  CHECK(fraction == doctest::Approx(0.45));
  CHECK(band == "40-60");
  CHECK(index.load_at("A", t0 + 23).first == doctest::Approx(1.0));
  CHECK(index.load_at("A", t0 + 23).second == "90-100");

  // A single admission ever: its own window is the busiest week.
  TrustLoadIndex solo;
  solo.add("B", t0);
  solo.finalize();
  CHECK(solo.load_at("B", t0).first == doctest::Approx(1.0));
  CHECK(solo.load_at("B", t0).second == "90-100");

  CHECK_THROWS_AS(solo.load_at("missing", t0), ValidationError);

  // Exact percentage boundaries stay in the lower band (first band closed).
  CHECK(load_band(20, 100) == "0-20");
  CHECK(load_band(21, 100) == "20-40");
  CHECK(load_band(40, 100) == "20-40");
  CHECK(load_band(90, 100) == "80-90");
  CHECK(load_band(91, 100) == "90-100");
  CHECK(load_band(1, 5) == "0-20");
}

TEST_CASE("covariate banding") {
  CHECK(cci_band(5) == "5+");
  CHECK(cci_band(0) == "0");
  CHECK(cci_band(12) == "5+");
  CHECK(age_band(85) == "85+");
  CHECK(age_band(0) == "0-14");

  const std::vector<std::pair<int, std::string>> age_cases = {
      {14, "0-14"},  {15, "15-24"}, {24, "15-24"}, {25, "25-44"}, {44, "25-44"},
      {45, "45-64"}, {64, "45-64"}, {65, "65-74"}, {74, "65-74"}, {75, "75-84"},
      {84, "75-84"}, {85, "85+"},   {101, "85+"}};
  for (const auto& [age, band] : age_cases) CHECK(age_band(age) == band);
  const std::vector<std::pair<int, std::string>> cci_cases = {
      {0, "0"}, {1, "1-2"}, {2, "1-2"}, {3, "3-4"}, {4, "3-4"}, {5, "5+"}};
  for (const auto& [cci, band] : cci_cases) CHECK(cci_band(cci) == band);

  CHECK_THROWS_AS(age_band(-1), ValidationError);
  CHECK_THROWS_AS(cci_band(-2), ValidationError);

  RawAdmission raw = base_raw();
  const auto cov = band_covariates(raw);
  auto find = [&cov](const std::string& name) {
    for (const auto& [k, v] : cov) {
      if (k == name) return v;
    }
    return std::string();
  };
  CHECK(find("age_band") == "45-64");
  CHECK(find("admission_month") == "2021-03");
  CHECK(find("sex") == "Male");
}

TEST_CASE("palliative reclassification boundary") {
  RawAdmission raw = base_raw();
  raw.outcome_kind = OutcomeKind::Discharged;
  raw.outcome_date = raw.admission_date + 20;

  SUBCASE("death within 14 days becomes an in-hospital death") {
    raw.post_discharge_death_date = raw.admission_date + 30;
    const RawAdmission out = reclassify_palliative(raw);
    CHECK(out.outcome_kind == OutcomeKind::DiedInHospital);
    CHECK(*out.outcome_date == raw.admission_date + 30);
  }
  SUBCASE("death outside the window leaves the discharge") {
    raw.post_discharge_death_date = raw.admission_date + 40;
    const RawAdmission out = reclassify_palliative(raw);
    CHECK(out.outcome_kind == OutcomeKind::Discharged);
    CHECK(*out.outcome_date == raw.admission_date + 20);
  }
  SUBCASE("+13/+14/+15 day sweep pins the inclusive boundary") {
    for (int offset : {13, 14, 15}) {
      raw.post_discharge_death_date = *raw.outcome_date + offset;
      const RawAdmission out = reclassify_palliative(raw);
      if (offset <= 14) {
        CHECK(out.outcome_kind == OutcomeKind::DiedInHospital);
        CHECK(*out.outcome_date == *raw.outcome_date + offset);
      } else {
        CHECK(out.outcome_kind == OutcomeKind::Discharged);
      }
    }
  }
  SUBCASE("death before discharge is invalid") {
    raw.post_discharge_death_date = raw.admission_date + 10;
    CHECK_THROWS_AS(reclassify_palliative(raw), ValidationError);
  }
}

TEST_CASE("censoring horizon") {
  const Day extraction = make_day(2022, 1, 1);
  RawAdmission raw = base_raw();

  SUBCASE("death beyond the 90-day horizon is censored at 90") {
    raw.outcome_kind = OutcomeKind::DiedInHospital;
    raw.outcome_date = raw.admission_date + 95;
    const AnalysisRecord rec = apply_censoring(raw, extraction);
    CHECK(rec.event == Event::Censored);
    CHECK(rec.time_days == 90.0);
  }
  SUBCASE("discharge inside the horizon is kept") {
    raw.outcome_kind = OutcomeKind::Discharged;
    raw.outcome_date = raw.admission_date + 3;
    const AnalysisRecord rec = apply_censoring(raw, extraction);
    CHECK(rec.event == Event::Discharge);
    CHECK(rec.time_days == 3.0);
  }
  SUBCASE("still in hospital censors at the extraction date") {
    const AnalysisRecord rec = apply_censoring(raw, raw.admission_date + 40);
    CHECK(rec.event == Event::Censored);
    CHECK(rec.time_days == 40.0);
  }
  SUBCASE("specimen before admission shortens the horizon") {
    raw.specimen_date = raw.admission_date - 10;
    raw.outcome_kind = OutcomeKind::DiedInHospital;
    raw.outcome_date = raw.admission_date + 85;  // beyond specimen+90 = adm+80
    const AnalysisRecord rec = apply_censoring(raw, extraction);
    CHECK(rec.event == Event::Censored);
    CHECK(rec.time_days == 80.0);
  }
  SUBCASE("missing specimen falls back to the admission date") {
    raw.specimen_date.reset();
    raw.outcome_kind = OutcomeKind::DiedInHospital;
    raw.outcome_date = raw.admission_date + 95;
    const AnalysisRecord rec = apply_censoring(raw, extraction);
    CHECK(rec.time_days == 90.0);
  }
  SUBCASE("extraction before admission is invalid") {
    CHECK_THROWS_AS(apply_censoring(raw, raw.admission_date - 1), ValidationError);
  }

  SUBCASE("decision grid: outcome kind x timing vs hand table") {
    // horizon = specimen + 90 = admission + 91 when the specimen is +1 day.
    raw.specimen_date = raw.admission_date + 1;
    for (int day : {0, 1, 50, 91, 92, 130}) {
      for (OutcomeKind kind : {OutcomeKind::DiedInHospital, OutcomeKind::Discharged}) {
        raw.outcome_kind = kind;
        raw.outcome_date = raw.admission_date + day;
        const AnalysisRecord rec = apply_censoring(raw, extraction);
        if (day <= 91) {
          CHECK(rec.time_days == double(day));
          CHECK(rec.event == (kind == OutcomeKind::DiedInHospital ? Event::Death
                                                                  : Event::Discharge));
        } else {
          CHECK(rec.time_days == 91.0);
          CHECK(rec.event == Event::Censored);
        }
        CHECK(rec.time_days <= 91.0);
      }
    }
  }
}

TEST_CASE("reclassify + censor is idempotent") {
  RawAdmission raw = base_raw();
  raw.outcome_kind = OutcomeKind::Discharged;
  raw.outcome_date = raw.admission_date + 8;
  raw.post_discharge_death_date = raw.admission_date + 15;

  const RawAdmission once = reclassify_palliative(raw);
  const RawAdmission twice = reclassify_palliative(once);
  CHECK(once.outcome_kind == twice.outcome_kind);
  CHECK(*once.outcome_date == *twice.outcome_date);

  const Day extraction = make_day(2022, 1, 1);
  const AnalysisRecord a = apply_censoring(once, extraction);
  const AnalysisRecord b = apply_censoring(twice, extraction);
  CHECK(a.time_days == b.time_days);
  CHECK(a.event == b.event);
}

namespace {

const char* kHeader =
    "subject_id,admission_date,specimen_date,onset_date,outcome_kind,outcome_date,"
    "post_discharge_death_date,dose1_date,dose2_date,age_years,sex,ethnicity,region,"
    "imd_quintile,cci_score,trust_id";

std::string valid_row(const std::string& id) {
  return id + ",2021-03-10,2021-03-09,2021-03-05,Discharged,2021-03-20,,,,55,Female,White,"
              "London,2,0,T1";
}

}  // namespace

TEST_CASE("ingestion counts rejections per reason") {
  SUBCASE("valid rows pass with an empty report") {
    std::stringstream in;
    in << kHeader << "\n" << valid_row("a") << "\n" << valid_row("b") << "\n"
       << valid_row("c") << "\n";
    const IngestResult result = ingest_cohort(in);
    CHECK(result.records.size() == 3);
    CHECK(result.report.counts.empty());
  }
  SUBCASE("outcome before admission") {
    std::stringstream in;
    in << kHeader << "\n"
       << "a,2021-03-10,2021-03-09,,Discharged,2021-03-01,,,,55,Female,White,London,2,0,T1\n";
    const IngestResult result = ingest_cohort(in);
    CHECK(result.records.empty());
    CHECK(result.report.counts.at(reject::kInconsistentDates) == 1);
  }
  SUBCASE("missing sex") {
    std::stringstream in;
    in << kHeader << "\n"
       << "a,2021-03-10,2021-03-09,,Discharged,2021-03-20,,,,55,,White,London,2,0,T1\n";
    const IngestResult result = ingest_cohort(in);
    CHECK(result.records.empty());
    CHECK(result.report.counts.at(reject::kMissingDemographic) == 1);
  }
  SUBCASE("specimen outside [-14, +1]") {
    std::stringstream in;
    in << kHeader << "\n"
       << "a,2021-03-10,2021-03-12,,Discharged,2021-03-20,,,,55,Female,White,London,2,0,T1\n";
    const IngestResult result = ingest_cohort(in);
    CHECK(result.report.counts.at(reject::kOutOfWindowSpecimen) == 1);
  }
  SUBCASE("unparseable fields are malformed rows, not fatal") {
    std::stringstream in;
    in << kHeader << "\n"
       << "a,not-a-date,2021-03-09,,Discharged,2021-03-20,,,,55,Female,White,London,2,0,T1\n"
       << valid_row("b") << "\n";
    const IngestResult result = ingest_cohort(in);
    CHECK(result.records.size() == 1);
    CHECK(result.report.counts.at(reject::kMalformedRow) == 1);
  }
  SUBCASE("wrong header is a validation error") {
    std::stringstream in;
    in << "a,b,c\n1,2,3\n";
    CHECK_THROWS_AS(ingest_cohort(in), ValidationError);
  }
}

TEST_CASE("preprocessing is order-independent") {
  std::vector<std::string> rows;
  Rng rng(7);
  for (int i = 0; i < 40; ++i) {
    std::string id = "s" + std::to_string(i);
    const int outcome_day = 10 + int(rng.below(19));
    rows.push_back(id + ",2021-03-" + (i % 28 + 1 < 10 ? "0" : "") +
                   std::to_string(1 + i % 28) + ",,,Discharged,2021-04-" +
                   (outcome_day < 10 ? "0" : "") + std::to_string(outcome_day) +
                   ",,,,55,Female,White,London,2,0,T" + std::to_string(i % 3));
  }
  auto run = [&rows](const std::vector<std::size_t>& order) {
    std::stringstream in;
    in << kHeader << "\n";
    for (std::size_t k : order) in << rows[k] << "\n";
    const IngestResult ing = ingest_cohort(in);
    const PreprocessResult pre = preprocess_cohort(ing.records);
    std::vector<std::string> keys;
    for (const auto& rec : pre.records) {
      std::string key = rec.subject_id + "|" + std::to_string(rec.time_days) + "|" +
                        std::to_string(int(rec.event));
      for (const auto& [k, v] : rec.covariates) key += "|" + k + "=" + v;
      keys.push_back(key);
    }
    std::sort(keys.begin(), keys.end());
    return keys;
  };

  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto straight = run(order);
  std::mt19937 shuffler(3);
  std::shuffle(order.begin(), order.end(), shuffler);
  CHECK(run(order) == straight);
}

TEST_CASE("preprocess attaches load, vaccination and month factors") {
  std::vector<RawAdmission> raws;
  RawAdmission raw = base_raw();
  raw.outcome_kind = OutcomeKind::Discharged;
  raw.outcome_date = raw.admission_date + 5;
  raw.dose1_date = raw.admission_date - 30;
  raws.push_back(raw);

  const PreprocessResult pre = preprocess_cohort(raws);
  REQUIRE(pre.records.size() == 1);
  const AnalysisRecord& rec = pre.records[0];
  CHECK(*rec.level("vaccination_status") == ">=21 days after first dose");
  CHECK(*rec.level("hospital_load") == "90-100");
  CHECK(*rec.level("admission_month") == "2021-03");
  CHECK(rec.level("onset_month") != nullptr);
  CHECK(rec.time_days == 5.0);
}
