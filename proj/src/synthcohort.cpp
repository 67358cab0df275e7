#include "crivet/synthcohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "crivet/csv.hpp"
#include "crivet/errors.hpp"
#include "crivet/threads.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace crivet {

using nlohmann::json;

void CohortSpec::validate() const {
  if (n < 1) throw ValidationError("cohort size must be >= 1");
  if (!(p_mix > 0.0 && p_mix < 1.0)) throw ValidationError("p_mix must lie in (0,1)");
  if (day_scale <= 0.0) throw ValidationError("day_scale must be positive");
  if (censor_max < 0.0) throw ValidationError("censor_max must be >= 0");
  if (trust_count < 1) throw ValidationError("trust_count must be >= 1");
  if (admission_window_days < 1) throw ValidationError("admission window must be >= 1 day");
  if (onset_lag_min < 0 || onset_lag_max < onset_lag_min) {
    throw ValidationError("onset lag range invalid");
  }
  for (const auto& f : factors) {
    if (f.levels.empty() || f.levels.size() != f.probs.size()) {
      throw ValidationError("factor " + f.name + ": levels/probs mismatch");
    }
    double sum = 0.0;
    for (double p : f.probs) {
      if (p < 0.0) throw ValidationError("factor " + f.name + ": negative probability");
      sum += p;
    }
    if (std::fabs(sum - 1.0) > 1e-9) {
      throw ValidationError("factor " + f.name + ": probabilities must sum to 1");
    }
  }
}

namespace {

std::vector<std::pair<std::string, double>> beta_from_json(const json& j) {
  std::vector<std::pair<std::string, double>> out;
  for (auto it = j.begin(); it != j.end(); ++it) {
    out.emplace_back(it.key(), it.value().get<double>());
  }
  return out;
}

}  // namespace

CohortSpec cohort_spec_from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("cohort spec JSON: ") + e.what());
  }
  CohortSpec spec;
  try {
    spec.n = j.at("n").get<std::int64_t>();
    spec.seed = j.value("seed", std::uint64_t(0));
    spec.p_mix = j.value("p_mix", spec.p_mix);
    spec.day_scale = j.value("day_scale", spec.day_scale);
    spec.censor_max = j.value("censor_max", spec.censor_max);
    if (j.contains("beta_death")) spec.beta_death = beta_from_json(j["beta_death"]);
    if (j.contains("beta_discharge")) spec.beta_discharge = beta_from_json(j["beta_discharge"]);
    if (j.contains("factors")) {
      for (const auto& jf : j["factors"]) {
        GenFactor f;
        f.name = jf.at("name").get<std::string>();
        f.levels = jf.at("levels").get<std::vector<std::string>>();
        f.probs = jf.at("probs").get<std::vector<double>>();
        spec.factors.push_back(std::move(f));
      }
    }
    spec.trust_count = j.value("trust_count", spec.trust_count);
    if (j.contains("admission_start")) {
      const auto day = parse_day(j["admission_start"].get<std::string>());
      if (!day) throw ValidationError("admission_start is not an ISO date");
      spec.admission_start = *day;
    }
    spec.admission_window_days = j.value("admission_window_days", spec.admission_window_days);
    spec.onset_lag_min = j.value("onset_lag_min", spec.onset_lag_min);
    spec.onset_lag_max = j.value("onset_lag_max", spec.onset_lag_max);
    spec.onset_missing_prob = j.value("onset_missing_prob", spec.onset_missing_prob);
    spec.peak_mass = j.value("peak_mass", spec.peak_mass);
    spec.peak_offset_days = j.value("peak_offset_days", spec.peak_offset_days);
    spec.peak_window_days = j.value("peak_window_days", spec.peak_window_days);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("cohort spec JSON: ") + e.what());
  }
  spec.validate();
  return spec;
}

CohortSpec cohort_spec_from_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open cohort spec: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return cohort_spec_from_json_string(text);
}

namespace {

double linear_predictor(const std::vector<std::pair<std::string, double>>& beta,
                        const std::vector<std::pair<std::string, std::string>>& levels) {
  double lp = 0.0;
  for (const auto& [key, coef] : beta) {
    const auto eq = key.find('=');
    if (eq == std::string::npos) {
      throw ValidationError("beta key '" + key + "' is not factor=level");
    }
    const std::string factor = key.substr(0, eq);
    const std::string level = key.substr(eq + 1);
    for (const auto& [name, value] : levels) {
      if (name == factor && value == level) {
        lp += coef;
        break;
      }
    }
  }
  return lp;
}

int sample_age(Rng& rng, const std::string& band) {
  if (band == "0-14") return int(rng.below(15));
  if (band == "15-24") return 15 + int(rng.below(10));
  if (band == "25-44") return 25 + int(rng.below(20));
  if (band == "45-64") return 45 + int(rng.below(20));
  if (band == "65-74") return 65 + int(rng.below(10));
  if (band == "75-84") return 75 + int(rng.below(10));
  if (band == "85+") return 85 + int(rng.below(15));
  throw ValidationError("unknown age band '" + band + "'");
}

int sample_cci(Rng& rng, const std::string& band) {
  if (band == "0") return 0;
  if (band == "1-2") return 1 + int(rng.below(2));
  if (band == "3-4") return 3 + int(rng.below(2));
  if (band == "5+") return 5 + int(rng.below(6));
  throw ValidationError("unknown CCI band '" + band + "'");
}

}  // namespace

std::pair<double, int> sample_competing_event(Rng& rng, double lp_death,
                                              double lp_discharge, const CohortSpec& spec) {
  const double theta = std::exp(lp_death);
  const double p1 = 1.0 - std::pow(1.0 - spec.p_mix, theta);  // P(cause = 1 | x)
  const double u_cause = rng.u01();
  if (u_cause < p1) {
    // Inverse transform of F1(t|x)/p1 with F1(t|x) = 1 - (1 - p(1-e^-t))^theta.
    const double u = rng.u01_open();
    const double root = std::pow(1.0 - u * p1, 1.0 / theta);
    const double t = -std::log(1.0 - (1.0 - root) / spec.p_mix);
    return {t * spec.day_scale, 1};
  }
  const double rate = std::exp(lp_discharge);
  return {rng.exponential(rate) * spec.day_scale, 2};
}

GeneratedCohort generate_cohort(const CohortSpec& spec, int n_threads) {
  spec.validate();
  if (n_threads <= 0) n_threads = effective_threads();

  // Everything that could throw is validated here, outside the parallel loop.
  std::vector<std::vector<double>> cumprobs;
  for (const auto& f : spec.factors) {
    std::vector<double> cp(f.probs.size());
    double run = 0.0;
    for (std::size_t k = 0; k < f.probs.size(); ++k) cp[k] = (run += f.probs[k]);
    cumprobs.push_back(std::move(cp));
    if (f.name == "age_band" || f.name == "cci_band" || f.name == "vaccination_status") {
      Rng probe(0);
      for (const auto& level : f.levels) {
        if (f.name == "age_band") sample_age(probe, level);
        if (f.name == "cci_band") sample_cci(probe, level);
        if (f.name == "vaccination_status" &&
            level != vaccination_label(VaccinationStatus::Unvaccinated) &&
            level != vaccination_label(VaccinationStatus::FirstDoseUnder21d) &&
            level != vaccination_label(VaccinationStatus::FirstDose21dPlus) &&
            level != vaccination_label(VaccinationStatus::SecondDose14dPlus)) {
          throw ValidationError("unknown vaccination level '" + level + "'");
        }
      }
    }
  }
  for (const auto* beta : {&spec.beta_death, &spec.beta_discharge}) {
    for (const auto& [key, coef] : *beta) {
      (void)coef;
      if (key.find('=') == std::string::npos) {
        throw ValidationError("beta key '" + key + "' is not factor=level");
      }
    }
  }

  GeneratedCohort out;
  out.admissions.resize(std::size_t(spec.n));
  out.truth.resize(std::size_t(spec.n));

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(n_threads)
#endif
  for (std::int64_t i = 0; i < spec.n; ++i) {
    Rng rng = Rng::substream(spec.seed, std::uint64_t(i));
    RawAdmission raw;
    TruthRecord truth;

    char idbuf[24];
    std::snprintf(idbuf, sizeof(idbuf), "S%07lld", static_cast<long long>(i));
    raw.subject_id = idbuf;
    truth.subject_id = idbuf;

    // Fixed per-subject draw order; determinism depends on it.
    Day admission = spec.admission_start + Day(rng.below(std::uint64_t(spec.admission_window_days)));
    if (spec.peak_mass > 0.0 && rng.u01() < spec.peak_mass) {
      admission = spec.admission_start + Day(spec.peak_offset_days) +
                  Day(rng.below(std::uint64_t(spec.peak_window_days)));
    }
    raw.admission_date = admission;
    raw.specimen_date = admission;

    const int lag = rng.uniform_int(spec.onset_lag_min, spec.onset_lag_max);
    const bool onset_missing =
        spec.onset_missing_prob > 0.0 && rng.u01() < spec.onset_missing_prob;
    if (!onset_missing) raw.onset_date = admission - lag;

    for (std::size_t f = 0; f < spec.factors.size(); ++f) {
      const int k = rng.categorical(cumprobs[f]);
      truth.levels.emplace_back(spec.factors[f].name, spec.factors[f].levels[std::size_t(k)]);
    }

    auto level_of = [&truth](const std::string& name) -> const std::string* {
      for (const auto& [n2, v] : truth.levels) {
        if (n2 == name) return &v;
      }
      return nullptr;
    };

    raw.age_years = 50;
    if (const std::string* band = level_of("age_band")) raw.age_years = sample_age(rng, *band);
    raw.cci_score = 0;
    if (const std::string* band = level_of("cci_band")) raw.cci_score = sample_cci(rng, *band);
    if (const std::string* vacc = level_of("vaccination_status")) {
      if (*vacc == vaccination_label(VaccinationStatus::FirstDoseUnder21d)) {
        raw.dose1_date = admission - rng.uniform_int(0, 20);
      } else if (*vacc == vaccination_label(VaccinationStatus::FirstDose21dPlus)) {
        raw.dose1_date = admission - rng.uniform_int(21, 90);
      } else if (*vacc == vaccination_label(VaccinationStatus::SecondDose14dPlus)) {
        const Day dose2 = admission - rng.uniform_int(14, 60);
        raw.dose1_date = dose2 - rng.uniform_int(21, 77);
        raw.dose2_date = dose2;
      }
    }

    const std::string* sex = level_of("sex");
    raw.sex = sex ? *sex : "Female";
    const std::string* eth = level_of("ethnicity");
    raw.ethnicity = eth ? *eth : "White";
    const std::string* region = level_of("region");
    raw.region = region ? *region : "London";
    const std::string* imd = level_of("imd_quintile");
    raw.imd_quintile = imd ? *imd : "3";

    std::snprintf(idbuf, sizeof(idbuf), "T%03d", int(i % spec.trust_count));
    raw.trust_id = idbuf;

    const double lp_death = linear_predictor(spec.beta_death, truth.levels);
    const double lp_discharge = linear_predictor(spec.beta_discharge, truth.levels);
    const auto [t, cause] = sample_competing_event(rng, lp_death, lp_discharge, spec);
    truth.true_time = t;
    truth.true_cause = cause;

    double censor = 90.0;
    if (spec.censor_max > 0.0) censor = std::min(censor, rng.u01() * spec.censor_max);
    truth.censor_time = censor;

    if (t <= censor) {
      raw.outcome_kind = cause == 1 ? OutcomeKind::DiedInHospital : OutcomeKind::Discharged;
      raw.outcome_date = admission + Day(std::llround(t));
    } else {
      raw.outcome_kind = OutcomeKind::StillInHospital;
    }

    out.admissions[std::size_t(i)] = std::move(raw);
    out.truth[std::size_t(i)] = std::move(truth);
  }
  return out;
}

std::vector<AnalysisRecord> truth_to_records(const std::vector<TruthRecord>& truth) {
  std::vector<AnalysisRecord> out;
  out.reserve(truth.size());
  for (const auto& t : truth) {
    AnalysisRecord rec;
    rec.subject_id = t.subject_id;
    if (t.true_time <= t.censor_time) {
      rec.time_days = t.true_time;
      rec.event = t.true_cause == 1 ? Event::Death : Event::Discharge;
    } else {
      rec.time_days = t.censor_time;
      rec.event = Event::Censored;
    }
    rec.covariates = t.levels;
    out.push_back(std::move(rec));
  }
  return out;
}

void write_cohort_csv(const std::vector<RawAdmission>& admissions, const std::string& path) {
  CsvWriter out(path);
  out.row({"subject_id", "admission_date", "specimen_date", "onset_date", "outcome_kind",
           "outcome_date", "post_discharge_death_date", "dose1_date", "dose2_date",
           "age_years", "sex", "ethnicity", "region", "imd_quintile", "cci_score",
           "trust_id"});
  auto opt_day = [](const std::optional<Day>& d) {
    return d ? format_day(*d) : std::string();
  };
  for (const auto& r : admissions) {
    const char* kind = r.outcome_kind == OutcomeKind::DiedInHospital ? "DiedInHospital"
                       : r.outcome_kind == OutcomeKind::Discharged   ? "Discharged"
                                                                     : "StillInHospital";
    out.row({r.subject_id, format_day(r.admission_date), opt_day(r.specimen_date),
             opt_day(r.onset_date), kind, opt_day(r.outcome_date),
             opt_day(r.post_discharge_death_date), opt_day(r.dose1_date),
             opt_day(r.dose2_date), std::to_string(r.age_years), r.sex, r.ethnicity,
             r.region, r.imd_quintile, std::to_string(r.cci_score), r.trust_id});
  }
}

void write_truth_csv(const std::vector<TruthRecord>& truth, const CohortSpec& spec,
                     const std::string& path) {
  CsvWriter out(path);
  std::vector<std::string> header = {"subject_id", "true_time", "true_cause", "censor_time"};
  for (const auto& f : spec.factors) header.push_back(f.name);
  out.row(header);
  for (const auto& t : truth) {
    std::vector<std::string> row = {t.subject_id, format_double(t.true_time),
                                    std::to_string(t.true_cause),
                                    format_double(t.censor_time)};
    for (const auto& f : spec.factors) {
      std::string level;
      for (const auto& [name, value] : t.levels) {
        if (name == f.name) {
          level = value;
          break;
        }
      }
      row.push_back(level);
    }
    out.row(row);
  }
}

}  // namespace crivet
