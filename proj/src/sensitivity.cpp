#include "crivet/sensitivity.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "crivet/errors.hpp"

namespace crivet {

void ShiftSpec::validate() const {
  std::set<int> seen;
  bool has_zero = false;
  for (int c : shifts) {
    if (c < 0) throw ValidationError("phase shifts must be non-negative");
    if (!seen.insert(c).second) throw ValidationError("phase shifts must be distinct");
    if (c == 0) has_zero = true;
  }
  if (!has_zero) throw ValidationError("phase shifts must include the identity c=0");
}

std::vector<RawAdmission> apply_phase_shift(const std::vector<RawAdmission>& cohort, int c) {
  std::vector<RawAdmission> out;
  out.reserve(cohort.size());
  for (const auto& raw : cohort) {
    RawAdmission shifted = raw;
    if (c != 0 && raw.onset_date &&
        reclassify_palliative(raw).outcome_kind == OutcomeKind::DiedInHospital) {
      shifted.onset_date = *raw.onset_date - c;
    }
    out.push_back(std::move(shifted));
  }
  return out;
}

CovariateSchema discover_schema(
    const std::vector<AnalysisRecord>& records,
    const std::vector<std::string>& main_effects,
    const std::vector<std::string>& stratum_factors,
    const std::vector<std::pair<std::string, std::string>>& references) {
  CovariateSchema schema;
  schema.stratum_factors = stratum_factors;

  auto requested_ref = [&references](const std::string& factor) -> const std::string* {
    for (const auto& [name, ref] : references) {
      if (name == factor) return &ref;
    }
    return nullptr;
  };
  // Conventional reference levels when the caller does not pin one.
  static const std::map<std::string, std::string> kDefaultRefs = {
      {"sex", "Female"},           {"ethnicity", "White"},
      {"imd_quintile", "5"},       {"cci_band", "0"},
      {"hospital_load", "0-20"},   {"vaccination_status", "Unvaccinated"},
  };

  std::vector<std::string> all = main_effects;
  for (const auto& s : stratum_factors) {
    if (std::find(all.begin(), all.end(), s) == all.end()) all.push_back(s);
  }
  for (const auto& name : all) {
    std::set<std::string> levels;
    for (const auto& rec : records) {
      const std::string* lvl = rec.level(name);
      if (!lvl) throw ValidationError("record " + rec.subject_id + " lacks factor " + name);
      if (lvl->empty()) {
        throw ValidationError("record " + rec.subject_id + " has an empty level for " + name);
      }
      levels.insert(*lvl);
    }
    if (levels.empty()) throw ValidationError("no levels observed for factor " + name);
    FactorSpec f;
    f.name = name;
    f.levels.assign(levels.begin(), levels.end());
    const std::string* ref = requested_ref(name);
    if (ref && levels.count(*ref)) {
      f.reference = *ref;
    } else if (auto it = kDefaultRefs.find(name);
               it != kDefaultRefs.end() && levels.count(it->second)) {
      f.reference = it->second;
    } else {
      f.reference = f.levels.front();
    }
    schema.factors.push_back(std::move(f));
  }
  return schema;
}

SensitivityResult run_sensitivity(const std::vector<RawAdmission>& cohort,
                                  const SensitivityFitConfig& config,
                                  const ShiftSpec& spec) {
  spec.validate();
  if (std::find(config.main_effects.begin(), config.main_effects.end(),
                spec.month_factor) == config.main_effects.end()) {
    throw ValidationError("sensitivity main effects must include " + spec.month_factor);
  }

  SensitivityResult result;
  std::vector<RawAdmission> subset;
  subset.reserve(cohort.size());
  for (const auto& raw : cohort) {
    if (raw.onset_date) {
      subset.push_back(raw);
    } else {
      ++result.excluded_no_onset;
    }
  }
  if (subset.empty()) {
    throw ValidationError("no records carry an onset date; sensitivity analysis "
                          "has an empty subset");
  }

  std::vector<int> shifts = spec.shifts;
  std::sort(shifts.begin(), shifts.end());

  for (int c : shifts) {
    try {
      const auto shifted = apply_phase_shift(subset, c);
      PreprocessResult pre = preprocess_cohort(shifted, config.preprocess);
      const CovariateSchema schema = discover_schema(
          pre.records, config.main_effects, config.stratum_factors, config.references);
      SensitivityResult::ShiftFit fit;
      fit.shift_days = c;
      fit.model = fit_fine_gray(pre.records, schema, config.fit);
      fit.table = hazard_ratios(fit.model);
      result.fits.push_back(std::move(fit));
    } catch (const NumericalError& e) {
      throw NumericalError("shift c=" + std::to_string(c) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("shift c=" + std::to_string(c) + ": " + e.what());
    }
  }
  return result;
}

}  // namespace crivet
