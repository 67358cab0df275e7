#include "crivet/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "json.hpp"

#include "crivet/csv.hpp"
#include "crivet/errors.hpp"
#include "crivet/rng.hpp"

namespace crivet {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config

std::vector<std::string> RunConfig::resolved_main_effects() const {
  const std::string month =
      month_source == "onset" ? "onset_month" : "admission_month";
  if (preset == "month") {
    return {month, "sex", "ethnicity", "imd_quintile", "cci_band", "hospital_load"};
  }
  if (preset == "vaccination") {
    return {"vaccination_status", "sex", "ethnicity", "imd_quintile", "cci_band",
            "hospital_load"};
  }
  if (preset == "custom") return main_effects;
  throw ValidationError("unknown preset '" + preset + "'");
}

std::vector<std::string> RunConfig::resolved_strata() const {
  if (preset == "month") return {"age_band", "region", "vaccination_status"};
  if (preset == "vaccination") return {"age_band", "region", "admission_month"};
  if (preset == "custom") return stratum_factors;
  throw ValidationError("unknown preset '" + preset + "'");
}

RunConfig run_config_from_json_string(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("run config JSON: ") + e.what());
  }
  RunConfig cfg;
  try {
    cfg.input = j.value("input", cfg.input);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.horizon = j.value("horizon", cfg.horizon);
    if (j.contains("extraction")) {
      const auto day = parse_day(j["extraction"].get<std::string>());
      if (!day) throw ValidationError("extraction is not an ISO date");
      cfg.extraction = *day;
    }
    if (j.contains("group_by")) cfg.group_by = j["group_by"].get<std::vector<std::string>>();
    cfg.preset = j.value("preset", cfg.preset);
    cfg.month_source = j.value("month_source", cfg.month_source);
    if (j.contains("main_effects")) {
      cfg.main_effects = j["main_effects"].get<std::vector<std::string>>();
    }
    if (j.contains("stratum_factors")) {
      cfg.stratum_factors = j["stratum_factors"].get<std::vector<std::string>>();
    }
    if (j.contains("references")) {
      for (auto it = j["references"].begin(); it != j["references"].end(); ++it) {
        cfg.references.emplace_back(it.key(), it.value().get<std::string>());
      }
    }
    cfg.bootstrap_b = j.value("bootstrap", cfg.bootstrap_b);
    if (j.contains("shifts")) cfg.shifts = j["shifts"].get<std::vector<int>>();
    cfg.seed = j.value("seed", cfg.seed);
    cfg.n_threads = j.value("threads", cfg.n_threads);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("run config JSON: ") + e.what());
  }

  // Strata and main effects must not overlap within one analysis.
  const auto mains = cfg.resolved_main_effects();
  for (const auto& s : cfg.resolved_strata()) {
    if (std::find(mains.begin(), mains.end(), s) != mains.end()) {
      throw ValidationError("factor '" + s + "' is both a stratum and a main effect");
    }
  }
  return cfg;
}

RunConfig run_config_from_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return run_config_from_json_string(text);
}

// ---------------------------------------------------------------------------
// Analysis-table round trip

void write_analysis_csv(const std::vector<AnalysisRecord>& records, const std::string& path) {
  CsvWriter out(path);
  std::vector<std::string> header = {"subject_id", "time_days", "event"};
  if (!records.empty()) {
    for (const auto& [name, value] : records.front().covariates) {
      (void)value;
      header.push_back(name);
    }
  }
  header.push_back("weight");
  out.row(header);
  for (const auto& rec : records) {
    std::vector<std::string> row = {rec.subject_id, format_double(rec.time_days),
                                    std::to_string(int(rec.event))};
    for (const auto& [name, value] : rec.covariates) {
      (void)name;
      row.push_back(value);
    }
    row.push_back(format_double(rec.weight));
    out.row(row);
  }
}

std::vector<AnalysisRecord> read_analysis_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open analysis table: " + path);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("empty analysis table");
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[0] != "subject_id" || header[1] != "time_days" ||
      header[2] != "event" || header.back() != "weight") {
    throw ValidationError("unexpected analysis table header");
  }
  std::vector<AnalysisRecord> records;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw ValidationError("analysis table row has wrong column count");
    }
    AnalysisRecord rec;
    rec.subject_id = fields[0];
    rec.time_days = std::stod(fields[1]);
    rec.event = static_cast<Event>(std::stoi(fields[2]));
    for (std::size_t c = 3; c + 1 < fields.size(); ++c) {
      rec.covariates.emplace_back(header[c], fields[c]);
    }
    rec.weight = std::stod(fields.back());
    records.push_back(std::move(rec));
  }
  return records;
}

// ---------------------------------------------------------------------------
// Formatting

std::string format_percent_ci(double risk, double lo, double hi) {
  char buf[80];
  std::snprintf(buf, sizeof(buf), "%.1f%% (%.1f - %.1f%%)", risk * 100.0, lo * 100.0,
                hi * 100.0);
  return buf;
}

std::string format_days_ci(double days, double lo, double hi) {
  char buf[80];
  std::snprintf(buf, sizeof(buf), "%.1f (%.1f - %.1f)", days, lo, hi);
  return buf;
}

// ---------------------------------------------------------------------------
// Grouped CIF tables

namespace {

std::string sanitize_filename(std::string s) {
  for (char& ch : s) {
    const bool ok = (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') ||
                    (ch >= '0' && ch <= '9') || ch == '.' || ch == '-';
    if (!ok) ch = '_';
  }
  return s;
}

}  // namespace

std::vector<GroupSummary> grouped_cif_summaries(const std::vector<AnalysisRecord>& records,
                                                const RunConfig& cfg) {
  // Observed levels per grouping factor; the group set is their cross
  // product so combinations without subjects still appear as dash rows.
  std::vector<std::vector<std::string>> level_sets;
  for (const auto& factor : cfg.group_by) {
    std::set<std::string> levels;
    for (const auto& rec : records) {
      const std::string* lvl = rec.level(factor);
      if (!lvl) throw ValidationError("records lack grouping factor " + factor);
      levels.insert(*lvl);
    }
    level_sets.emplace_back(levels.begin(), levels.end());
  }

  std::vector<std::vector<std::string>> combos = {{}};
  for (const auto& levels : level_sets) {
    std::vector<std::vector<std::string>> next;
    for (const auto& combo : combos) {
      for (const auto& level : levels) {
        auto c = combo;
        c.push_back(level);
        next.push_back(std::move(c));
      }
    }
    combos = std::move(next);
  }

  auto label_of = [&cfg](const std::vector<std::string>& combo) {
    std::string label;
    for (std::size_t k = 0; k < combo.size(); ++k) {
      if (k) label.push_back('|');
      label += cfg.group_by[k] + "=" + combo[k];
    }
    return label.empty() ? std::string("all") : label;
  };

  std::vector<GroupSummary> out;
  std::uint64_t group_index = 0;
  for (const auto& combo : combos) {
    GroupSummary summary;
    summary.group = label_of(combo);

    std::vector<Obs> members;
    for (const auto& rec : records) {
      bool match = true;
      for (std::size_t k = 0; k < combo.size(); ++k) {
        const std::string* lvl = rec.level(cfg.group_by[k]);
        if (!lvl || *lvl != combo[k]) {
          match = false;
          break;
        }
      }
      if (match) members.push_back(to_obs(rec));
    }

    if (members.empty()) {
      summary.empty = true;
      out.push_back(std::move(summary));
      ++group_index;
      continue;
    }
    for (const auto& o : members) summary.n_subjects += o.weight;

    const EventTable table = build_event_table(members);
    const AjEstimate est = aalen_johansen(table);
    summary.hfr = risk_at_horizon(est.cif_death, cfg.horizon);

    const std::uint64_t group_seed = splitmix64(cfg.seed, group_index);
    if (!est.cif_death.values.empty() && est.cif_death.values.back() > 0.0) {
      summary.has_deaths = true;
      summary.median_death = median_los_with_ci(members, Event::Death, cfg.bootstrap_b,
                                                group_seed, cfg.n_threads);
    }
    if (!est.cif_discharge.values.empty() && est.cif_discharge.values.back() > 0.0) {
      summary.has_discharges = true;
      summary.median_discharge = median_los_with_ci(
          members, Event::Discharge, cfg.bootstrap_b, splitmix64(group_seed, 1),
          cfg.n_threads);
    }
    out.push_back(std::move(summary));
    ++group_index;
  }
  return out;
}

void write_curves_csv(const AjEstimate& est, const std::string& path) {
  CsvWriter out(path);
  out.row({"cause", "time_days", "estimate", "variance", "ci_lower", "ci_upper"});
  auto emit = [&out](const char* cause, const StepCurve& curve) {
    for (std::size_t j = 0; j < curve.times.size(); ++j) {
      out.row({cause, format_double(curve.times[j]), format_double(curve.values[j]),
               format_double(curve.variance[j]), format_double(curve.ci_lower[j]),
               format_double(curve.ci_upper[j])});
    }
  };
  emit("death", est.cif_death);
  emit("discharge", est.cif_discharge);
  emit("survival", est.survival);
}

// ---------------------------------------------------------------------------
// Model exports

void write_hr_table_csv(const HazardRatioTable& table, const std::string& path) {
  CsvWriter out(path);
  out.row({"characteristic", "level", "hazard_ratio", "ci_lower", "ci_upper",
           "reference_flag"});
  for (const auto& row : table.rows) {
    if (row.is_reference) {
      out.row({row.characteristic, row.level, "1", "", "", "1"});
    } else {
      out.row({row.characteristic, row.level, format_double(row.hazard_ratio),
               format_double(row.ci_lower), format_double(row.ci_upper), "0"});
    }
  }
}

void write_model_json(const FgModel& model, const HazardRatioTable& table,
                      const std::string& path) {
  ordered_json j;
  j["coefficients"] = ordered_json::array();
  for (Eigen::Index k = 0; k < model.beta.size(); ++k) {
    ordered_json c;
    c["name"] = model.coef_names[std::size_t(k)];
    c["factor"] = model.coef_factor[std::size_t(k)];
    c["level"] = model.coef_level[std::size_t(k)];
    c["beta"] = model.beta[k];
    c["se"] = std::sqrt(std::max(model.covariance(k, k), 0.0));
    j["coefficients"].push_back(std::move(c));
  }
  j["covariance"] = ordered_json::array();
  for (Eigen::Index r = 0; r < model.covariance.rows(); ++r) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index c = 0; c < model.covariance.cols(); ++c) {
      row.push_back(model.covariance(r, c));
    }
    j["covariance"].push_back(std::move(row));
  }
  j["hazard_ratios"] = ordered_json::array();
  for (const auto& row : table.rows) {
    ordered_json r;
    r["characteristic"] = row.characteristic;
    r["level"] = row.level;
    r["reference"] = row.is_reference;
    if (!row.is_reference) {
      r["hazard_ratio"] = row.hazard_ratio;
      r["ci_lower"] = row.ci_lower;
      r["ci_upper"] = row.ci_upper;
      r["se"] = row.se;
    }
    r["display"] = row.display();
    j["hazard_ratios"].push_back(std::move(r));
  }
  j["baseline"] = ordered_json::object();
  for (std::size_t s = 0; s < model.strata.size(); ++s) {
    ordered_json b;
    b["times"] = model.baseline_times[s];
    b["jumps"] = model.baseline_jumps[s];
    b["cumulative_hazard"] = model.baseline_cumhaz[s];
    j["baseline"][model.strata[s].empty() ? "(none)" : model.strata[s]] = std::move(b);
  }
  j["diagnostics"] = {
      {"iterations", model.diagnostics.iterations},
      {"final_loglik", model.diagnostics.final_loglik},
      {"max_score", model.diagnostics.max_score},
      {"dropped_strata", model.diagnostics.dropped_strata},
      {"pruned_columns", model.diagnostics.pruned_columns},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Commands

namespace {

void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.out_dir);
}

std::string out_path(const RunConfig& cfg, const std::string& name) {
  return (fs::path(cfg.out_dir) / name).string();
}

PreprocessOptions preprocess_options(const RunConfig& cfg) {
  PreprocessOptions opts;
  if (cfg.extraction) opts.extraction = *cfg.extraction;
  return opts;
}

// Records usable by the configured fit: every schema factor level non-empty.
// Returns the kept records and the number dropped.
std::pair<std::vector<AnalysisRecord>, std::int64_t> complete_cases(
    const std::vector<AnalysisRecord>& records, const std::vector<std::string>& factors) {
  std::vector<AnalysisRecord> kept;
  std::int64_t dropped = 0;
  kept.reserve(records.size());
  for (const auto& rec : records) {
    bool ok = true;
    for (const auto& f : factors) {
      const std::string* lvl = rec.level(f);
      if (!lvl || lvl->empty()) {
        ok = false;
        break;
      }
    }
    if (ok) {
      kept.push_back(rec);
    } else {
      ++dropped;
    }
  }
  return {std::move(kept), dropped};
}

FgOptions fg_options(const RunConfig& cfg) {
  FgOptions opts;
  opts.n_threads = cfg.n_threads;
  return opts;
}

}  // namespace

void run_preprocess(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  IngestResult ingest = ingest_cohort_file(cfg.input);
  PreprocessResult pre = preprocess_cohort(ingest.records, preprocess_options(cfg));
  for (const auto& [reason, count] : pre.report.counts) {
    ingest.report.counts[reason] += count;
  }
  write_analysis_csv(pre.records, out_path(cfg, "analysis.csv"));
  write_rejection_report(ingest.report, out_path(cfg, "rejections.csv"));

  double deaths = 0, discharges = 0, censored = 0;
  for (const auto& rec : pre.records) {
    if (rec.event == Event::Death) ++deaths;
    if (rec.event == Event::Discharge) ++discharges;
    if (rec.event == Event::Censored) ++censored;
  }
  const double n = double(pre.records.size());
  std::printf("cohort n=%lld (rejected %lld)\n",
              static_cast<long long>(pre.records.size()),
              static_cast<long long>(ingest.report.total_rejections()));
  if (n > 0) {
    std::printf("  deaths      %8.0f (%.1f%%)\n", deaths, 100.0 * deaths / n);
    std::printf("  discharges  %8.0f (%.1f%%)\n", discharges, 100.0 * discharges / n);
    std::printf("  censored    %8.0f (%.1f%%)\n", censored, 100.0 * censored / n);
  }
}

void run_cif(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  const auto records = read_analysis_csv(cfg.input);
  if (records.empty()) throw ValidationError("analysis table is empty");

  const auto summaries = grouped_cif_summaries(records, cfg);

  CsvWriter out(out_path(cfg, "cif_summary.csv"));
  out.row({"group", "hfr", "hfr_lo", "hfr_hi", "median_los_death", "los_death_lo",
           "los_death_hi", "median_los_discharge", "los_discharge_lo", "los_discharge_hi",
           "hfr_display", "los_death_display", "los_discharge_display"});
  for (const auto& s : summaries) {
    if (s.empty) {
      out.row({s.group, "-", "-", "-", "-", "-", "-", "-", "-", "-", "-", "-", "-"});
      continue;
    }
    std::vector<std::string> row = {s.group, format_double(s.hfr.risk),
                                    format_double(s.hfr.ci_lower),
                                    format_double(s.hfr.ci_upper)};
    if (s.has_deaths) {
      row.insert(row.end(), {format_double(s.median_death.median_days),
                             format_double(s.median_death.ci_lower),
                             format_double(s.median_death.ci_upper)});
    } else {
      row.insert(row.end(), {"-", "-", "-"});
    }
    if (s.has_discharges) {
      row.insert(row.end(), {format_double(s.median_discharge.median_days),
                             format_double(s.median_discharge.ci_lower),
                             format_double(s.median_discharge.ci_upper)});
    } else {
      row.insert(row.end(), {"-", "-", "-"});
    }
    row.push_back(format_percent_ci(s.hfr.risk, s.hfr.ci_lower, s.hfr.ci_upper));
    row.push_back(s.has_deaths
                      ? format_days_ci(s.median_death.median_days, s.median_death.ci_lower,
                                       s.median_death.ci_upper)
                      : "-");
    row.push_back(s.has_discharges
                      ? format_days_ci(s.median_discharge.median_days,
                                       s.median_discharge.ci_lower,
                                       s.median_discharge.ci_upper)
                      : "-");
    out.row(row);
  }

  // Full step curves per group, for plotting.
  auto group_label = [&cfg](const AnalysisRecord& rec) {
    std::string label;
    for (const auto& factor : cfg.group_by) {
      const std::string* lvl = rec.level(factor);
      if (!label.empty()) label.push_back('|');
      label += factor + "=" + (lvl ? *lvl : "");
    }
    return label.empty() ? std::string("all") : label;
  };
  for (const auto& s : summaries) {
    if (s.empty) continue;
    std::vector<Obs> members;
    for (const auto& rec : records) {
      if (group_label(rec) == s.group) members.push_back(to_obs(rec));
    }
    const AjEstimate est = aalen_johansen(build_event_table(members));
    write_curves_csv(est, out_path(cfg, "curves_" + sanitize_filename(s.group) + ".csv"));
  }
}

void run_fit(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  const auto all_records = read_analysis_csv(cfg.input);
  if (all_records.empty()) throw ValidationError("analysis table is empty");

  const auto mains = cfg.resolved_main_effects();
  const auto strata = cfg.resolved_strata();
  std::vector<std::string> used = mains;
  used.insert(used.end(), strata.begin(), strata.end());
  auto [records, dropped] = complete_cases(all_records, used);
  if (records.empty()) {
    throw ValidationError("no records have complete information for the fit");
  }
  if (dropped > 0) {
    std::printf("dropped %lld records with incomplete factor information\n",
                static_cast<long long>(dropped));
  }

  const CovariateSchema schema = discover_schema(records, mains, strata, cfg.references);
  const FgModel model = fit_fine_gray(records, schema, fg_options(cfg));
  const HazardRatioTable table = hazard_ratios(model);

  write_hr_table_csv(table, out_path(cfg, "hr_table.csv"));
  write_model_json(model, table, out_path(cfg, "model.json"));

  // Baseline-CIF export: predicted curve at reference levels per stratum.
  CsvWriter curves(out_path(cfg, "predicted_cif.csv"));
  curves.row({"stratum", "time_days", "cif_death"});
  for (const auto& label : model.strata) {
    const StepCurve curve = predict_cif(model, {}, label);
    for (std::size_t j = 0; j < curve.times.size(); ++j) {
      curves.row({label.empty() ? "(none)" : label, format_double(curve.times[j]),
                  format_double(curve.values[j])});
    }
  }
  std::printf("fit: %d coefficients, %zu strata, %d iterations\n",
              int(model.beta.size()), model.strata.size(),
              model.diagnostics.iterations);
}

void run_sensitivity_cmd(const RunConfig& cfg) {
  ensure_out_dir(cfg);
  IngestResult ingest = ingest_cohort_file(cfg.input);

  SensitivityFitConfig config;
  RunConfig monthcfg = cfg;
  monthcfg.month_source = "onset";
  config.main_effects = monthcfg.resolved_main_effects();
  config.stratum_factors = monthcfg.resolved_strata();
  config.references = cfg.references;
  config.preprocess = preprocess_options(cfg);
  config.fit = fg_options(cfg);

  ShiftSpec spec;
  spec.shifts = cfg.shifts;

  const SensitivityResult result = run_sensitivity(ingest.records, config, spec);

  CsvWriter out(out_path(cfg, "sensitivity.csv"));
  out.row({"shift_days", "characteristic", "level", "hazard_ratio", "ci_lower",
           "ci_upper"});
  for (const auto& fit : result.fits) {
    for (const auto& row : fit.table.rows) {
      if (row.is_reference) {
        out.row({std::to_string(fit.shift_days), row.characteristic, row.level, "1", "",
                 ""});
      } else {
        out.row({std::to_string(fit.shift_days), row.characteristic, row.level,
                 format_double(row.hazard_ratio), format_double(row.ci_lower),
                 format_double(row.ci_upper)});
      }
    }
  }
  std::printf("sensitivity: %zu shifts fitted, %lld records lacked onset dates\n",
              result.fits.size(), static_cast<long long>(result.excluded_no_onset));
}

void run_simulate(const RunConfig& cfg, const std::string& spec_path) {
  ensure_out_dir(cfg);
  CohortSpec spec = cohort_spec_from_json_file(spec_path);
  if (cfg.seed != 0) spec.seed = cfg.seed;
  const GeneratedCohort cohort = generate_cohort(spec, cfg.n_threads);
  write_cohort_csv(cohort.admissions, out_path(cfg, "cohort.csv"));
  write_truth_csv(cohort.truth, spec, out_path(cfg, "truth.csv"));

  double deaths = 0, discharges = 0, censored = 0;
  for (const auto& t : cohort.truth) {
    if (t.true_time > t.censor_time) {
      ++censored;
    } else if (t.true_cause == 1) {
      ++deaths;
    } else {
      ++discharges;
    }
  }
  const double n = double(cohort.truth.size());
  std::printf("simulated n=%lld: death %.3f, discharge %.3f, censored %.3f\n",
              static_cast<long long>(spec.n), deaths / n, discharges / n, censored / n);
}

}  // namespace crivet
