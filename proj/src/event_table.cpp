#include "crivet/event_table.hpp"

#include <algorithm>

#include "crivet/errors.hpp"

namespace crivet {

Obs to_obs(const AnalysisRecord& rec) {
  return Obs{rec.time_days, static_cast<int>(rec.event), rec.weight};
}

std::vector<Obs> to_obs(const std::vector<AnalysisRecord>& recs) {
  std::vector<Obs> out;
  out.reserve(recs.size());
  for (const auto& r : recs) out.push_back(to_obs(r));
  return out;
}

// Total order: permuting the input can never reorder the sorted sequence,
// which keeps downstream accumulation bit-identical.
bool obs_total_order(const Obs& a, const Obs& b) {
  if (a.time != b.time) return a.time < b.time;
  if (a.cause != b.cause) return a.cause < b.cause;
  return a.weight < b.weight;
}

EventTable build_event_table(std::span<const Obs> records) {
  if (records.empty()) throw ValidationError("no records to tabulate");
  std::vector<Obs> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(), obs_total_order);
  return build_event_table_sorted(sorted, {});
}

EventTable build_event_table_sorted(std::span<const Obs> sorted,
                                    std::span<const double> multiplicity) {
  EventTable table;
  const std::size_t n = sorted.size();

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (sorted[i].weight <= 0.0) throw ValidationError("non-positive record weight");
    const double m = multiplicity.empty() ? 1.0 : multiplicity[i];
    total += m * sorted[i].weight;
  }
  table.total_weight = total;

  double at_risk = total;       // weight with T >= current tie-group time
  double censor_accum = 0.0;    // censoring mass since the last emitted grid point
  bool any_event_yet = false;

  std::size_t i = 0;
  while (i < n) {
    const double t = sorted[i].time;
    double dd = 0.0, ddis = 0.0, cens = 0.0;
    for (; i < n && sorted[i].time == t; ++i) {
      const double w = (multiplicity.empty() ? 1.0 : multiplicity[i]) * sorted[i].weight;
      switch (sorted[i].cause) {
        case 1: dd += w; break;
        case 2: ddis += w; break;
        default: cens += w; break;
      }
    }
    if (dd > 0.0 || ddis > 0.0) {
      if (any_event_yet) {
        table.c.push_back(censor_accum);  // closes the previous interval
      } else {
        table.censored_before_first = censor_accum;
        any_event_yet = true;
      }
      table.times.push_back(t);
      table.d_death.push_back(dd);
      table.d_discharge.push_back(ddis);
      table.n_risk.push_back(at_risk);
      censor_accum = cens;  // tied censorings stay at risk through t, leave after
    } else {
      censor_accum += cens;
    }
    at_risk -= dd + ddis + cens;
  }
  if (any_event_yet) table.c.push_back(censor_accum);
  return table;
}

}  // namespace crivet
