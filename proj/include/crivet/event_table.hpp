#pragma once

#include <span>
#include <vector>

#include "crivet/cohort.hpp"

namespace crivet {

// Minimal per-subject observation used by the estimators: follow-up time,
// terminal cause (0 = censored), positive weight.
struct Obs {
  double time = 0.0;
  int cause = 0;
  double weight = 1.0;
};

Obs to_obs(const AnalysisRecord& rec);
std::vector<Obs> to_obs(const std::vector<AnalysisRecord>& recs);

// Tied-time tabulation over the distinct times with at least one death or
// discharge. Censorings tied with an event time stay at risk through that
// time (censor-after-event); c[j] counts censorings in [t_j, t_{j+1}).
// Counts are weighted sums.
struct EventTable {
  std::vector<double> times;
  std::vector<double> d_death;
  std::vector<double> d_discharge;
  std::vector<double> c;
  std::vector<double> n_risk;       // weight at risk just before t_j (ties included)
  double total_weight = 0.0;
  double censored_before_first = 0.0;

  std::size_t size() const { return times.size(); }
};

// Total order on observations (time, cause, weight); used everywhere a sort
// must not depend on the input permutation.
bool obs_total_order(const Obs& a, const Obs& b);

EventTable build_event_table(std::span<const Obs> records);

// Same tabulation when `records` is already sorted ascending by time and each
// record carries a resampling multiplicity; multiplicity 0 drops the record.
// Single O(n) pass, used by the bootstrap.
EventTable build_event_table_sorted(std::span<const Obs> sorted,
                                    std::span<const double> multiplicity);

}  // namespace crivet
