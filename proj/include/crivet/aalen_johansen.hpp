#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crivet/event_table.hpp"

namespace crivet {

// Right-continuous step function on the event grid. value(t) for t before the
// first grid point is `value_at_origin`.
struct StepCurve {
  std::vector<double> times;
  std::vector<double> values;
  std::vector<double> variance;
  std::vector<double> ci_lower;
  std::vector<double> ci_upper;
  double value_at_origin = 0.0;

  double at(double t) const;
  double ci_lower_at(double t) const;
  double ci_upper_at(double t) const;
};

struct AjEstimate {
  StepCurve cif_death;
  StepCurve cif_discharge;
  StepCurve survival;  // value_at_origin = 1
};

// Cause-specific cumulative incidence with the Aalen-type plug-in variance
// and complementary log-log confidence intervals, plus the companion overall
// survival curve (Greenwood variance). C_death + C_discharge + S == 1 on the
// grid up to rounding.
AjEstimate aalen_johansen(const EventTable& table, double z = 1.96);

struct RiskAtHorizon {
  double risk = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
};

// Step-function evaluation of a CIF and its CI band at a horizon (days).
RiskAtHorizon risk_at_horizon(const StepCurve& cif, double horizon);

struct MedianLosEstimate {
  Event cause = Event::Death;
  double median_days = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  int failed_replicates = 0;  // bootstrap draws with no event of the cause
};

// Median of the cause-conditional event-time distribution C_k(t)/C_k(t_max).
// When the conditional CDF hits 1/2 exactly at a jump, the tied crossing is
// resolved by averaging that time and the next cause-k jump time, weighted by
// their jump masses. Throws when the cause has no events.
double weighted_median_los(const StepCurve& cif);

// Point estimate plus a seeded nonparametric bootstrap percentile CI over
// `bootstrap_b` subject resamples. Replicate r draws from substream
// (seed, r); parallel and serial execution give identical output.
MedianLosEstimate median_los_with_ci(std::span<const Obs> records, Event cause,
                                     int bootstrap_b, std::uint64_t seed,
                                     int n_threads = 0);

}  // namespace crivet
