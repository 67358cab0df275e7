#pragma once

#include <span>
#include <vector>

#include "crivet/event_table.hpp"

namespace crivet {

// Kaplan-Meier estimate of the censoring distribution G(t) = P(C > t):
// censorings play the event role, deaths/discharges are censored-for-G.
// Ties keep the event-after-censoring ordering consistent with the event
// table, i.e. a subject whose event falls on a censoring time is still in
// that censoring risk set.
class CensoringKm {
public:
  static CensoringKm estimate(std::span<const Obs> records);

  double at(double t) const;       // right-continuous G(t)
  double at_left(double t) const;  // left-continuous G(t-)

  const std::vector<double>& jump_times() const { return times_; }

private:
  std::vector<double> times_;   // censoring times with positive mass
  std::vector<double> values_;  // G at those times
};

// Fine-Gray risk-set weight for one subject at a cause-1 event time:
//   1                      while under observation and event-free at t-,
//                          or dying at exactly t;
//   G(t-)/G(T_i-)          after a competing (discharge) event at T_i < t;
//   0                      once censored, or after a prior death.
// Throws NumericalError when a needed denominator G(T_i-) is zero while
// mass remains at t.
double fg_weight(const Obs& record, double t, const CensoringKm& g);

}  // namespace crivet
