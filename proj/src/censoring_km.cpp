#include "crivet/censoring_km.hpp"

#include <algorithm>
#include <cmath>

#include "crivet/errors.hpp"

namespace crivet {

CensoringKm CensoringKm::estimate(std::span<const Obs> records) {
  if (records.empty()) throw ValidationError("no records for censoring distribution");
  std::vector<Obs> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(), obs_total_order);

  CensoringKm km;
  double at_risk = 0.0;
  for (const auto& r : sorted) at_risk += r.weight;

  double g = 1.0;
  std::size_t i = 0;
  const std::size_t n = sorted.size();
  while (i < n) {
    const double t = sorted[i].time;
    double cens = 0.0, group = 0.0;
    for (; i < n && sorted[i].time == t; ++i) {
      group += sorted[i].weight;
      if (sorted[i].cause == 0) cens += sorted[i].weight;
    }
    if (cens > 0.0) {
      g *= 1.0 - cens / at_risk;
      km.times_.push_back(t);
      km.values_.push_back(g);
    }
    at_risk -= group;
  }
  return km;
}

double CensoringKm::at(double t) const {
  const auto it = std::upper_bound(times_.begin(), times_.end(), t);
  return it == times_.begin() ? 1.0 : values_[std::size_t(it - times_.begin()) - 1];
}

double CensoringKm::at_left(double t) const {
  const auto it = std::lower_bound(times_.begin(), times_.end(), t);
  return it == times_.begin() ? 1.0 : values_[std::size_t(it - times_.begin()) - 1];
}

double fg_weight(const Obs& record, double t, const CensoringKm& g) {
  if (record.time >= t) return 1.0;  // at risk through t- (or event at t)
  if (record.cause != 2) return 0.0; // censored or already dead before t
  const double num = g.at_left(t);
  if (num == 0.0) return 0.0;        // no censoring mass survives to t
  const double den = g.at_left(record.time);
  if (den == 0.0) throw NumericalError("censoring support exhausted before discharge time");
  return num / den;
}

}  // namespace crivet
