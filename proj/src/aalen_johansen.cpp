#include "crivet/aalen_johansen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "crivet/errors.hpp"
#include "crivet/rng.hpp"
#include "crivet/threads.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace crivet {

namespace {

std::size_t step_index(const std::vector<double>& times, double t) {
  // Number of grid points <= t.
  return std::size_t(std::upper_bound(times.begin(), times.end(), t) - times.begin());
}

double eval_step(const std::vector<double>& times, const std::vector<double>& values,
                 double origin, double t) {
  const std::size_t k = step_index(times, t);
  return k == 0 ? origin : values[k - 1];
}

// CI for an incidence estimate via log(-log) of the sub-survival 1 - C,
// which keeps the band inside [0, 1].
void cloglog_ci(double c, double var, double z, double& lo, double& hi) {
  if (c <= 0.0) {
    lo = hi = 0.0;
    return;
  }
  if (c >= 1.0 || var <= 0.0) {
    lo = hi = c;
    return;
  }
  const double s = 1.0 - c;
  const double se_t = std::sqrt(var) / (s * std::fabs(std::log(s)));
  lo = 1.0 - std::pow(s, std::exp(-z * se_t));
  hi = 1.0 - std::pow(s, std::exp(z * se_t));
  lo = std::clamp(lo, 0.0, 1.0);
  hi = std::clamp(hi, 0.0, 1.0);
}

void cloglog_ci_survival(double s, double var, double z, double& lo, double& hi) {
  if (s >= 1.0 || var <= 0.0) {
    lo = hi = s;
    return;
  }
  if (s <= 0.0) {
    lo = hi = 0.0;
    return;
  }
  const double se_t = std::sqrt(var) / (s * std::fabs(std::log(s)));
  lo = std::pow(s, std::exp(z * se_t));
  hi = std::pow(s, std::exp(-z * se_t));
  lo = std::clamp(lo, 0.0, 1.0);
  hi = std::clamp(hi, 0.0, 1.0);
}

}  // namespace

double StepCurve::at(double t) const { return eval_step(times, values, value_at_origin, t); }

double StepCurve::ci_lower_at(double t) const {
  return eval_step(times, ci_lower, value_at_origin, t);
}

double StepCurve::ci_upper_at(double t) const {
  return eval_step(times, ci_upper, value_at_origin, t);
}

AjEstimate aalen_johansen(const EventTable& table, double z) {
  AjEstimate est;
  const std::size_t m = table.size();
  est.survival.value_at_origin = 1.0;
  for (StepCurve* curve : {&est.cif_death, &est.cif_discharge, &est.survival}) {
    curve->times = table.times;
    curve->values.resize(m);
    curve->variance.resize(m);
    curve->ci_lower.resize(m);
    curve->ci_upper.resize(m);
  }

  // Product-limit survival and CIF increments share one pass. The Aalen-type
  // CIF variance has terms in [C(t) - C(s)]^2; expanding the square turns the
  // double sum into prefix accumulators, one set per cause.
  double surv_prev = 1.0;
  double cd = 0.0, cdis = 0.0;
  double greenwood = 0.0;

  struct VarAccum {
    double a0 = 0.0, a1 = 0.0, a2 = 0.0;  // all-cause a_s terms weighted by C(s)^{0,1,2}
    double b = 0.0;                       // S(s-)^2 (n-dk) dk / n^3
    double d0 = 0.0, d1 = 0.0;            // cross terms S(s-) dk / n^2, times C(s)
  } vd, vdis;

  for (std::size_t j = 0; j < m; ++j) {
    const double n = table.n_risk[j];
    const double dd = table.d_death[j];
    const double ddis = table.d_discharge[j];
    const double dall = dd + ddis;

    cd += surv_prev * dd / n;
    cdis += surv_prev * ddis / n;
    const double surv = surv_prev * (1.0 - dall / n);

    const double a_s = (n - dall) > 0.0 ? dall / (n * (n - dall)) : 0.0;
    for (auto [acc, dk, c_now] : {std::tuple{&vd, dd, cd}, std::tuple{&vdis, ddis, cdis}}) {
      acc->a0 += a_s;
      acc->a1 += c_now * a_s;
      acc->a2 += c_now * c_now * a_s;
      const double term = surv_prev * dk / (n * n);
      acc->b += surv_prev * term * (n - dk) / n;
      acc->d0 += term;
      acc->d1 += c_now * term;
      const double var = c_now * c_now * acc->a0 - 2.0 * c_now * acc->a1 + acc->a2 +
                         acc->b - 2.0 * (c_now * acc->d0 - acc->d1);
      StepCurve& curve = (acc == &vd) ? est.cif_death : est.cif_discharge;
      curve.values[j] = c_now;
      curve.variance[j] = std::max(var, 0.0);
    }

    if ((n - dall) > 0.0) greenwood += dall / (n * (n - dall));
    est.survival.values[j] = surv;
    est.survival.variance[j] = surv * surv * greenwood;
    surv_prev = surv;
  }

  for (std::size_t j = 0; j < m; ++j) {
    cloglog_ci(est.cif_death.values[j], est.cif_death.variance[j], z,
               est.cif_death.ci_lower[j], est.cif_death.ci_upper[j]);
    cloglog_ci(est.cif_discharge.values[j], est.cif_discharge.variance[j], z,
               est.cif_discharge.ci_lower[j], est.cif_discharge.ci_upper[j]);
    cloglog_ci_survival(est.survival.values[j], est.survival.variance[j], z,
                        est.survival.ci_lower[j], est.survival.ci_upper[j]);
  }
  return est;
}

RiskAtHorizon risk_at_horizon(const StepCurve& cif, double horizon) {
  if (horizon < 0.0) throw ValidationError("negative horizon");
  RiskAtHorizon out;
  out.risk = cif.at(horizon);
  out.ci_lower = cif.ci_lower_at(horizon);
  out.ci_upper = cif.ci_upper_at(horizon);
  return out;
}

double weighted_median_los(const StepCurve& cif) {
  // Jump list of the cause: times with positive CIF increment.
  std::vector<double> jump_times, jump_mass;
  double prev = 0.0;
  for (std::size_t j = 0; j < cif.times.size(); ++j) {
    const double inc = cif.values[j] - prev;
    if (inc > 0.0) {
      jump_times.push_back(cif.times[j]);
      jump_mass.push_back(inc);
    }
    prev = cif.values[j];
  }
  if (jump_times.empty()) throw ValidationError("no events of cause");

  const double total = cif.values.back();
  const double half = 0.5 * total;
  double cum = 0.0;
  for (std::size_t k = 0; k < jump_times.size(); ++k) {
    cum += jump_mass[k];
    if (cum >= half - 1e-12 * total) {
      const bool exact_hit = std::fabs(cum - half) <= 1e-12 * total;
      if (exact_hit && k + 1 < jump_times.size()) {
        const double w0 = jump_mass[k], w1 = jump_mass[k + 1];
        return (jump_times[k] * w0 + jump_times[k + 1] * w1) / (w0 + w1);
      }
      return jump_times[k];
    }
  }
  return jump_times.back();
}

MedianLosEstimate median_los_with_ci(std::span<const Obs> records, Event cause,
                                     int bootstrap_b, std::uint64_t seed,
                                     int n_threads) {
  if (records.empty()) throw ValidationError("no records");
  std::vector<Obs> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(), obs_total_order);

  const EventTable full = build_event_table_sorted(sorted, {});
  const AjEstimate est = aalen_johansen(full);
  const StepCurve& curve = cause == Event::Death ? est.cif_death : est.cif_discharge;

  MedianLosEstimate out;
  out.cause = cause;
  out.median_days = weighted_median_los(curve);

  if (bootstrap_b <= 0) {
    out.ci_lower = out.ci_upper = out.median_days;
    return out;
  }

  const std::size_t n = sorted.size();
  std::vector<double> medians(std::size_t(bootstrap_b),
                              std::numeric_limits<double>::quiet_NaN());
  if (n_threads <= 0) n_threads = effective_threads();

#ifdef _OPENMP
#pragma omp parallel num_threads(n_threads)
#endif
  {
    std::vector<double> counts(n);
#ifdef _OPENMP
#pragma omp for schedule(static)
#endif
    for (int b = 0; b < bootstrap_b; ++b) {
      Rng rng = Rng::substream(seed, std::uint64_t(b));
      std::fill(counts.begin(), counts.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        counts[rng.below(n)] += 1.0;
      }
      const EventTable table = build_event_table_sorted(sorted, counts);
      if (table.times.empty()) continue;
      const AjEstimate boot = aalen_johansen(table);
      const StepCurve& bc = cause == Event::Death ? boot.cif_death : boot.cif_discharge;
      if (bc.values.back() <= 0.0) continue;
      medians[std::size_t(b)] = weighted_median_los(bc);
    }
  }

  std::vector<double> ok;
  ok.reserve(medians.size());
  for (double v : medians) {
    if (std::isnan(v)) {
      ++out.failed_replicates;
    } else {
      ok.push_back(v);
    }
  }
  if (ok.empty()) {
    out.ci_lower = out.ci_upper = out.median_days;
    return out;
  }
  std::sort(ok.begin(), ok.end());
  // Percentile CI, linear interpolation between order statistics.
  auto quantile = [&ok](double q) {
    const double h = q * double(ok.size() - 1);
    const std::size_t lo = std::size_t(h);
    const std::size_t hi = std::min(lo + 1, ok.size() - 1);
    const double frac = h - double(lo);
    return ok[lo] * (1.0 - frac) + ok[hi] * frac;
  };
  out.ci_lower = quantile(0.025);
  out.ci_upper = quantile(0.975);
  return out;
}

}  // namespace crivet
