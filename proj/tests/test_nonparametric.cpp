#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "crivet/aalen_johansen.hpp"
#include "crivet/errors.hpp"
#include "crivet/event_table.hpp"
#include "crivet/rng.hpp"
#include "testutil.hpp"

using namespace crivet;
using testutil::obs_of;

TEST_CASE("event table: hand tabulation") {
  const auto obs = obs_of({{1, 1}, {2, 2}, {3, 0}});
  const EventTable table = build_event_table(obs);
  REQUIRE(table.times == std::vector<double>{1, 2});
  CHECK(table.n_risk == std::vector<double>{3, 2});
  CHECK(table.d_death == std::vector<double>{1, 0});
  CHECK(table.d_discharge == std::vector<double>{0, 1});
  CHECK(table.c == std::vector<double>{0, 1});  // the tail censoring at t=3
  CHECK(table.censored_before_first == 0);
}

TEST_CASE("event table: all censored gives an empty grid") {
  const auto obs = obs_of({{1, 0}, {2, 0}});
  const EventTable table = build_event_table(obs);
  CHECK(table.times.empty());
  CHECK(table.total_weight == 2);
}

TEST_CASE("event table: ties aggregate") {
  const auto obs = obs_of({{1, 1}, {1, 1}, {1, 1}});
  const EventTable table = build_event_table(obs);
  REQUIRE(table.times.size() == 1);
  CHECK(table.d_death[0] == 3);
  CHECK(table.n_risk[0] == 3);
}

TEST_CASE("event table: censorings at an event time stay at risk through it") {
  const auto obs = obs_of({{1, 1}, {1, 0}, {2, 1}});
  const EventTable table = build_event_table(obs);
  REQUIRE(table.times == std::vector<double>{1, 2});
  CHECK(table.n_risk == std::vector<double>{3, 1});
  CHECK(table.c == std::vector<double>{1, 0});
  // risk chain: n_{j+1} = n_j - d_j - c_j
  CHECK(table.n_risk[1] ==
        table.n_risk[0] - table.d_death[0] - table.d_discharge[0] - table.c[0]);
}

TEST_CASE("event table: empty input is invalid") {
  CHECK_THROWS_AS(build_event_table(std::vector<Obs>{}), ValidationError);
}

TEST_CASE("aalen-johansen: hand product-limit on three records") {
  const auto obs = obs_of({{1, 1}, {2, 2}, {3, 0}});
  const AjEstimate est = aalen_johansen(build_event_table(obs));
  CHECK(est.cif_death.values.back() == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(est.cif_discharge.values.back() == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(est.survival.values.back() == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("aalen-johansen: no events means flat curves") {
  const auto obs = obs_of({{5, 0}, {6, 0}});
  const AjEstimate est = aalen_johansen(build_event_table(obs));
  CHECK(est.cif_death.at(100.0) == 0.0);
  CHECK(est.survival.at(100.0) == 1.0);
}

TEST_CASE("aalen-johansen: single cause reduces to the KM complement") {
  Rng rng(11);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<Obs> obs;
    const int n = 2000 + int(rng.below(8000));
    for (int i = 0; i < n; ++i) {
      const double t = double(rng.below(91));  // day-valued times
      const int cause = rng.u01() < 0.7 ? 1 : 0;
      obs.push_back({t, cause, 1.0});
    }
    const AjEstimate est = aalen_johansen(build_event_table(obs));
    const testutil::KmOracle km = testutil::KmOracle::fit(obs);
    double worst = 0.0;
    for (std::size_t j = 0; j < est.cif_death.times.size(); ++j) {
      worst = std::max(worst, std::fabs(est.cif_death.values[j] -
                                        (1.0 - km.at(est.cif_death.times[j]))));
    }
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("aalen-johansen: definition-level oracle with both causes") {
  Rng rng(13);
  std::vector<Obs> obs;
  for (int i = 0; i < 500; ++i) {
    obs.push_back({rng.u01() * 40.0, int(rng.below(3)), 1.0});
  }
  const AjEstimate est = aalen_johansen(build_event_table(obs));
  const testutil::CifOracle death = testutil::CifOracle::fit(obs, 1);
  const testutil::CifOracle discharge = testutil::CifOracle::fit(obs, 2);
  for (std::size_t j = 0; j < est.cif_death.times.size(); ++j) {
    CHECK(est.cif_death.values[j] ==
          doctest::Approx(death.at(est.cif_death.times[j])).epsilon(1e-12));
    CHECK(est.cif_discharge.values[j] ==
          doctest::Approx(discharge.at(est.cif_death.times[j])).epsilon(1e-12));
  }
}

TEST_CASE("aalen-johansen: structural invariants on random cohorts") {
  Rng rng(17);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<Obs> obs;
    const int n = 50 + int(rng.below(500));
    for (int i = 0; i < n; ++i) {
      const double t = rng.u01() < 0.5 ? double(rng.below(50)) : rng.u01() * 50.0;
      obs.push_back({t, int(rng.below(3)), 1.0});
    }
    const EventTable table = build_event_table(obs);
    const AjEstimate est = aalen_johansen(table);
    double prev_d = 0.0, prev_dis = 0.0, prev_s = 1.0;
    for (std::size_t j = 0; j < table.size(); ++j) {
      const double cd = est.cif_death.values[j];
      const double cdis = est.cif_discharge.values[j];
      const double s = est.survival.values[j];
      CHECK(cd >= prev_d);
      CHECK(cdis >= prev_dis);
      CHECK(s <= prev_s);
      CHECK(std::fabs(cd + cdis + s - 1.0) < 1e-12);
      CHECK(est.cif_death.ci_lower[j] <= cd + 1e-15);
      CHECK(est.cif_death.ci_upper[j] + 1e-15 >= cd);
      CHECK(est.cif_death.ci_lower[j] >= 0.0);
      CHECK(est.cif_death.ci_upper[j] <= 1.0);
      CHECK(est.cif_death.variance[j] >= 0.0);
      prev_d = cd;
      prev_dis = cdis;
      prev_s = s;
    }
  }
}

TEST_CASE("risk at horizon") {
  const auto obs = obs_of({{5, 1}, {10, 1}, {20, 2}, {30, 0}});
  const AjEstimate est = aalen_johansen(build_event_table(obs));

  CHECK(risk_at_horizon(est.cif_death, 90.0).risk ==
        doctest::Approx(est.cif_death.values.back()));
  CHECK(risk_at_horizon(est.cif_death, 1.0).risk == 0.0);
  CHECK_THROWS_AS(risk_at_horizon(est.cif_death, -1.0), ValidationError);

  // Step evaluation between grid points equals the dense re-evaluation.
  for (double h = 0.0; h <= 35.0; h += 0.25) {
    double dense = 0.0;
    for (std::size_t j = 0; j < est.cif_death.times.size(); ++j) {
      if (est.cif_death.times[j] <= h) dense = est.cif_death.values[j];
    }
    CHECK(risk_at_horizon(est.cif_death, h).risk == dense);
  }
}

TEST_CASE("weighted median: tie rule on the conditional distribution") {
  SUBCASE("even split crosses exactly at one half") {
    const auto obs = obs_of({{2, 1}, {4, 1}, {6, 1}, {8, 1}});
    const AjEstimate est = aalen_johansen(build_event_table(obs));
    CHECK(weighted_median_los(est.cif_death) == doctest::Approx(5.0));
  }
  SUBCASE("single event") {
    const auto obs = obs_of({{7, 1}});
    const AjEstimate est = aalen_johansen(build_event_table(obs));
    CHECK(weighted_median_los(est.cif_death) == doctest::Approx(7.0));
  }
  SUBCASE("tied times at the median") {
    const auto obs = obs_of({{3, 1}, {5, 1}, {5, 1}, {7, 1}});
    const AjEstimate est = aalen_johansen(build_event_table(obs));
    CHECK(weighted_median_los(est.cif_death) == doctest::Approx(5.0));
  }
  SUBCASE("no events of the cause") {
    const auto obs = obs_of({{3, 2}});
    const AjEstimate est = aalen_johansen(build_event_table(obs));
    CHECK_THROWS_AS(weighted_median_los(est.cif_death), ValidationError);
  }
}

TEST_CASE("weighted median: enumeration oracle on random cohorts") {
  Rng rng(23);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<Obs> obs;
    const int n = 10 + int(rng.below(60));
    bool any_death = false;
    for (int i = 0; i < n; ++i) {
      const int cause = int(rng.below(3));
      any_death |= cause == 1;
      obs.push_back({double(1 + rng.below(15)), cause, 1.0});
    }
    if (!any_death) continue;
    const AjEstimate est = aalen_johansen(build_event_table(obs));

    std::vector<double> jt, jm;
    double prev = 0.0;
    for (std::size_t j = 0; j < est.cif_death.times.size(); ++j) {
      if (est.cif_death.values[j] > prev) {
        jt.push_back(est.cif_death.times[j]);
        jm.push_back(est.cif_death.values[j] - prev);
      }
      prev = est.cif_death.values[j];
    }
    CHECK(weighted_median_los(est.cif_death) ==
          doctest::Approx(testutil::median_oracle(jt, jm)).epsilon(1e-12));
  }
}

TEST_CASE("median bootstrap: parallel replicates match the serial run") {
  Rng rng(29);
  std::vector<Obs> obs;
  for (int i = 0; i < 400; ++i) {
    obs.push_back({rng.u01() * 30.0, int(rng.below(3)), 1.0});
  }
  const MedianLosEstimate serial = median_los_with_ci(obs, Event::Death, 200, 5, 1);
  const MedianLosEstimate parallel = median_los_with_ci(obs, Event::Death, 200, 5, 4);
  CHECK(serial.median_days == parallel.median_days);
  CHECK(serial.ci_lower == parallel.ci_lower);
  CHECK(serial.ci_upper == parallel.ci_upper);
  CHECK(serial.ci_lower <= serial.median_days);
  CHECK(serial.ci_upper >= serial.median_days);
}

TEST_CASE("median bootstrap: record order does not change the estimate") {
  Rng rng(31);
  std::vector<Obs> obs;
  for (int i = 0; i < 300; ++i) {
    obs.push_back({double(rng.below(40)), int(rng.below(3)), 1.0});
  }
  const MedianLosEstimate a = median_los_with_ci(obs, Event::Death, 100, 9, 2);
  std::reverse(obs.begin(), obs.end());
  const MedianLosEstimate b = median_los_with_ci(obs, Event::Death, 100, 9, 2);
  CHECK(a.median_days == b.median_days);
  CHECK(a.ci_lower == b.ci_lower);
  CHECK(a.ci_upper == b.ci_upper);
}
