#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "crivet/aalen_johansen.hpp"
#include "crivet/censoring_km.hpp"
#include "crivet/cohort.hpp"
#include "crivet/event_table.hpp"

namespace crivet {

// Dummy-coded main-effect design. One column per non-reference level of each
// factor not used for stratification; empty levels are pruned.
struct DesignMatrix {
  Eigen::MatrixXd x;  // n rows, p columns, entries in {0, 1}
  std::vector<std::string> col_names;   // "factor=level"
  std::vector<std::string> col_factor;
  std::vector<std::string> col_level;
  std::vector<std::string> pruned;      // columns dropped for having no mass
};

DesignMatrix build_design(const std::vector<AnalysisRecord>& records,
                          const CovariateSchema& schema);

// Composite stratum label from the schema's stratum factors ("" when none).
std::string stratum_label(const AnalysisRecord& rec, const CovariateSchema& schema);

// Subject data grouped by stratum with everything the likelihood kernels
// need precomputed: per-stratum time ordering, tie groups, censoring
// distribution (per-stratum with pooled fallback), and 1/G(T-) for
// discharged subjects.
struct FgData {
  struct Stratum {
    std::string label;
    std::vector<int> order;          // record indices sorted by time ascending
    std::vector<int> group_start;    // tie-group offsets into `order` (+ end sentinel)
    std::vector<double> group_time;
    std::vector<double> g_left;      // G(t-) per tie group
    std::vector<int> death_groups;   // tie groups containing >= 1 death
    CensoringKm g;
    double death_weight = 0.0;
  };

  Eigen::MatrixXd x;
  // The design is binary, so rows are kept as index lists as well; the
  // kernels touch only the set columns of each record.
  std::vector<int> row_offsets;  // size n+1
  std::vector<int> row_cols;
  std::vector<Obs> obs;
  std::vector<double> inv_g_left;    // 1/G(T_i-) for cause-2 records, else 0
  std::vector<Stratum> strata;
  std::vector<std::string> dropped_strata;  // zero-death strata, excluded from the fit

  int n_params() const { return int(x.cols()); }
};

struct FgOptions {
  int max_iterations = 50;
  double loglik_rel_tol = 1e-9;
  double score_tol = 1e-6;
  int max_step_halvings = 10;
  double separation_threshold = 15.0;  // |beta| beyond this flags separation
  int pooled_g_min_censorings = 10;    // stratum censoring-KM fallback cutoff
  int n_threads = 0;                   // 0 = CRIVET_THREADS / machine default
};

FgData prepare_fg_data(const std::vector<AnalysisRecord>& records,
                       const CovariateSchema& schema, const DesignMatrix& design,
                       const FgOptions& opts = {});

struct FgQuantities {
  double loglik = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd info;  // negated Hessian
};

// Weighted Breslow partial likelihood with exact analytic derivatives.
// O(n p^2) per stratum via running risk-set sums; strata evaluated in
// parallel and reduced in stratum order, so results do not depend on the
// thread count.
FgQuantities fg_log_partial_likelihood(const FgData& data, const Eigen::VectorXd& beta,
                                       int n_threads = 0);

// Definition-level evaluation: every weight w_i(t) computed directly via
// fg_weight and summed per death time, O(n^2 p^2). Kept as the serial
// reference for tests and the benchmark.
FgQuantities fg_log_partial_likelihood_reference(const FgData& data,
                                                 const Eigen::VectorXd& beta);

struct FgDiagnostics {
  int iterations = 0;
  double final_loglik = 0.0;
  double max_score = 0.0;
  std::vector<std::string> dropped_strata;
  std::vector<std::string> pruned_columns;
};

struct FgModel {
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;
  std::vector<std::string> coef_names;
  std::vector<std::string> coef_factor;
  std::vector<std::string> coef_level;
  std::vector<std::string> strata;
  std::vector<std::vector<double>> baseline_times;   // death times per stratum
  std::vector<std::vector<double>> baseline_jumps;   // Breslow increments
  std::vector<std::vector<double>> baseline_cumhaz;  // running sums of the jumps
  CovariateSchema schema;
  FgDiagnostics diagnostics;

  int stratum_index(const std::string& label) const;
};

// Newton-Raphson from beta = 0 with step halving; Breslow ties; covariance
// from the inverse information at the optimum; per-stratum Breslow baseline.
FgModel fit_fine_gray(const std::vector<AnalysisRecord>& records,
                      const CovariateSchema& schema, const FgOptions& opts = {});

struct HazardRatioRow {
  std::string characteristic;  // factor name
  std::string level;
  double hazard_ratio = 1.0;
  double ci_lower = 1.0;
  double ci_upper = 1.0;
  double se = 0.0;
  bool is_reference = false;

  std::string display() const;  // "0.56 (0.52 - 0.61)" / "1 (reference category)"
};

struct HazardRatioTable {
  std::vector<HazardRatioRow> rows;
};

HazardRatioTable hazard_ratios(const FgModel& model);

// Model CIF at given covariate levels within one stratum, via the product
// integral over the Breslow jumps scaled by exp(x'beta). Agrees exactly with
// the Aalen-Johansen death CIF when the design is empty.
StepCurve predict_cif(const FgModel& model,
                      const std::vector<std::pair<std::string, std::string>>& levels,
                      const std::string& stratum);

}  // namespace crivet
