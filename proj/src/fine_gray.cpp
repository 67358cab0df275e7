#include "crivet/fine_gray.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include "crivet/errors.hpp"
#include "crivet/threads.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace crivet {

// ---------------------------------------------------------------------------
// Design matrix and strata

DesignMatrix build_design(const std::vector<AnalysisRecord>& records,
                          const CovariateSchema& schema) {
  DesignMatrix design;
  const std::set<std::string> strata_set(schema.stratum_factors.begin(),
                                         schema.stratum_factors.end());

  struct Column {
    const FactorSpec* factor;
    std::string level;
  };
  std::vector<Column> columns;
  for (const auto& factor : schema.factors) {
    if (strata_set.count(factor.name)) continue;
    if (std::find(factor.levels.begin(), factor.levels.end(), factor.reference) ==
        factor.levels.end()) {
      throw ValidationError("reference level '" + factor.reference +
                            "' not among levels of factor " + factor.name);
    }
    for (const auto& level : factor.levels) {
      if (level == factor.reference) continue;
      columns.push_back({&factor, level});
    }
  }

  const std::size_t n = records.size();
  std::vector<std::vector<double>> cols(columns.size(), std::vector<double>(n, 0.0));
  std::vector<std::int64_t> level_count(columns.size(), 0);

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const std::string* lvl = records[i].level(columns[c].factor->name);
      if (!lvl) {
        throw ValidationError("record " + records[i].subject_id + " lacks factor " +
                              columns[c].factor->name);
      }
      if (std::find(columns[c].factor->levels.begin(), columns[c].factor->levels.end(),
                    *lvl) == columns[c].factor->levels.end()) {
        throw ValidationError("level '" + *lvl + "' of factor " +
                              columns[c].factor->name + " not in schema");
      }
      if (*lvl == columns[c].level) {
        cols[c][i] = 1.0;
        ++level_count[c];
      }
    }
  }

  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    if (level_count[c] > 0) {
      keep.push_back(c);
    } else {
      design.pruned.push_back(columns[c].factor->name + "=" + columns[c].level);
    }
  }

  design.x.resize(Eigen::Index(n), Eigen::Index(keep.size()));
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const auto& col = columns[keep[k]];
    design.col_names.push_back(col.factor->name + "=" + col.level);
    design.col_factor.push_back(col.factor->name);
    design.col_level.push_back(col.level);
    for (std::size_t i = 0; i < n; ++i) design.x(Eigen::Index(i), Eigen::Index(k)) = cols[keep[k]][i];
  }
  return design;
}

std::string stratum_label(const AnalysisRecord& rec, const CovariateSchema& schema) {
  std::string label;
  for (const auto& name : schema.stratum_factors) {
    const std::string* lvl = rec.level(name);
    if (!lvl) {
      throw ValidationError("record " + rec.subject_id + " lacks stratum factor " + name);
    }
    if (!label.empty()) label.push_back('|');
    label += name + "=" + *lvl;
  }
  return label;
}

FgData prepare_fg_data(const std::vector<AnalysisRecord>& records,
                       const CovariateSchema& schema, const DesignMatrix& design,
                       const FgOptions& opts) {
  FgData data;
  data.x = design.x;
  data.obs = to_obs(records);
  data.inv_g_left.assign(records.size(), 0.0);

  data.row_offsets.reserve(records.size() + 1);
  data.row_offsets.push_back(0);
  for (Eigen::Index i = 0; i < data.x.rows(); ++i) {
    for (Eigen::Index c = 0; c < data.x.cols(); ++c) {
      if (data.x(i, c) != 0.0) data.row_cols.push_back(int(c));
    }
    data.row_offsets.push_back(int(data.row_cols.size()));
  }

  std::map<std::string, std::vector<int>> by_label;
  for (std::size_t i = 0; i < records.size(); ++i) {
    by_label[stratum_label(records[i], schema)].push_back(int(i));
  }

  const CensoringKm pooled = CensoringKm::estimate(data.obs);

  for (auto& [label, indices] : by_label) {
    FgData::Stratum s;
    s.label = label;

    std::vector<Obs> local;
    local.reserve(indices.size());
    std::int64_t n_censored = 0;
    double death_weight = 0.0;
    for (int i : indices) {
      local.push_back(data.obs[std::size_t(i)]);
      if (data.obs[std::size_t(i)].cause == 0) ++n_censored;
      if (data.obs[std::size_t(i)].cause == 1) death_weight += data.obs[std::size_t(i)].weight;
    }
    s.death_weight = death_weight;
    if (death_weight <= 0.0) {
      data.dropped_strata.push_back(label);
      continue;
    }

    const bool use_local_g =
        !schema.stratum_factors.empty() && n_censored >= opts.pooled_g_min_censorings;
    s.g = use_local_g ? CensoringKm::estimate(local) : pooled;

    // Total order (time, cause, weight, design row) so the within-tie
    // accumulation order is independent of the input permutation.
    s.order = indices;
    std::sort(s.order.begin(), s.order.end(), [&data](int a, int b) {
      const Obs& oa = data.obs[std::size_t(a)];
      const Obs& ob = data.obs[std::size_t(b)];
      if (oa.time != ob.time) return oa.time < ob.time;
      if (oa.cause != ob.cause) return oa.cause < ob.cause;
      if (oa.weight != ob.weight) return oa.weight < ob.weight;
      for (Eigen::Index c = 0; c < data.x.cols(); ++c) {
        if (data.x(a, c) != data.x(b, c)) return data.x(a, c) < data.x(b, c);
      }
      return false;
    });
    std::size_t i = 0;
    while (i < s.order.size()) {
      const double t = data.obs[std::size_t(s.order[i])].time;
      s.group_start.push_back(int(i));
      s.group_time.push_back(t);
      bool has_death = false;
      for (; i < s.order.size() && data.obs[std::size_t(s.order[i])].time == t; ++i) {
        if (data.obs[std::size_t(s.order[i])].cause == 1) has_death = true;
      }
      if (has_death) s.death_groups.push_back(int(s.group_time.size()) - 1);
    }
    s.group_start.push_back(int(s.order.size()));

    s.g_left.resize(s.group_time.size());
    for (std::size_t g = 0; g < s.group_time.size(); ++g) {
      s.g_left[g] = s.g.at_left(s.group_time[g]);
    }
    for (int i2 : s.order) {
      const Obs& o = data.obs[std::size_t(i2)];
      if (o.cause == 2) {
        const double g_at = s.g.at_left(o.time);
        if (g_at <= 0.0) {
          throw NumericalError("censoring support exhausted at discharge time " +
                               std::to_string(o.time) + " in stratum '" + label + "'");
        }
        data.inv_g_left[std::size_t(i2)] = 1.0 / g_at;
      }
    }
    data.strata.push_back(std::move(s));
  }
  if (data.strata.empty()) {
    throw ValidationError("no stratum contains a death event");
  }
  return data;
}

// ---------------------------------------------------------------------------
// Likelihood kernels

namespace {

// Per-stratum Breslow quantities in three passes over the tie groups.
// Risk-set sums split into an at-risk part A (subjects with T >= t, suffix
// sums) and a returned part B (discharged subjects with T < t, prefix sums
// scaled by G(t-)); both are built by additions only. Per-record updates use
// the set-column lists of the binary design, so a record costs nnz^2 rather
// than p^2.
FgQuantities stratum_quantities(const FgData& data, const FgData::Stratum& s,
                                const Eigen::VectorXd& beta) {
  const int p = data.n_params();
  FgQuantities out;
  out.score = Eigen::VectorXd::Zero(p);
  out.info = Eigen::MatrixXd::Zero(p, p);

  const std::size_t n_local = s.order.size();
  const std::size_t n_groups = s.group_time.size();

  auto cols_begin = [&data](int i) { return data.row_cols.data() + data.row_offsets[std::size_t(i)]; };
  auto cols_end = [&data](int i) { return data.row_cols.data() + data.row_offsets[std::size_t(i) + 1]; };

  // Centred linear predictor; cancels exactly in every contribution below.
  std::vector<double> eta(n_local);
  double mean_eta = 0.0;
  for (std::size_t k = 0; k < n_local; ++k) {
    const int i = s.order[k];
    double e = 0.0;
    for (const int* c = cols_begin(i); c != cols_end(i); ++c) e += beta[*c];
    eta[k] = e;
    mean_eta += e;
  }
  mean_eta /= double(n_local);
  std::vector<double> risk(n_local);  // w_i * exp(eta_i - mean)
  for (std::size_t k = 0; k < n_local; ++k) {
    risk[k] = data.obs[std::size_t(s.order[k])].weight * std::exp(eta[k] - mean_eta);
  }

  const std::size_t n_death_groups = s.death_groups.size();
  std::vector<double> s0(n_death_groups, 0.0);
  Eigen::MatrixXd s1(p, Eigen::Index(n_death_groups));
  std::vector<double> coef_a(n_death_groups, 0.0);  // d_g / S0_g for pass 3

  // Pass 1 (descending): at-risk sums A0/A1 at each death group.
  {
    double a0 = 0.0;
    Eigen::VectorXd a1 = Eigen::VectorXd::Zero(p);
    std::size_t dg = n_death_groups;
    for (std::size_t g = n_groups; g-- > 0;) {
      for (int k = s.group_start[g]; k < s.group_start[g + 1]; ++k) {
        const int i = s.order[std::size_t(k)];
        const double r = risk[std::size_t(k)];
        a0 += r;
        for (const int* c = cols_begin(i); c != cols_end(i); ++c) a1[*c] += r;
      }
      if (dg > 0 && s.death_groups[dg - 1] == int(g)) {
        --dg;
        s0[dg] = a0;
        if (p > 0) s1.col(Eigen::Index(dg)) = a1;
      }
    }
  }

  // Pass 2 (ascending): returned-risk sums, likelihood, score, and the
  // B2 and mean-outer-product parts of the information.
  {
    double b0 = 0.0;
    Eigen::VectorXd b1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd b2 = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd xbar(p);
    std::size_t dg = 0;
    for (std::size_t g = 0; g < n_groups; ++g) {
      if (dg < n_death_groups && s.death_groups[dg] == int(g)) {
        const double g_left = s.g_left[g];
        const double s0_g = s0[dg] + g_left * b0;
        if (!(s0_g > 0.0) || !std::isfinite(s0_g)) {
          throw NumericalError("non-finite risk-set sum at time " +
                               std::to_string(s.group_time[g]) + " in stratum '" +
                               s.label + "'");
        }
        double d_g = 0.0, eta_sum = 0.0;
        for (int k = s.group_start[g]; k < s.group_start[g + 1]; ++k) {
          const std::size_t idx = std::size_t(k);
          const int i = s.order[idx];
          const Obs& o = data.obs[std::size_t(i)];
          if (o.cause != 1) continue;
          d_g += o.weight;
          eta_sum += o.weight * (eta[idx] - mean_eta);
          for (const int* c = cols_begin(i); c != cols_end(i); ++c) {
            out.score[*c] += o.weight;
          }
        }
        out.loglik += eta_sum - d_g * std::log(s0_g);
        if (p > 0) {
          xbar = (s1.col(Eigen::Index(dg)) + g_left * b1) / s0_g;
          out.score.noalias() -= d_g * xbar;
          out.info.noalias() += (d_g * g_left / s0_g) * b2;
          out.info.noalias() -= d_g * xbar * xbar.transpose();
        }
        coef_a[dg] = d_g / s0_g;
        ++dg;
      }
      // Discharged members of this group join the returned risk set for all
      // later death times (strictly greater t).
      for (int k = s.group_start[g]; k < s.group_start[g + 1]; ++k) {
        const std::size_t idx = std::size_t(k);
        const int i = s.order[idx];
        const Obs& o = data.obs[std::size_t(i)];
        if (o.cause != 2) continue;
        const double rho = risk[idx] * data.inv_g_left[std::size_t(i)];
        b0 += rho;
        for (const int* c1 = cols_begin(i); c1 != cols_end(i); ++c1) {
          b1[*c1] += rho;
          for (const int* c2 = cols_begin(i); c2 != cols_end(i); ++c2) {
            b2(*c1, *c2) += rho;
          }
        }
      }
    }
  }

  // Pass 3 (descending): the A2 part of the information.
  if (p > 0) {
    Eigen::MatrixXd a2 = Eigen::MatrixXd::Zero(p, p);
    std::size_t dg = n_death_groups;
    for (std::size_t g = n_groups; g-- > 0;) {
      for (int k = s.group_start[g]; k < s.group_start[g + 1]; ++k) {
        const std::size_t idx = std::size_t(k);
        const int i = s.order[idx];
        const double r = risk[idx];
        for (const int* c1 = cols_begin(i); c1 != cols_end(i); ++c1) {
          for (const int* c2 = cols_begin(i); c2 != cols_end(i); ++c2) {
            a2(*c1, *c2) += r;
          }
        }
      }
      if (dg > 0 && s.death_groups[dg - 1] == int(g)) {
        --dg;
        out.info.noalias() += coef_a[dg] * a2;
      }
    }
  }
  return out;
}

}  // namespace

FgQuantities fg_log_partial_likelihood(const FgData& data, const Eigen::VectorXd& beta,
                                       int n_threads) {
  const int p = data.n_params();
  if (beta.size() != p) throw ValidationError("beta length does not match design");
  if (n_threads <= 0) n_threads = effective_threads();

  const int n_strata = int(data.strata.size());
  std::vector<FgQuantities> partial(static_cast<std::size_t>(n_strata));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_strata));

#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(n_threads)
#endif
  for (int si = 0; si < n_strata; ++si) {
    try {
      partial[std::size_t(si)] = stratum_quantities(data, data.strata[std::size_t(si)], beta);
    } catch (...) {
      errors[std::size_t(si)] = std::current_exception();
    }
  }
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }

  FgQuantities out;
  out.score = Eigen::VectorXd::Zero(p);
  out.info = Eigen::MatrixXd::Zero(p, p);
  for (const auto& q : partial) {  // fixed stratum order: bit-reproducible
    out.loglik += q.loglik;
    out.score += q.score;
    out.info += q.info;
  }
  return out;
}

FgQuantities fg_log_partial_likelihood_reference(const FgData& data,
                                                 const Eigen::VectorXd& beta) {
  const int p = data.n_params();
  if (beta.size() != p) throw ValidationError("beta length does not match design");
  FgQuantities out;
  out.score = Eigen::VectorXd::Zero(p);
  out.info = Eigen::MatrixXd::Zero(p, p);

  for (const auto& s : data.strata) {
    std::vector<double> eta(s.order.size());
    double mean_eta = 0.0;
    for (std::size_t k = 0; k < s.order.size(); ++k) {
      eta[k] = p > 0 ? data.x.row(s.order[k]).dot(beta) : 0.0;
      mean_eta += eta[k];
    }
    mean_eta /= double(s.order.size());

    for (int g : s.death_groups) {
      const double t = s.group_time[std::size_t(g)];
      double s0 = 0.0;
      Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
      Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
      for (std::size_t k = 0; k < s.order.size(); ++k) {
        const Eigen::Index i = s.order[k];
        const Obs& o = data.obs[std::size_t(i)];
        const double w = fg_weight(o, t, s.g) * o.weight * std::exp(eta[k] - mean_eta);
        if (w == 0.0) continue;
        s0 += w;
        if (p > 0) {
          s1.noalias() += w * data.x.row(i).transpose();
          s2.noalias() += w * data.x.row(i).transpose() * data.x.row(i);
        }
      }
      double d_g = 0.0, eta_sum = 0.0;
      Eigen::VectorXd x_deaths = Eigen::VectorXd::Zero(p);
      for (int k = s.group_start[std::size_t(g)]; k < s.group_start[std::size_t(g) + 1]; ++k) {
        const Eigen::Index i = s.order[std::size_t(k)];
        const Obs& o = data.obs[std::size_t(i)];
        if (o.cause != 1) continue;
        d_g += o.weight;
        eta_sum += o.weight * (eta[std::size_t(k)] - mean_eta);
        if (p > 0) x_deaths.noalias() += o.weight * data.x.row(i).transpose();
      }
      out.loglik += eta_sum - d_g * std::log(s0);
      if (p > 0) {
        const Eigen::VectorXd xbar = s1 / s0;
        out.score.noalias() += x_deaths - d_g * xbar;
        out.info.noalias() += d_g * (s2 / s0 - xbar * xbar.transpose());
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

// Breslow baseline at the converged beta, one jump per death time.
void compute_baseline(const FgData& data, const Eigen::VectorXd& beta, FgModel& model) {
  for (const auto& s : data.strata) {
    std::vector<double> times, jumps;
    std::vector<double> risk(s.order.size());
    for (std::size_t k = 0; k < s.order.size(); ++k) {
      const int i = s.order[k];
      double eta = 0.0;
      for (int c = data.row_offsets[std::size_t(i)]; c < data.row_offsets[std::size_t(i) + 1]; ++c) {
        eta += beta[data.row_cols[std::size_t(c)]];
      }
      risk[k] = data.obs[std::size_t(i)].weight * std::exp(eta);
    }

    const std::size_t n_groups = s.group_time.size();
    std::vector<double> a0_at(s.death_groups.size(), 0.0);
    {
      double a0 = 0.0;
      std::size_t dg = s.death_groups.size();
      for (std::size_t g = n_groups; g-- > 0;) {
        for (int k = s.group_start[g]; k < s.group_start[g + 1]; ++k) {
          a0 += risk[std::size_t(k)];
        }
        if (dg > 0 && s.death_groups[dg - 1] == int(g)) a0_at[--dg] = a0;
      }
    }
    double b0 = 0.0;
    std::size_t dg = 0;
    for (std::size_t g = 0; g < n_groups; ++g) {
      if (dg < s.death_groups.size() && s.death_groups[dg] == int(g)) {
        double d_g = 0.0;
        for (int k = s.group_start[g]; k < s.group_start[g + 1]; ++k) {
          const Obs& o = data.obs[std::size_t(s.order[std::size_t(k)])];
          if (o.cause == 1) d_g += o.weight;
        }
        times.push_back(s.group_time[g]);
        jumps.push_back(d_g / (a0_at[dg] + s.g_left[g] * b0));
        ++dg;
      }
      for (int k = s.group_start[g]; k < s.group_start[g + 1]; ++k) {
        const std::size_t idx = std::size_t(k);
        const Eigen::Index i = s.order[idx];
        if (data.obs[std::size_t(i)].cause == 2) {
          b0 += risk[idx] * data.inv_g_left[std::size_t(i)];
        }
      }
    }

    std::vector<double> cum(jumps.size());
    double run = 0.0;
    for (std::size_t j = 0; j < jumps.size(); ++j) cum[j] = (run += jumps[j]);
    model.strata.push_back(s.label);
    model.baseline_times.push_back(std::move(times));
    model.baseline_jumps.push_back(std::move(jumps));
    model.baseline_cumhaz.push_back(std::move(cum));
  }
}

}  // namespace

int FgModel::stratum_index(const std::string& label) const {
  for (std::size_t i = 0; i < strata.size(); ++i) {
    if (strata[i] == label) return int(i);
  }
  return -1;
}

FgModel fit_fine_gray(const std::vector<AnalysisRecord>& records,
                      const CovariateSchema& schema, const FgOptions& opts) {
  if (records.empty()) throw ValidationError("no records to fit");
  const DesignMatrix design = build_design(records, schema);
  const FgData data = prepare_fg_data(records, schema, design, opts);
  const int p = int(design.x.cols());

  FgModel model;
  model.coef_names = design.col_names;
  model.coef_factor = design.col_factor;
  model.coef_level = design.col_level;
  model.schema = schema;
  model.diagnostics.dropped_strata = data.dropped_strata;
  model.diagnostics.pruned_columns = design.pruned;

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  FgQuantities q = fg_log_partial_likelihood(data, beta, opts.n_threads);

  int iterations = 0;
  bool converged = p == 0;
  while (!converged) {
    if (iterations >= opts.max_iterations) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "Newton-Raphson did not converge after %d iterations "
                    "(loglik %.8g, max |score| %.3g)",
                    iterations, q.loglik, q.score.cwiseAbs().maxCoeff());
      throw NumericalError(buf);
    }
    ++iterations;

    Eigen::LDLT<Eigen::MatrixXd> ldlt(q.info);
    if (ldlt.info() != Eigen::Success) {
      throw NumericalError("information matrix is not positive definite; "
                           "check for collinear design columns");
    }
    const Eigen::VectorXd direction = ldlt.solve(q.score);

    double step = 1.0;
    Eigen::VectorXd beta_new;
    FgQuantities q_new;
    bool improved = false;
    for (int h = 0; h <= opts.max_step_halvings; ++h) {
      beta_new = beta + step * direction;
      q_new = fg_log_partial_likelihood(data, beta_new, opts.n_threads);
      if (std::isfinite(q_new.loglik) && q_new.loglik > q.loglik) {
        improved = true;
        break;
      }
      step *= 0.5;
    }

    for (int k = 0; k < p; ++k) {
      if (std::fabs(beta_new[k]) > opts.separation_threshold) {
        throw NumericalError("monotone likelihood (separation) detected for covariate " +
                             design.col_names[std::size_t(k)]);
      }
    }

    const double delta_ll = std::fabs(q_new.loglik - q.loglik);
    const double rel = delta_ll / (std::fabs(q_new.loglik) + opts.loglik_rel_tol);
    const double max_score = p > 0 ? q_new.score.cwiseAbs().maxCoeff() : 0.0;
    beta = beta_new;
    q = q_new;
    if (rel < opts.loglik_rel_tol && max_score < opts.score_tol) {
      converged = true;
    } else if (!improved) {
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "step halving failed to improve the log-likelihood "
                    "(iteration %d, max |score| %.3g)",
                    iterations, max_score);
      throw NumericalError(buf);
    }
  }

  model.beta = beta;
  if (p > 0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(q.info);
    if (ldlt.info() != Eigen::Success) {
      throw NumericalError("information matrix singular at the optimum");
    }
    model.covariance = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    model.covariance = ((model.covariance + model.covariance.transpose()) / 2.0).eval();
  } else {
    model.covariance.resize(0, 0);
  }
  model.diagnostics.iterations = iterations;
  model.diagnostics.final_loglik = q.loglik;
  model.diagnostics.max_score = p > 0 ? q.score.cwiseAbs().maxCoeff() : 0.0;

  compute_baseline(data, beta, model);
  return model;
}

// ---------------------------------------------------------------------------
// Hazard ratios and prediction

std::string HazardRatioRow::display() const {
  if (is_reference) return "1 (reference category)";
  char buf[96];
  std::snprintf(buf, sizeof(buf), "%.2f (%.2f - %.2f)", hazard_ratio, ci_lower, ci_upper);
  return buf;
}

HazardRatioTable hazard_ratios(const FgModel& model) {
  HazardRatioTable table;
  const std::set<std::string> strata_set(model.schema.stratum_factors.begin(),
                                         model.schema.stratum_factors.end());
  for (const auto& factor : model.schema.factors) {
    if (strata_set.count(factor.name)) continue;
    for (const auto& level : factor.levels) {
      HazardRatioRow row;
      row.characteristic = factor.name;
      row.level = level;
      if (level == factor.reference) {
        row.is_reference = true;
        table.rows.push_back(row);
        continue;
      }
      int idx = -1;
      for (std::size_t k = 0; k < model.coef_names.size(); ++k) {
        if (model.coef_factor[k] == factor.name && model.coef_level[k] == level) {
          idx = int(k);
          break;
        }
      }
      if (idx < 0) continue;  // pruned (unobserved) level
      const double b = model.beta[idx];
      row.se = std::sqrt(std::max(model.covariance(idx, idx), 0.0));
      row.hazard_ratio = std::exp(b);
      row.ci_lower = std::exp(b - 1.96 * row.se);
      row.ci_upper = std::exp(b + 1.96 * row.se);
      table.rows.push_back(row);
    }
  }
  return table;
}

StepCurve predict_cif(const FgModel& model,
                      const std::vector<std::pair<std::string, std::string>>& levels,
                      const std::string& stratum) {
  const int si = model.stratum_index(stratum);
  if (si < 0) throw ValidationError("unknown stratum '" + stratum + "'");

  auto level_of = [&levels](const std::string& factor) -> const std::string* {
    for (const auto& [name, value] : levels) {
      if (name == factor) return &value;
    }
    return nullptr;
  };

  double lp = 0.0;
  const std::set<std::string> strata_set(model.schema.stratum_factors.begin(),
                                         model.schema.stratum_factors.end());
  for (const auto& factor : model.schema.factors) {
    if (strata_set.count(factor.name)) continue;
    const std::string* lvl = level_of(factor.name);
    if (!lvl) continue;  // treated as reference
    if (std::find(factor.levels.begin(), factor.levels.end(), *lvl) ==
        factor.levels.end()) {
      throw ValidationError("unknown level '" + *lvl + "' for factor " + factor.name);
    }
    for (std::size_t k = 0; k < model.coef_names.size(); ++k) {
      if (model.coef_factor[k] == factor.name && model.coef_level[k] == *lvl) {
        lp += model.beta[Eigen::Index(k)];
      }
    }
  }
  const double scale = std::exp(lp);

  // Product integral of the scaled jumps; exact complement of the event-grid
  // product keeps the zero-covariate curve identical to Aalen-Johansen.
  StepCurve curve;
  curve.times = model.baseline_times[std::size_t(si)];
  const auto& jumps = model.baseline_jumps[std::size_t(si)];
  curve.values.resize(curve.times.size());
  double surv = 1.0;
  for (std::size_t j = 0; j < jumps.size(); ++j) {
    surv *= std::max(0.0, 1.0 - jumps[j] * scale);
    curve.values[j] = 1.0 - surv;
  }
  curve.variance.assign(curve.times.size(), 0.0);
  curve.ci_lower = curve.values;
  curve.ci_upper = curve.values;
  return curve;
}

}  // namespace crivet
