#pragma once

#include <Eigen/Dense>
#include <vector>

#include "spcausal/dataio.hpp"
#include "spcausal/engine.hpp"

namespace spcausal {

// Cubic B-spline basis with 5 degrees of freedom: one interior knot at the
// score median, boundary knots at min/max, clamped (order-4) ends. The five
// basis functions are nonnegative and sum to one on [lo, hi].
struct SplineBasis {
  std::vector<double> knots;  // clamped knot vector, 9 entries
  int degree = 3;

  int n_basis() const { return static_cast<int>(knots.size()) - degree - 1; }
  double lo() const { return knots.front(); }
  double hi() const { return knots.back(); }
  Eigen::VectorXd eval(double x) const;  // x clamped to [lo, hi]
};

// Quantile-knot basis; rejects inputs with fewer than 6 distinct values.
SplineBasis make_spline_basis(const Eigen::VectorXd& scores);

// General-df quantile-knot basis with degree min(3, df-1) and df - degree - 1
// interior knots; used for smooth time adjustments.
SplineBasis make_basis_df(const Eigen::VectorXd& values, int df);

// n x 5 design block f(scores); values outside the boundary knots are clamped
// (a note is printed to stderr). Pure function of (scores, basis).
Eigen::MatrixXd spline_transform(const Eigen::VectorXd& scores, const SplineBasis& basis);

// Propensity-score strata: cut points 0 = T_1 < ... < T_{L+1} = 1 with the
// interior cuts at empirical score quantiles.
struct StrataSpec {
  std::vector<double> cuts;  // size L+1

  int n_strata() const { return static_cast<int>(cuts.size()) - 1; }
  int stratum_of(double score) const;
  std::vector<int> labels(const Eigen::VectorXd& scores) const;

  static StrataSpec single();  // one stratum covering (0,1)
};

StrataSpec build_strata(const Eigen::VectorXd& scores, int L);

struct PropensityFit {
  Eigen::VectorXd scores;      // per observation; in (0,1) for binary, >= 0 generalized
  Eigen::VectorXd alpha_mean;  // treatment-model coefficients (posterior mean)
  Eigen::VectorXd v_mean;      // spatial field (posterior mean, per region)
  PosteriorSummary summary;
  bool binary = true;
};

// Spatial logistic regression logit(e) = X alpha + v, v ~ CAR(rho_v, sigma_v).
// Point scores are posterior means of e. All-treated/all-control data are
// rejected (positivity).
PropensityFit fit_binary_propensity(const ArealDataset& data, const Lattice& lattice,
                                    const ChainSettings& settings);

// Gaussian spatial regression of a continuous treatment, A = X alpha + V + eps;
// the generalized score is the squared fitted residual (A - X alpha_hat - V_hat)^2.
PropensityFit fit_generalized_propensity(const ArealDataset& data, const Lattice& lattice,
                                         const ChainSettings& settings);

// scores appended to the input schema as an extra column
void write_scores_csv(const ArealDataset& data, const Eigen::VectorXd& scores,
                      const std::string& path);

}  // namespace spcausal
