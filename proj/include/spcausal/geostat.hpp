#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "spcausal/engine.hpp"
#include "spcausal/estimators.hpp"

namespace spcausal {

// Exponential covariance Cov{U(s_i), U(s_j)} = sigma^2 exp(-d_ij / range),
// plus a nugget on the diagonal.
struct GpParams {
  double range = 1.0;
  double sigma = 1.0;
  double nugget = 0.0;

  void validate() const;
};

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixX2d& a, const Eigen::MatrixX2d& b);
Eigen::MatrixXd exp_covariance(const GpParams& params, const Eigen::MatrixX2d& coords);

// Coarse-grid maximum marginal likelihood for (range, sigma, nugget).
GpParams estimate_gp_params(const Eigen::MatrixX2d& coords, const Eigen::VectorXd& values);

// --- distance-adjusted propensity score matching -----------------------------

// D_ij = w |e_i - e_j| + (1-w) d_ij / m, with m the maximum distance between
// any two study locations. Greedy selection without replacement; treated
// units are processed in ascending order of their minimum D.
struct MatchSet {
  struct Pair {
    int treated;
    int control;
    double distance;  // D_ij
  };
  std::vector<Pair> pairs;
  std::vector<int> unmatched_treated;
  double w = 0.5;
};

MatchSet dapsm_match(const Eigen::VectorXd& treated_scores, const Eigen::MatrixX2d& treated_coords,
                     const Eigen::VectorXd& control_scores, const Eigen::MatrixX2d& control_coords,
                     double w);

// --- gridded fields ----------------------------------------------------------

struct Grid {
  double x0 = 0.0, y0 = 0.0;
  double dx = 1.0, dy = 1.0;
  int nx = 1, ny = 1;

  int n_nodes() const { return nx * ny; }
  Eigen::Vector2d node(int k) const {
    return {x0 + (k % nx) * dx, y0 + (k / nx) * dy};
  }
  Eigen::MatrixX2d nodes() const;
  static Grid cover(const Eigen::MatrixX2d& coords, int nx, int ny, double pad = 0.0);
};

// Simple kriging about the plug-in mean: ahat(g) = abar + c_g' C^-1 (a - abar).
// Exact interpolation at the data sites when the nugget is zero. Grid-node
// predictions are independent given the factorization and parallelize.
Eigen::VectorXd krige_impute(const Eigen::MatrixX2d& coords, const Eigen::VectorXd& values,
                             const GpParams& params, const Grid& grid, bool parallel = true);

// K conditional GP realizations of the gridded field (multiple imputation).
Eigen::MatrixXd krige_conditional_draws(const Eigen::MatrixX2d& coords,
                                        const Eigen::VectorXd& values, const GpParams& params,
                                        const Grid& grid, int k_draws, std::uint64_t seed);

// --- kernel-weighted spillover -----------------------------------------------

struct SpilloverKernel {
  enum class Kind { Disc, Gaussian };
  Kind kind = Kind::Disc;
  double radius = 1.0;     // disc
  double bandwidth = 1.0;  // gaussian

  void validate() const;
};

// abar_i = sum_g w(s_i, g) a(g) / sum_g w(s_i, g): normalized quadrature of the
// spillover integral, so a constant field maps to that constant exactly.
Eigen::VectorXd spillover_summary(const Grid& grid, const Eigen::VectorXd& field,
                                  const SpilloverKernel& kernel, const Eigen::MatrixX2d& targets,
                                  bool parallel = true);

// --- point-referenced estimators ---------------------------------------------

// Gaussian-process spatial regression Y = X b + U(s) + eps used by the
// point-referenced estimators; (sigma^2, tau^2, range) move by MH.
struct GpRegressionModel {
  Eigen::MatrixXd design;
  std::vector<std::string> coef_names;
  Eigen::VectorXd response;
  Eigen::MatrixX2d coords;
};

GaussianFit fit_gp_regression(const GpRegressionModel& model, const ChainSettings& settings,
                              Rng rng);

// Regression discontinuity across the boundary of region A: A_i = 1{s_i in A},
// U ~ GP. band_halfwidth < inf keeps only points within that distance of the
// nearest opposite-side point.
FitResult fit_discontinuity(const PointDataset& data,
                            const std::function<bool(double, double)>& in_region,
                            const ChainSettings& settings,
                            double band_halfwidth = std::numeric_limits<double>::infinity());

// Y = a(s_i) beta1 + abar_i beta2 + X gamma + U + eps with abar from the
// kriged, kernel-averaged treatment field. n_imputations > 1 pools the
// posterior draws across conditional field realizations.
struct GeostatInterferenceFit {
  CausalEstimate direct;    // beta1
  CausalEstimate indirect;  // beta2
  PosteriorSummary posterior;
  Eigen::VectorXd abar;  // spillover summaries at the data sites (plug-in field)
};

GeostatInterferenceFit fit_geostat_interference(const PointDataset& data,
                                                const SpilloverKernel& kernel, const Grid& grid,
                                                const ChainSettings& settings,
                                                int n_imputations = 1);

}  // namespace spcausal
