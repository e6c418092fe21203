#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "spcausal/mcmc.hpp"

namespace spcausal {

struct ChainSettings {
  int iterations = 5000;
  int burnin = 1000;
  int thin = 1;
  std::uint64_t seed = 1;
  std::string trace_path;  // optional JSON-lines trace of scalar parameters

  void validate() const;
  int retained() const { return (iterations - burnin + thin - 1) / thin; }
};

enum class FieldKind { None, Car, Iid };

// Region-level random effect layout shared by the samplers.
struct FieldLayout {
  FieldKind kind = FieldKind::None;
  const Lattice* lattice = nullptr;  // required for Car
  int n_regions = 0;
  std::vector<std::vector<int>> obs_by_region;

  static FieldLayout none();
  static FieldLayout car(const Lattice& lattice, const std::vector<int>& region_of_obs);
  static FieldLayout iid(int n_regions, const std::vector<int>& region_of_obs);
};

// --- Gaussian spatial regression: y = X b + u_region + eps ------------------

struct GaussianState {
  Eigen::VectorXd coef;
  double tau2 = 1.0;
  Eigen::VectorXd u;  // size 0 when there is no field
  double sig2_u = 1.0;
  double rho_u = 0.5;
};

struct SweepAccept {
  double rho_u = 0.0;  // 0/1 for the rho MH step this sweep
};

// One Metropolis-within-Gibbs sweep. Update order: coefficients, field
// (region 0..N-1 sequentially), sum-to-zero recentering compensated on
// level_cols, field scale, field dependence (adaptive RW on logit scale),
// residual variance. The design may change between sweeps (latent columns).
SweepAccept gaussian_gibbs_sweep(GaussianState& st, const Eigen::MatrixXd& design,
                                 const Eigen::VectorXd& response, const FieldLayout& field,
                                 const std::vector<int>& level_cols, AdaptiveStep& rho_step,
                                 const PriorSpec& prior, Rng& rng);

struct GaussianModel {
  Eigen::MatrixXd design;
  std::vector<std::string> coef_names;
  Eigen::VectorXd response;
  std::vector<int> region;           // per observation; may be empty for FieldKind::None
  const Lattice* lattice = nullptr;  // required for Car
  int n_regions = 0;                 // required for Iid without lattice
  FieldKind field = FieldKind::None;
  std::vector<int> level_cols = {0};
  bool store_field_draws = false;
};

struct GaussianFit {
  PosteriorSummary summary;  // coefficient names + "tau2" (+ "sigma2_u", "rho_u")
  Eigen::VectorXd field_mean;
  Eigen::MatrixXd field_draws;  // retained x N, filled iff store_field_draws
  Eigen::MatrixXd coef_draws;   // retained x p
  std::vector<double> tau2_draws;
};

// throws std::invalid_argument on a rank-deficient design
void check_full_rank(const Eigen::MatrixXd& design, const std::vector<std::string>& names);

GaussianFit fit_gaussian_spatial(const GaussianModel& model, const ChainSettings& settings,
                                 Rng rng, const PriorSpec& prior = PriorSpec{});

// --- Bernoulli-logit regression with CAR field: logit(e) = X a + v_region ---

struct LogisticState {
  Eigen::VectorXd alpha;
  Eigen::VectorXd v;
  double sig2_v = 1.0;
  double rho_v = 0.5;
};

// Optional Gaussian-outcome coupling (joint model): psi * v_region also enters
// a Gaussian likelihood with residuals `resid` and variance tau2.
struct GaussianCoupling {
  const Eigen::VectorXd* resid = nullptr;
  const std::vector<std::vector<int>>* obs_by_region = nullptr;
  double psi = 0.0;
  double tau2 = 1.0;
};

struct LogisticAccept {
  double alpha = 0.0;  // fraction of coefficient proposals accepted
  double v = 0.0;      // fraction of field proposals accepted
  double rho_v = 0.0;
  double recenter_shift = 0.0;  // mean removed from v (added to alpha[0])
};

LogisticAccept logistic_gibbs_sweep(LogisticState& st, const Eigen::MatrixXd& design,
                                    const Eigen::VectorXd& treat01, const FieldLayout& field,
                                    AdaptiveStep& alpha_step, AdaptiveStep& v_step,
                                    AdaptiveStep& rho_step, const PriorSpec& prior, Rng& rng,
                                    const GaussianCoupling* coupling = nullptr);

}  // namespace spcausal
