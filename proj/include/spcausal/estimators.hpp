#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spcausal/dataio.hpp"
#include "spcausal/engine.hpp"
#include "spcausal/propensity.hpp"

namespace spcausal {

struct CausalEstimate {
  std::string estimator;
  double point = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
  std::map<std::string, double> diagnostics;
  std::vector<std::string> flags;

  bool has_flag(const std::string& f) const;
  std::string csv_row(const std::string& dataset_id) const;  // dataset_id,estimator,point,lo95,hi95,flags
};

enum class JointPrior { Car, Independent };

// Which estimator to fit plus per-estimator options.
struct ModelSpec {
  std::string tag = "NS";  // NS, NS+P, S, S+P, S+Strata, S+AIPW, Joint, Cut, SEM,
                           // SAR, Schnell, IV, MatchDiff, CondLogit
  JointPrior joint_prior = JointPrior::Car;
  int strata_count = 5;
  int iv_column = 1;  // covariate index (x<k>) holding the instrument

  void validate() const;
  static const std::vector<std::string>& known_tags();
};

struct FitResult {
  CausalEstimate estimate;
  PosteriorSummary posterior;
};

// Posterior pieces of a spatial outcome fit that AIPW post-processing consumes.
struct SpatialFitArtifacts {
  Eigen::MatrixXd coef_draws;   // retained x p, columns [gamma0, beta, gamma1..]
  Eigen::MatrixXd field_draws;  // retained x N
  std::vector<int> region;      // obs -> region
};

// --- the 2.8 estimator bank -------------------------------------------------

// Non-spatial Bayesian least squares Y = gamma + A beta + eps.
FitResult fit_ns(const ArealDataset& data, const ChainSettings& settings);

// Spatial CAR regression: adds U ~ CAR(rho_U, sigma_U) to the NS mean.
FitResult fit_s(const ArealDataset& data, const Lattice& lattice, const ChainSettings& settings,
                SpatialFitArtifacts* artifacts = nullptr);

// Propensity-adjusted regression: mean includes f(scores) through the 5-df
// spline block (first basis column dropped against the intercept).
// spatial=false gives NS+P, spatial=true gives S+P.
FitResult fit_with_propensity(const ArealDataset& data, const Lattice* lattice,
                              const Eigen::VectorXd& scores, bool spatial,
                              const ChainSettings& settings);

// Stratum intercepts S_l replace the global intercept; CAR field retained.
// Observations are assigned to strata by their propensity scores.
FitResult fit_strata(const ArealDataset& data, const Lattice& lattice, const StrataSpec& strata,
                     const Eigen::VectorXd& scores, const ChainSettings& settings);

// Augmented-IPW post-processing of a spatial fit, evaluated per posterior draw
// and averaged over all n observations. Scores must lie strictly in (0,1).
FitResult aipw_adjust(const SpatialFitArtifacts& fit, const ArealDataset& data,
                      const Eigen::VectorXd& scores);

// Simultaneous outcome/treatment fit: Y = gamma + A beta + u + psi v + eps with
// logit(e) = X alpha + v. prior_family Independent is the SEM variant (iid
// random effects; requires within-region replication). fix_psi_zero decouples
// the outcome side for structural testing.
FitResult fit_joint(const ArealDataset& data, const Lattice& lattice, JointPrior prior_family,
                    const ChainSettings& settings, bool fix_psi_zero = false);

// Two-stage joint model with feedback cut: stage 1 fits the treatment model
// alone; stage 2 draws v from the stored stage-1 posterior each iteration.
FitResult fit_cut(const ArealDataset& data, const Lattice& lattice,
                  const ChainSettings& settings);

// SAR neighborhood adjustment, Y_i - phi Ybar_i regressed on differenced
// treatment/covariates with phi sampled in (0,1).
FitResult fit_sar(const ArealDataset& data, const Lattice& lattice,
                  const ChainSettings& settings);

// Joint Gaussian confounder-adjustment model with bias term
// B(A) = -Q_U^-1 Q_UA A (cross-precision Q_UA = -rho0 / (sigma_U sigma_A) M).
FitResult fit_schnell(const ArealDataset& data, const Lattice& lattice,
                      const ChainSettings& settings);

// B(A) = -Q_U^-1 Q_UA A evaluated at fixed parameters (dense-algebra checks)
Eigen::VectorXd schnell_bias_term(const Lattice& lattice, double rho0, double rho_u, double sig2_u,
                                  double sig2_a, const Eigen::VectorXd& a);

// Within-region differencing: response differences regressed on treatment and
// covariate differences; the latent region effect cancels exactly.
FitResult match_difference(const ArealDataset& data, const ChainSettings& settings);

// 1:1 matched case-control pairs for conditional logistic regression.
struct MatchedPairs {
  std::vector<int> region_case, region_ctrl;
  Eigen::VectorXd a_case, a_ctrl;
  Eigen::MatrixXd x_case, x_ctrl;  // covariates without intercept

  int n() const { return static_cast<int>(region_case.size()); }
};

// Pair each case (y=1) with an unused same-region control (y=0), in row order.
MatchedPairs make_same_region_pairs(const ArealDataset& data);

// Conditional-likelihood MLE by Newton iterations with step halving;
// same-region pairing enforced so the spatial effects cancel.
CausalEstimate fit_cond_logit(const MatchedPairs& pairs);

// Spatial instrumental variables: stage 1 regresses A on Z (and X) with a CAR
// field; stage 2 uses Z alpha1_hat as the treatment. A stage-1 interval
// containing 0 raises the weak_instrument flag.
FitResult fit_iv(const ArealDataset& data, const Lattice& lattice, int instrument_col,
                 const ChainSettings& settings);

// Monte Carlo mean of the GLS estimator under the A.1 generative model:
// A ~ N(0, Sigma2), U | A ~ N(phi A, Sigma1), Y | A,U ~ N(beta A + U, tau2 I).
struct GlsBiasResult {
  double mean = 0.0;
  double mc_se = 0.0;
  int reps = 0;
};
GlsBiasResult gls_bias_oracle(const Eigen::MatrixXd& sigma_assumed, double phi, double beta,
                              const Eigen::MatrixXd& sigma1, const Eigen::MatrixXd& sigma2,
                              int reps, std::uint64_t seed, double tau2 = 1.0);

// Dispatch a ModelSpec fit; propensity stages are run internally when the
// estimator needs scores. Lattice may be null for non-spatial estimators.
FitResult run_chain(const ModelSpec& model, const ArealDataset& data, const Lattice* lattice,
                    const RunConfig& config);

}  // namespace spcausal
