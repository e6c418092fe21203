#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spcausal/gmrf.hpp"
#include "spcausal/lattice.hpp"
#include "spcausal/rng.hpp"

namespace spcausal {

// Priors shared by every Bayesian fit: Normal(0,10) on regression coefficients,
// InvGamma(0.5, 0.005) on variances, Uniform(0,1) on CAR dependence parameters.
struct PriorSpec {
  double coef_variance = 10.0;
  double var_shape = 0.5;
  double var_rate = 0.005;

  void validate() const;
};

struct ParamSummary {
  double mean = 0.0;
  double lo95 = 0.0;
  double hi95 = 0.0;
  std::vector<double> draws;
};

struct PosteriorSummary {
  std::map<std::string, ParamSummary> params;
  std::map<std::string, double> acceptance;  // per MH block
  int iterations = 0;
  int burnin = 0;
  int thin = 1;

  const ParamSummary& at(const std::string& name) const;
  bool has(const std::string& name) const { return params.count(name) > 0; }
};

// equal-tailed interval and mean from a draw vector (type-7 quantiles)
double quantile(std::vector<double> draws, double p);
ParamSummary summarize_draws(std::vector<double> draws);
PosteriorSummary summarize(const std::map<std::string, std::vector<double>>& draws,
                           const std::map<std::string, double>& acceptance, int iterations,
                           int burnin, int thin);

// JSON-lines trace: one object per retained iteration, keys = parameter names.
void write_trace_jsonl(const std::string& path,
                       const std::map<std::string, std::vector<double>>& draws);

// Robbins-Monro step-size adaptation toward a target acceptance rate.
// Adapts only until freeze() is called (end of burn-in).
class AdaptiveStep {
 public:
  explicit AdaptiveStep(double initial = 0.5, double target = 0.44)
      : log_step_(std::log(initial)), target_(target) {}

  double step() const { return std::exp(log_step_); }
  void observe(double accepted) {
    if (frozen_) return;
    log_step_ += (accepted - target_) / std::sqrt(static_cast<double>(k_++));
    log_step_ = std::clamp(log_step_, std::log(1e-4), std::log(1e4));
  }
  void freeze() { frozen_ = true; }
  bool frozen() const { return frozen_; }

 private:
  double log_step_;
  double target_;
  long k_ = 1;
  bool frozen_ = false;
};

// --- Gibbs / MH kernels ----------------------------------------------------

// Exact draw from the conjugate multivariate-normal full conditional of the
// coefficients in y = X b + eps, eps ~ N(0, tau2), b ~ N(0, prior.coef_variance I).
// With zero rows the draw comes from the prior.
Eigen::VectorXd gibbs_normal_coefficients(const Eigen::MatrixXd& design,
                                          const Eigen::VectorXd& response, double residual_variance,
                                          const PriorSpec& prior, Rng& rng);

// InverseGamma(var_shape + n/2, var_rate + SSR/2) draw
double gibbs_variance(const Eigen::VectorXd& residuals, const PriorSpec& prior, Rng& rng);

// Random-walk MH on logit(rho) for the CAR dependence parameter given the
// field u and scale sigma; exact GMRF log-density ratio with log-determinant
// via sparse Cholesky; Uniform(0,1) prior. Returns accepted flag.
bool mh_car_rho(double& rho, const Eigen::VectorXd& field, const Lattice& lattice, double sigma,
                double proposal_sd, Rng& rng);

// sum_i [ a_i eta_i - log(1 + exp(eta_i)) ], overflow-safe
double bernoulli_loglik(const Eigen::VectorXd& a, const Eigen::VectorXd& eta);

// Component-wise random-walk MH on logistic regression coefficients with
// exact Bernoulli-logit likelihood ratio; `offset` enters the linear predictor
// additively. Returns the number of accepted components.
int mh_logistic_block(Eigen::VectorXd& coefficients, const Eigen::MatrixXd& design,
                      const Eigen::VectorXd& outcomes, const Eigen::VectorXd& offset,
                      double proposal_sd, const PriorSpec& prior, Rng& rng);

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// draw from N(0, Sigma) factorizations used by a few dense-model fits
Eigen::VectorXd mvn_draw(const Eigen::LLT<Eigen::MatrixXd>& chol_of_precision,
                         const Eigen::VectorXd& mean, Rng& rng);

}  // namespace spcausal
