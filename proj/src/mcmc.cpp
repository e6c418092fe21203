#include "spcausal/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "spcausal/dataio.hpp"

namespace spcausal {

void PriorSpec::validate() const {
  if (!(coef_variance > 0.0) || !(var_shape > 0.0) || !(var_rate > 0.0))
    throw std::invalid_argument("prior hyperparameters must be strictly positive");
}

const ParamSummary& PosteriorSummary::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw std::out_of_range("no posterior summary for '" + name + "'");
  return it->second;
}

double quantile(std::vector<double> draws, double p) {
  if (draws.empty()) throw std::invalid_argument("quantile of empty draw vector");
  std::sort(draws.begin(), draws.end());
  const double h = (static_cast<double>(draws.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = static_cast<std::size_t>(std::ceil(h));
  return draws[lo] + (h - static_cast<double>(lo)) * (draws[hi] - draws[lo]);
}

ParamSummary summarize_draws(std::vector<double> draws) {
  ParamSummary s;
  double sum = 0.0;
  for (double d : draws) sum += d;
  s.mean = sum / static_cast<double>(draws.size());
  s.lo95 = quantile(draws, 0.025);
  s.hi95 = quantile(draws, 0.975);
  s.draws = std::move(draws);
  return s;
}

PosteriorSummary summarize(const std::map<std::string, std::vector<double>>& draws,
                           const std::map<std::string, double>& acceptance, int iterations,
                           int burnin, int thin) {
  PosteriorSummary out;
  out.iterations = iterations;
  out.burnin = burnin;
  out.thin = thin;
  out.acceptance = acceptance;
  for (const auto& [name, d] : draws) out.params[name] = summarize_draws(d);
  return out;
}

void write_trace_jsonl(const std::string& path,
                       const std::map<std::string, std::vector<double>>& draws) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file: " + path);
  std::size_t n = 0;
  for (const auto& [k, v] : draws) n = std::max(n, v.size());
  for (std::size_t i = 0; i < n; ++i) {
    out << '{';
    bool first = true;
    for (const auto& [k, v] : draws) {
      if (i >= v.size()) continue;
      if (!first) out << ',';
      first = false;
      out << '"' << k << "\":" << format_double(v[i]);
    }
    out << "}\n";
  }
}

Eigen::VectorXd mvn_draw(const Eigen::LLT<Eigen::MatrixXd>& chol_of_precision,
                         const Eigen::VectorXd& mean, Rng& rng) {
  Eigen::VectorXd z(mean.size());
  for (int i = 0; i < z.size(); ++i) z(i) = rng.normal();
  return mean + chol_of_precision.matrixU().solve(z);
}

Eigen::VectorXd gibbs_normal_coefficients(const Eigen::MatrixXd& design,
                                          const Eigen::VectorXd& response, double residual_variance,
                                          const PriorSpec& prior, Rng& rng) {
  const int p = static_cast<int>(design.cols());
  Eigen::MatrixXd prec = Eigen::MatrixXd::Identity(p, p) / prior.coef_variance;
  Eigen::VectorXd xty = Eigen::VectorXd::Zero(p);
  if (design.rows() > 0) {
    prec.noalias() += design.transpose() * design / residual_variance;
    xty.noalias() = design.transpose() * response / residual_variance;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("gibbs_normal_coefficients: rank-deficient system");
  const Eigen::VectorXd mean = llt.solve(xty);
  return mvn_draw(llt, mean, rng);
}

double gibbs_variance(const Eigen::VectorXd& residuals, const PriorSpec& prior, Rng& rng) {
  const double shape = prior.var_shape + 0.5 * static_cast<double>(residuals.size());
  const double rate = prior.var_rate + 0.5 * residuals.squaredNorm();
  return rng.inverse_gamma(shape, rate);
}

bool mh_car_rho(double& rho, const Eigen::VectorXd& field, const Lattice& lattice, double sigma,
                double proposal_sd, Rng& rng) {
  const double sig2 = sigma * sigma;
  // quadform is linear in rho: split into diagonal and cross parts
  double diag = 0.0, cross = 0.0;
  for (int i = 0; i < lattice.n_regions; ++i) {
    diag += lattice.m[i] * field(i) * field(i);
    for (int k : lattice.neighbors[i]) cross += field(i) * field(k);
  }
  const auto log_target = [&](double r) {
    return 0.5 * car_structure_logdet(lattice, r) - (diag - r * cross) / (2.0 * sig2) +
           std::log(r) + std::log(1.0 - r);  // uniform prior; logit-scale Jacobian
  };
  const double cur_logit = logit(rho);
  const double prop_logit = cur_logit + proposal_sd * rng.normal();
  const double prop = expit(prop_logit);
  double ratio = 0.0;
  try {
    ratio = log_target(prop) - log_target(rho);
  } catch (const std::runtime_error&) {
    return false;  // factorization failure on the proposal: auto-reject
  }
  if (std::log(rng.uniform() + 1e-300) < ratio) {
    rho = prop;
    return true;
  }
  return false;
}

double bernoulli_loglik(const Eigen::VectorXd& a, const Eigen::VectorXd& eta) {
  double ll = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double e = eta(i);
    const double log1pe = e > 35.0 ? e : std::log1p(std::exp(e));
    ll += a(i) * e - log1pe;
  }
  return ll;
}

int mh_logistic_block(Eigen::VectorXd& coefficients, const Eigen::MatrixXd& design,
                      const Eigen::VectorXd& outcomes, const Eigen::VectorXd& offset,
                      double proposal_sd, const PriorSpec& prior, Rng& rng) {
  int accepted = 0;
  Eigen::VectorXd eta = design * coefficients;
  if (offset.size() > 0) eta += offset;
  for (int j = 0; j < coefficients.size(); ++j) {
    const double cur = coefficients(j);
    const double prop = cur + proposal_sd * rng.normal();
    const Eigen::VectorXd eta_prop = eta + (prop - cur) * design.col(j);
    const double lr = bernoulli_loglik(outcomes, eta_prop) - bernoulli_loglik(outcomes, eta) +
                      (cur * cur - prop * prop) / (2.0 * prior.coef_variance);
    if (std::log(rng.uniform() + 1e-300) < lr) {
      coefficients(j) = prop;
      eta = eta_prop;
      ++accepted;
    }
  }
  return accepted;
}

}  // namespace spcausal
