#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

#include "spcausal/estimators.hpp"

namespace spcausal {

namespace {

// reorder an areal dataset with exactly one observation per lattice region
// into region order; throws when replication is present or regions are missing
struct RegionRows {
  Eigen::VectorXd y, a;
  Eigen::MatrixXd x;  // with intercept column
};

RegionRows one_per_region(const ArealDataset& data, const Lattice& lattice,
                          const std::string& who) {
  if (data.n() != lattice.n_regions)
    throw std::invalid_argument(who + " requires exactly one observation per region (" +
                                std::to_string(data.n()) + " rows, " +
                                std::to_string(lattice.n_regions) + " regions)");
  std::vector<int> row_of(lattice.n_regions, -1);
  for (int i = 0; i < data.n(); ++i) {
    if (row_of[data.region[i]] >= 0)
      throw std::invalid_argument(who + ": region " + std::to_string(data.region[i]) +
                                  " is replicated; the model is defined without replication");
    row_of[data.region[i]] = i;
  }
  RegionRows r;
  r.y.resize(data.n());
  r.a.resize(data.n());
  r.x.resize(data.n(), data.x.cols());
  for (int g = 0; g < lattice.n_regions; ++g) {
    r.y(g) = data.y(row_of[g]);
    r.a(g) = data.a(row_of[g]);
    r.x.row(g) = data.x.row(row_of[g]);
  }
  return r;
}

Eigen::MatrixXd dense_M_minus_rhoW(const Lattice& lat, double rho) {
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(lat.n_regions, lat.n_regions);
  for (int i = 0; i < lat.n_regions; ++i) {
    Q(i, i) = lat.m[i];
    for (int k : lat.neighbors[i]) Q(i, k) = -rho;
  }
  return Q;
}

double log_ig_density(double x, double shape, double rate) {
  return -(shape + 1.0) * std::log(x) - rate / x;
}

}  // namespace

FitResult fit_sar(const ArealDataset& data, const Lattice& lattice,
                  const ChainSettings& settings) {
  settings.validate();
  data.validate(&lattice);
  const RegionRows rr = one_per_region(data, lattice, "SAR");
  const int N = lattice.n_regions;

  // design [A | X]; differencing by (I - phi C) applied to response and columns
  Eigen::MatrixXd D(N, 1 + rr.x.cols());
  D.col(0) = rr.a;
  D.rightCols(rr.x.cols()) = rr.x;
  std::vector<std::string> names = {"beta", "gamma0"};
  for (int j = 1; j < rr.x.cols(); ++j) names.push_back("gamma" + std::to_string(j));
  check_full_rank(D, names);

  const Eigen::SparseMatrix<double> C = neighbor_mean_matrix(lattice);
  const Eigen::VectorXd Cy = C * rr.y;
  const Eigen::MatrixXd CD = C * D;

  // log det(I - phi C) = sum log(1 - phi lambda_i) with lambda the spectrum of
  // the symmetrized M^-1/2 W M^-1/2 (C is similar to it)
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(N, N);
  for (int i = 0; i < N; ++i)
    for (int k : lattice.neighbors[i]) S(i, k) = 1.0 / std::sqrt(double(lattice.m[i]) * lattice.m[k]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  const Eigen::VectorXd lambda = es.eigenvalues();

  const PriorSpec prior;
  Rng rng_root(settings.seed);
  Rng rng = rng_root.sub("outcome");
  Eigen::VectorXd coef = Eigen::VectorXd::Zero(D.cols());
  double sig2 = 1.0, phi = 0.5;
  AdaptiveStep phi_step(0.7);

  const auto logdet = [&](double ph) {
    double ld = 0.0;
    for (int i = 0; i < N; ++i) ld += std::log(1.0 - ph * lambda(i));
    return ld;
  };

  std::map<std::string, std::vector<double>> draws;
  double acc_phi = 0.0;
  int kept = 0;
  for (int it = 0; it < settings.iterations; ++it) {
    if (it == settings.burnin) phi_step.freeze();
    const Eigen::MatrixXd Dphi = D - phi * CD;
    const Eigen::VectorXd yphi = rr.y - phi * Cy;
    coef = gibbs_normal_coefficients(Dphi, yphi, sig2, prior, rng);
    const Eigen::VectorXd r0 = rr.y - D * coef;
    const Eigen::VectorXd r1 = Cy - CD * coef;
    sig2 = gibbs_variance(r0 - phi * r1, prior, rng);

    // phi | rest on the logit scale; the induced joint density of Y carries
    // the |det(I - phi C)| Jacobian
    const auto log_target = [&](double ph) {
      return logdet(ph) - (r0 - ph * r1).squaredNorm() / (2.0 * sig2) + std::log(ph) +
             std::log(1.0 - ph);
    };
    const double prop = expit(logit(phi) + phi_step.step() * rng.normal());
    const double lr = log_target(prop) - log_target(phi);
    const bool ok = std::log(rng.uniform() + 1e-300) < lr;
    if (ok) phi = prop;
    phi_step.observe(ok ? 1.0 : 0.0);

    if (it < settings.burnin || (it - settings.burnin) % settings.thin != 0) continue;
    for (int j = 0; j < coef.size(); ++j) draws[names[j]].push_back(coef(j));
    draws["phi"].push_back(phi);
    draws["sigma2"].push_back(sig2);
    acc_phi += ok ? 1.0 : 0.0;
    ++kept;
  }

  FitResult out;
  out.posterior = summarize(draws, {{"phi", acc_phi / kept}}, settings.iterations,
                            settings.burnin, settings.thin);
  const ParamSummary& b = out.posterior.at("beta");
  out.estimate.estimator = "SAR";
  out.estimate.point = b.mean;
  out.estimate.lo95 = b.lo95;
  out.estimate.hi95 = b.hi95;
  out.estimate.diagnostics["n"] = data.n();
  out.estimate.diagnostics["accept_phi"] = acc_phi / kept;
  return out;
}

// --- Schnell-style joint confounder adjustment ------------------------------

namespace {

struct SchnellParams {
  double rho0 = 0.0;  // cross-dependence, in (-1,1)
  double rho_u = 0.5;
  double rho_a = 0.5;
  double sig2_u = 1.0;
  double sig2_a = 1.0;
  double tau2 = 1.0;
};

struct SchnellEval {
  bool ok = false;
  double loglik = 0.0;       // log N(Y; D theta - B, Sigma_e) + log N(A; 0, Sigma_A)
  Eigen::MatrixXd sigma_e;   // Q_U^-1 + tau2 I
  Eigen::VectorXd bias;      // B(A)
};

// Q_U = sig_u^-2 (M - rho_u W), Q_UA = -(rho0 / (sig_u sig_a)) M; marginal
// treatment precision sig_a^-2 {(M - rho_a W) - rho0^2 M^T (M - rho_u W)^-1 M}
SchnellEval schnell_eval(const SchnellParams& p, const Lattice& lat, const Eigen::MatrixXd& D,
                         const Eigen::VectorXd& theta, const Eigen::VectorXd& y,
                         const Eigen::VectorXd& a) {
  SchnellEval ev;
  const int N = lat.n_regions;
  const double sig_u = std::sqrt(p.sig2_u), sig_a = std::sqrt(p.sig2_a);
  const Eigen::MatrixXd Gu = dense_M_minus_rhoW(lat, p.rho_u);
  Eigen::LLT<Eigen::MatrixXd> llt_gu(Gu);
  if (llt_gu.info() != Eigen::Success) return ev;

  Eigen::VectorXd Ma(N);
  for (int i = 0; i < N; ++i) Ma(i) = lat.m[i] * a(i);
  // B(A) = -Q_U^-1 Q_UA A = rho0 (sig_u / sig_a) (M - rho_u W)^-1 M A
  ev.bias = p.rho0 * (sig_u / sig_a) * llt_gu.solve(Ma);

  ev.sigma_e = p.sig2_u * llt_gu.solve(Eigen::MatrixXd::Identity(N, N));
  ev.sigma_e.diagonal().array() += p.tau2;
  Eigen::LLT<Eigen::MatrixXd> llt_e(ev.sigma_e);
  if (llt_e.info() != Eigen::Success) return ev;

  // treatment marginal precision
  Eigen::MatrixXd MGuM = llt_gu.solve(Eigen::MatrixXd::Identity(N, N));
  for (int i = 0; i < N; ++i) MGuM.row(i) *= lat.m[i];
  for (int k = 0; k < N; ++k) MGuM.col(k) *= lat.m[k];
  const Eigen::MatrixXd prec_a =
      (dense_M_minus_rhoW(lat, p.rho_a) - p.rho0 * p.rho0 * MGuM) / p.sig2_a;
  Eigen::LLT<Eigen::MatrixXd> llt_pa(prec_a);
  if (llt_pa.info() != Eigen::Success) return ev;  // non-PD for extreme rho0: reject

  const Eigen::VectorXd ry = y - D * theta + ev.bias;
  double logdet_e = 0.0, logdet_pa = 0.0;
  for (int i = 0; i < N; ++i) {
    logdet_e += std::log(llt_e.matrixL()(i, i));
    logdet_pa += std::log(llt_pa.matrixL()(i, i));
  }
  const double quad_y = ry.dot(llt_e.solve(ry));
  const double quad_a = a.dot(prec_a * a);
  ev.loglik = -logdet_e - 0.5 * quad_y + logdet_pa - 0.5 * quad_a;
  ev.ok = true;
  return ev;
}

double schnell_log_prior(const SchnellParams& p, const PriorSpec& prior) {
  // variances InvGamma(0.5, 0.005); rho_u, rho_a uniform on (0,1); rho0 uniform
  // on (-1,1); the transform Jacobians are added at the proposal sites
  return log_ig_density(p.sig2_u, prior.var_shape, prior.var_rate) +
         log_ig_density(p.sig2_a, prior.var_shape, prior.var_rate) +
         log_ig_density(p.tau2, prior.var_shape, prior.var_rate);
}

}  // namespace

FitResult fit_schnell(const ArealDataset& data, const Lattice& lattice,
                      const ChainSettings& settings) {
  settings.validate();
  data.validate(&lattice);
  const RegionRows rr = one_per_region(data, lattice, "Schnell");
  if (data.binary_treatment())
    throw std::invalid_argument("the Schnell adjustment models a continuous treatment");
  const int N = lattice.n_regions;

  Eigen::MatrixXd D(N, 1 + rr.x.cols());
  D.col(0) = rr.a;
  D.rightCols(rr.x.cols()) = rr.x;
  std::vector<std::string> names = {"beta", "gamma0"};
  for (int j = 1; j < rr.x.cols(); ++j) names.push_back("gamma" + std::to_string(j));
  check_full_rank(D, names);

  const PriorSpec prior;
  Rng rng_root(settings.seed);
  Rng rng = rng_root.sub("outcome");
  SchnellParams par;
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(D.cols());
  SchnellEval cur = schnell_eval(par, lattice, D, theta, rr.y, rr.a);
  if (!cur.ok) throw std::runtime_error("fit_schnell: initial state not positive definite");

  // one adaptive step per covariance parameter, proposals on unconstrained scales
  enum { R0, RU, RA, SU, SA, T2, NPAR };
  std::vector<AdaptiveStep> steps(NPAR, AdaptiveStep(0.5));
  std::vector<double> acc(NPAR, 0.0);

  std::map<std::string, std::vector<double>> draws;
  int kept = 0;
  for (int it = 0; it < settings.iterations; ++it) {
    if (it == settings.burnin)
      for (auto& s : steps) s.freeze();

    // theta | covariances: conjugate GLS with the N(0,10) prior
    {
      Eigen::LLT<Eigen::MatrixXd> llt_e(cur.sigma_e);
      const Eigen::MatrixXd SeD = llt_e.solve(D);
      Eigen::MatrixXd prec = D.transpose() * SeD;
      prec.diagonal().array() += 1.0 / prior.coef_variance;
      const Eigen::VectorXd rhs = SeD.transpose() * (rr.y + cur.bias);
      Eigen::LLT<Eigen::MatrixXd> llt_p(prec);
      theta = mvn_draw(llt_p, llt_p.solve(rhs), rng);
      cur = schnell_eval(par, lattice, D, theta, rr.y, rr.a);
    }

    // covariance parameters, one MH update each
    for (int which = 0; which < NPAR; ++which) {
      SchnellParams prop = par;
      double jac = 0.0;  // log proposal Jacobian difference (new - old)
      const double step = steps[which].step();
      const double z = rng.normal();
      switch (which) {
        case R0: {
          const double t = std::atanh(par.rho0) + step * z;
          prop.rho0 = std::tanh(t);
          jac = std::log1p(-prop.rho0 * prop.rho0) - std::log1p(-par.rho0 * par.rho0);
          break;
        }
        case RU: {
          prop.rho_u = expit(logit(par.rho_u) + step * z);
          jac = std::log(prop.rho_u * (1 - prop.rho_u)) - std::log(par.rho_u * (1 - par.rho_u));
          break;
        }
        case RA: {
          prop.rho_a = expit(logit(par.rho_a) + step * z);
          jac = std::log(prop.rho_a * (1 - prop.rho_a)) - std::log(par.rho_a * (1 - par.rho_a));
          break;
        }
        case SU:
          prop.sig2_u = par.sig2_u * std::exp(step * z);
          jac = std::log(prop.sig2_u) - std::log(par.sig2_u);
          break;
        case SA:
          prop.sig2_a = par.sig2_a * std::exp(step * z);
          jac = std::log(prop.sig2_a) - std::log(par.sig2_a);
          break;
        case T2:
          prop.tau2 = par.tau2 * std::exp(step * z);
          jac = std::log(prop.tau2) - std::log(par.tau2);
          break;
      }
      const SchnellEval ev = schnell_eval(prop, lattice, D, theta, rr.y, rr.a);
      bool ok = false;
      if (ev.ok) {
        const double lr = ev.loglik + schnell_log_prior(prop, prior) -
                          (cur.loglik + schnell_log_prior(par, prior)) + jac;
        ok = std::log(rng.uniform() + 1e-300) < lr;
      }
      if (ok) {
        par = prop;
        cur = ev;
      }
      steps[which].observe(ok ? 1.0 : 0.0);
      if (it >= settings.burnin) acc[which] += ok ? 1.0 : 0.0;
    }

    if (it < settings.burnin || (it - settings.burnin) % settings.thin != 0) continue;
    for (int j = 0; j < theta.size(); ++j) draws[names[j]].push_back(theta(j));
    draws["rho0"].push_back(par.rho0);
    draws["rho_u"].push_back(par.rho_u);
    draws["rho_a"].push_back(par.rho_a);
    draws["sigma2_u"].push_back(par.sig2_u);
    draws["sigma2_a"].push_back(par.sig2_a);
    draws["tau2"].push_back(par.tau2);
    ++kept;
  }

  std::map<std::string, double> accs;
  const char* nmes[] = {"rho0", "rho_u", "rho_a", "sigma2_u", "sigma2_a", "tau2"};
  for (int i = 0; i < NPAR; ++i) accs[nmes[i]] = acc[i] / (settings.iterations - settings.burnin);

  FitResult out;
  out.posterior = summarize(draws, accs, settings.iterations, settings.burnin, settings.thin);
  const ParamSummary& b = out.posterior.at("beta");
  out.estimate.estimator = "Schnell";
  out.estimate.point = b.mean;
  out.estimate.lo95 = b.lo95;
  out.estimate.hi95 = b.hi95;
  out.estimate.diagnostics["n"] = data.n();
  return out;
}

// expose the bias term for the dense-algebra oracle tests
Eigen::VectorXd schnell_bias_term(const Lattice& lattice, double rho0, double rho_u, double sig2_u,
                                  double sig2_a, const Eigen::VectorXd& a) {
  const Eigen::MatrixXd Gu = dense_M_minus_rhoW(lattice, rho_u);
  Eigen::LLT<Eigen::MatrixXd> llt(Gu);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("schnell_bias_term: M - rho_u W is not positive definite");
  Eigen::VectorXd Ma(a.size());
  for (int i = 0; i < a.size(); ++i) Ma(i) = lattice.m[i] * a(i);
  return rho0 * std::sqrt(sig2_u / sig2_a) * llt.solve(Ma);
}

FitResult match_difference(const ArealDataset& data, const ChainSettings& settings) {
  settings.validate();
  data.validate();

  // disjoint consecutive pairs within each region keep the differenced errors independent
  std::vector<std::vector<int>> rows_by_region(data.n_regions);
  for (int i = 0; i < data.n(); ++i) rows_by_region[data.region[i]].push_back(i);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& rows : rows_by_region)
    for (std::size_t k = 0; k + 1 < rows.size(); k += 2) pairs.push_back({rows[k], rows[k + 1]});
  if (pairs.empty())
    throw std::invalid_argument("match_difference needs regions with at least 2 observations");

  const int np = static_cast<int>(pairs.size());
  Eigen::VectorXd dy(np), da(np);
  Eigen::MatrixXd dx(np, data.x.cols() - 1);
  for (int k = 0; k < np; ++k) {
    const auto [j, l] = pairs[k];
    dy(k) = data.y(j) - data.y(l);
    da(k) = data.a(j) - data.a(l);
    for (int c = 1; c < data.x.cols(); ++c) dx(k, c - 1) = data.x(j, c) - data.x(l, c);
  }
  if (da.cwiseAbs().maxCoeff() < 1e-12)
    throw std::invalid_argument(
        "no within-region treatment contrast anywhere: beta is unidentified");

  // drop covariate-difference columns that vanish (region-constant covariates)
  std::vector<int> keep;
  for (int c = 0; c < dx.cols(); ++c)
    if (dx.col(c).cwiseAbs().maxCoeff() > 1e-12) keep.push_back(c);

  Eigen::MatrixXd X(np, 1 + keep.size());
  X.col(0) = da;
  std::vector<std::string> names = {"beta"};
  for (std::size_t c = 0; c < keep.size(); ++c) {
    X.col(1 + c) = dx.col(keep[c]);
    names.push_back("gamma" + std::to_string(keep[c] + 1));
  }

  GaussianModel m;
  m.design = std::move(X);
  m.coef_names = std::move(names);
  m.response = dy;
  m.field = FieldKind::None;
  m.level_cols = {};
  Rng rng(settings.seed);
  const GaussianFit gf = fit_gaussian_spatial(m, settings, rng.sub("outcome"));

  FitResult out;
  out.posterior = gf.summary;
  const ParamSummary& b = gf.summary.at("beta");
  out.estimate.estimator = "MatchDiff";
  out.estimate.point = b.mean;
  out.estimate.lo95 = b.lo95;
  out.estimate.hi95 = b.hi95;
  out.estimate.diagnostics["n_pairs"] = np;
  return out;
}

MatchedPairs make_same_region_pairs(const ArealDataset& data) {
  for (int i = 0; i < data.y.size(); ++i)
    if (data.y(i) != 0.0 && data.y(i) != 1.0)
      throw std::invalid_argument("case-control pairing requires a binary response");
  MatchedPairs mp;
  std::vector<std::vector<int>> controls(data.n_regions);
  std::vector<std::vector<int>> cases(data.n_regions);
  for (int i = 0; i < data.n(); ++i)
    (data.y(i) == 1.0 ? cases : controls)[data.region[i]].push_back(i);
  const int p = static_cast<int>(data.x.cols()) - 1;
  std::vector<std::array<int, 2>> chosen;
  for (int r = 0; r < data.n_regions; ++r) {
    const std::size_t k = std::min(cases[r].size(), controls[r].size());
    for (std::size_t j = 0; j < k; ++j) chosen.push_back({cases[r][j], controls[r][j]});
  }
  const int np = static_cast<int>(chosen.size());
  mp.a_case.resize(np);
  mp.a_ctrl.resize(np);
  mp.x_case.resize(np, p);
  mp.x_ctrl.resize(np, p);
  mp.region_case.resize(np);
  mp.region_ctrl.resize(np);
  for (int k = 0; k < np; ++k) {
    const auto [ci, li] = std::pair(chosen[k][0], chosen[k][1]);
    mp.region_case[k] = data.region[ci];
    mp.region_ctrl[k] = data.region[li];
    mp.a_case(k) = data.a(ci);
    mp.a_ctrl(k) = data.a(li);
    mp.x_case.row(k) = data.x.row(ci).tail(p);
    mp.x_ctrl.row(k) = data.x.row(li).tail(p);
  }
  return mp;
}

CausalEstimate fit_cond_logit(const MatchedPairs& pairs) {
  const int np = pairs.n();
  if (np == 0) throw std::invalid_argument("fit_cond_logit: no pairs");
  for (int k = 0; k < np; ++k)
    if (pairs.region_case[k] != pairs.region_ctrl[k])
      throw std::invalid_argument(
          "cross-region pair at index " + std::to_string(k) +
          ": same-region pairing is required so the spatial effects cancel");

  // difference design; region-constant covariates vanish and are dropped
  Eigen::MatrixXd d0(np, 1 + pairs.x_case.cols());
  d0.col(0) = pairs.a_case - pairs.a_ctrl;
  d0.rightCols(pairs.x_case.cols()) = pairs.x_case - pairs.x_ctrl;
  std::vector<int> keep;
  std::vector<std::string> names;
  for (int c = 0; c < d0.cols(); ++c)
    if (d0.col(c).cwiseAbs().maxCoeff() > 1e-12) {
      keep.push_back(c);
      names.push_back(c == 0 ? "beta" : "gamma" + std::to_string(c));
    }
  if (keep.empty() || keep[0] != 0)
    throw std::invalid_argument("fit_cond_logit: no treatment contrast within pairs");
  Eigen::MatrixXd Dm(np, keep.size());
  for (std::size_t c = 0; c < keep.size(); ++c) Dm.col(c) = d0.col(keep[c]);

  // Newton iterations with step halving on the conditional likelihood
  // sum_k log expit(d_k' theta); converged when the gradient inf-norm < 1e-8
  const int p = static_cast<int>(Dm.cols());
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  bool separated = false;
  double ll = 0.0;
  const auto loglik = [&](const Eigen::VectorXd& th) {
    double s = 0.0;
    for (int k = 0; k < np; ++k) {
      const double eta = Dm.row(k).dot(th);
      s += eta - (eta > 35.0 ? eta : std::log1p(std::exp(eta)));
    }
    return s;
  };
  ll = loglik(theta);
  Eigen::MatrixXd hess(p, p);
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(p);
    hess.setZero();
    for (int k = 0; k < np; ++k) {
      const double pk = expit(Dm.row(k).dot(theta));
      grad += (1.0 - pk) * Dm.row(k).transpose();
      hess += pk * (1.0 - pk) * Dm.row(k).transpose() * Dm.row(k);
    }
    if (grad.lpNorm<Eigen::Infinity>() < 1e-8) break;
    Eigen::LLT<Eigen::MatrixXd> llt(hess);
    Eigen::VectorXd dir;
    if (llt.info() == Eigen::Success) {
      dir = llt.solve(grad);
    } else {
      separated = true;
      break;
    }
    double step = 1.0;
    while (step > 1e-10 && loglik(theta + step * dir) < ll) step *= 0.5;
    theta += step * dir;
    ll = loglik(theta);
    if (theta.lpNorm<Eigen::Infinity>() > 12.0) {
      separated = true;
      break;
    }
  }
  if (theta.lpNorm<Eigen::Infinity>() > 12.0) separated = true;

  CausalEstimate est;
  est.estimator = "CondLogit";
  est.point = theta(0);
  Eigen::LLT<Eigen::MatrixXd> llt(hess);
  double se = std::numeric_limits<double>::infinity();
  if (!separated && llt.info() == Eigen::Success) {
    const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(p, p));
    se = std::sqrt(cov(0, 0));
  }
  est.lo95 = theta(0) - 1.959963984540054 * se;
  est.hi95 = theta(0) + 1.959963984540054 * se;
  est.diagnostics["n_pairs"] = np;
  est.diagnostics["loglik"] = ll;
  if (separated) est.flags.push_back("complete_separation");
  return est;
}

FitResult fit_iv(const ArealDataset& data, const Lattice& lattice, int instrument_col,
                 const ChainSettings& settings) {
  settings.validate();
  data.validate(&lattice);
  if (instrument_col < 1 || instrument_col >= data.x.cols())
    throw std::invalid_argument("instrument column x" + std::to_string(instrument_col) +
                                " not present in the data");
  if (data.binary_treatment())
    throw std::invalid_argument("the spatial IV model regresses a continuous treatment");
  const Eigen::VectorXd z = data.x.col(instrument_col);

  // stage 1: A = alpha0 + Z alpha1 + X alpha + V + eps with a CAR field
  Eigen::MatrixXd X1(data.n(), data.x.cols());
  X1.col(0).setOnes();
  X1.col(1) = z;
  std::vector<std::string> n1 = {"alpha0", "alpha1"};
  int c = 2;
  for (int j = 1; j < data.x.cols(); ++j) {
    if (j == instrument_col) continue;
    X1.col(c++) = data.x.col(j);
    n1.push_back("alpha" + std::to_string(j + 1));
  }
  GaussianModel m1;
  m1.design = X1.leftCols(c);
  n1.resize(c);
  m1.coef_names = n1;
  m1.response = data.a;
  m1.region = data.region;
  m1.lattice = &lattice;
  m1.field = FieldKind::Car;
  Rng rng(settings.seed);
  const GaussianFit s1 = fit_gaussian_spatial(m1, settings, rng.sub("treatment"));
  const ParamSummary& a1 = s1.summary.at("alpha1");
  const bool weak = a1.lo95 <= 0.0 && a1.hi95 >= 0.0;

  // stage 2: outcome on Z alpha1_hat in place of A, with a CAR field
  ArealDataset stage2 = data;
  stage2.a = a1.mean * z;
  // the constructed treatment column replaces A; remove Z from the covariates
  // to avoid exact collinearity (stage-2 treatment is proportional to Z)
  Eigen::MatrixXd x2(data.n(), data.x.cols() - 1);
  x2.col(0).setOnes();
  int cc = 1;
  for (int j = 1; j < data.x.cols(); ++j) {
    if (j == instrument_col) continue;
    x2.col(cc++) = data.x.col(j);
  }
  stage2.x = x2.leftCols(cc);
  FitResult out = fit_s(stage2, lattice, settings);
  out.estimate.estimator = "IV";
  out.estimate.diagnostics["alpha1"] = a1.mean;
  if (weak) out.estimate.flags.push_back("weak_instrument");
  return out;
}

FitResult aipw_adjust(const SpatialFitArtifacts& fit, const ArealDataset& data,
                      const Eigen::VectorXd& scores) {
  if (!data.binary_treatment())
    throw std::invalid_argument("AIPW post-processing requires a binary treatment");
  if (scores.size() != data.n())
    throw std::invalid_argument("scores must align with observations");
  for (int i = 0; i < scores.size(); ++i)
    if (!(scores(i) > 0.0 && scores(i) < 1.0))
      throw std::invalid_argument("AIPW: score at row " + std::to_string(i + 2) +
                                  " lies on the boundary; positivity is violated");
  const int T = static_cast<int>(fit.coef_draws.rows());
  if (T == 0 || fit.field_draws.rows() != T)
    throw std::invalid_argument("AIPW needs stored coefficient and field draws");

  const int n = data.n();
  const int p = static_cast<int>(fit.coef_draws.cols());
  std::vector<double> delta_draws(T);
  for (int t = 0; t < T; ++t) {
    const double beta = fit.coef_draws(t, 1);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      // columns [gamma0, beta, gamma1..]: X gamma uses all but the beta column
      double base = fit.coef_draws(t, 0);
      for (int j = 2; j < p; ++j) base += fit.coef_draws(t, j) * data.x(i, j - 1);
      base += fit.field_draws(t, fit.region[i]);
      const double y1 = base + beta, y0 = base;
      const double e = scores(i), a = data.a(i), y = data.y(i);
      const double term1 = (a * y - (a - e) * y1) / e;
      const double term0 = ((1.0 - a) * y - (e - a) * y0) / (1.0 - e);
      acc += term1 - term0;
    }
    delta_draws[t] = acc / n;
  }

  FitResult out;
  ParamSummary s = summarize_draws(delta_draws);
  out.estimate.estimator = "S+AIPW";
  out.estimate.point = s.mean;
  out.estimate.lo95 = s.lo95;
  out.estimate.hi95 = s.hi95;
  out.estimate.diagnostics["n"] = n;
  out.posterior.params["delta"] = std::move(s);
  return out;
}

GlsBiasResult gls_bias_oracle(const Eigen::MatrixXd& sigma_assumed, double phi, double beta,
                              const Eigen::MatrixXd& sigma1, const Eigen::MatrixXd& sigma2,
                              int reps, std::uint64_t seed, double tau2) {
  const int n = static_cast<int>(sigma_assumed.rows());
  Eigen::LLT<Eigen::MatrixXd> llt_as(sigma_assumed), llt_1(sigma1), llt_2(sigma2);
  if (llt_as.info() != Eigen::Success || llt_1.info() != Eigen::Success ||
      llt_2.info() != Eigen::Success)
    throw std::invalid_argument("gls_bias_oracle: covariances must be positive definite");
  const Eigen::MatrixXd L1 = llt_1.matrixL();
  const Eigen::MatrixXd L2 = llt_2.matrixL();
  const double tau = std::sqrt(tau2);

  Rng rng(seed);
  double sum = 0.0, sumsq = 0.0;
  Eigen::VectorXd z(n);
  for (int r = 0; r < reps; ++r) {
    for (int i = 0; i < n; ++i) z(i) = rng.normal();
    const Eigen::VectorXd a = L2 * z;
    for (int i = 0; i < n; ++i) z(i) = rng.normal();
    const Eigen::VectorXd u = phi * a + L1 * z;
    for (int i = 0; i < n; ++i) z(i) = rng.normal();
    const Eigen::VectorXd y = beta * a + u + tau * z;
    const Eigen::VectorXd sia = llt_as.solve(a);
    const double bhat = sia.dot(y) / sia.dot(a);
    sum += bhat;
    sumsq += bhat * bhat;
  }
  GlsBiasResult out;
  out.reps = reps;
  out.mean = sum / reps;
  const double var = (sumsq - sum * sum / reps) / (reps - 1);
  out.mc_se = std::sqrt(var / reps);
  return out;
}

}  // namespace spcausal
