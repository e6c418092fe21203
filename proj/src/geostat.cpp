#include "spcausal/geostat.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace spcausal {

void GpParams::validate() const {
  if (!(range > 0.0) || !(sigma > 0.0) || !(nugget >= 0.0))
    throw std::invalid_argument("GP parameters need range > 0, sigma > 0, nugget >= 0");
}

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixX2d& a, const Eigen::MatrixX2d& b) {
  Eigen::MatrixXd d(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.rows(); ++j) d(i, j) = (a.row(i) - b.row(j)).norm();
  return d;
}

Eigen::MatrixXd exp_covariance(const GpParams& params, const Eigen::MatrixX2d& coords) {
  params.validate();
  const int n = static_cast<int>(coords.rows());
  Eigen::MatrixXd c(n, n);
  const double s2 = params.sigma * params.sigma;
  for (int i = 0; i < n; ++i) {
    c(i, i) = s2 + params.nugget;
    for (int j = i + 1; j < n; ++j) {
      const double v = s2 * std::exp(-(coords.row(i) - coords.row(j)).norm() / params.range);
      c(i, j) = v;
      c(j, i) = v;
    }
  }
  return c;
}

namespace {

double gaussian_loglik_zero_mean(const Eigen::VectorXd& v, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  double logdet = 0.0;
  for (int i = 0; i < cov.rows(); ++i) logdet += std::log(llt.matrixL()(i, i));
  return -logdet - 0.5 * v.dot(llt.solve(v));
}

}  // namespace

GpParams estimate_gp_params(const Eigen::MatrixX2d& coords, const Eigen::VectorXd& values) {
  if (coords.rows() < 3) throw std::invalid_argument("estimate_gp_params needs >= 3 points");
  const Eigen::VectorXd v = values.array() - values.mean();
  const double var = std::max(v.squaredNorm() / (v.size() - 1), 1e-12);
  const Eigen::MatrixXd d = pairwise_distances(coords, coords);
  const double dmax = d.maxCoeff();

  // coarse deterministic grid over (range, sigma^2 share, nugget share)
  const std::vector<double> range_frac = {0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0};
  const std::vector<double> nugget_frac = {0.0, 0.05, 0.15, 0.3, 0.5};
  const std::vector<double> scale = {0.5, 1.0, 1.5};
  GpParams best;
  double best_ll = -std::numeric_limits<double>::infinity();
  for (double rf : range_frac)
    for (double nf : nugget_frac)
      for (double sc : scale) {
        GpParams p;
        p.range = rf * dmax;
        p.sigma = std::sqrt(std::max((1.0 - nf) * var * sc, 1e-10));
        p.nugget = nf * var * sc + 1e-10;
        const double ll = gaussian_loglik_zero_mean(v, exp_covariance(p, coords));
        if (ll > best_ll) {
          best_ll = ll;
          best = p;
        }
      }
  return best;
}

MatchSet dapsm_match(const Eigen::VectorXd& treated_scores, const Eigen::MatrixX2d& treated_coords,
                     const Eigen::VectorXd& control_scores, const Eigen::MatrixX2d& control_coords,
                     double w) {
  if (w < 0.0 || w > 1.0) throw std::invalid_argument("DAPSm weight w must lie in [0,1]");
  const int nt = static_cast<int>(treated_scores.size());
  const int nc = static_cast<int>(control_scores.size());
  if (nt < 1 || nc < 1)
    throw std::invalid_argument("dapsm_match needs at least one treated and one control unit");

  // m = maximum distance over all pairs of study locations
  Eigen::MatrixX2d all(nt + nc, 2);
  all.topRows(nt) = treated_coords;
  all.bottomRows(nc) = control_coords;
  const double m = pairwise_distances(all, all).maxCoeff();
  const double dm = m > 0.0 ? m : 1.0;  // all points coincide: distance term vanishes

  Eigen::MatrixXd D(nt, nc);
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < nc; ++j)
      D(i, j) = w * std::abs(treated_scores(i) - control_scores(j)) +
                (1.0 - w) * (treated_coords.row(i) - control_coords.row(j)).norm() / dm;

  // ascending order of each treated unit's minimum achievable D
  std::vector<int> order(nt);
  std::iota(order.begin(), order.end(), 0);
  Eigen::VectorXd mins(nt);
  for (int i = 0; i < nt; ++i) mins(i) = D.row(i).minCoeff();
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return mins(a) < mins(b); });

  MatchSet out;
  out.w = w;
  std::vector<bool> used(nc, false);
  for (int i : order) {
    int best = -1;
    double bestd = std::numeric_limits<double>::infinity();
    for (int j = 0; j < nc; ++j)
      if (!used[j] && D(i, j) < bestd) {
        bestd = D(i, j);
        best = j;
      }
    if (best < 0) {
      out.unmatched_treated.push_back(i);
      continue;
    }
    used[best] = true;
    out.pairs.push_back({i, best, bestd});
  }
  return out;
}

Eigen::MatrixX2d Grid::nodes() const {
  Eigen::MatrixX2d out(n_nodes(), 2);
  for (int k = 0; k < n_nodes(); ++k) out.row(k) = node(k).transpose();
  return out;
}

Grid Grid::cover(const Eigen::MatrixX2d& coords, int nx, int ny, double pad) {
  if (nx < 2 || ny < 2) throw std::invalid_argument("grid needs nx, ny >= 2");
  Grid g;
  g.nx = nx;
  g.ny = ny;
  const double x0 = coords.col(0).minCoeff() - pad, x1 = coords.col(0).maxCoeff() + pad;
  const double y0 = coords.col(1).minCoeff() - pad, y1 = coords.col(1).maxCoeff() + pad;
  g.x0 = x0;
  g.y0 = y0;
  g.dx = (x1 - x0) / (nx - 1);
  g.dy = (y1 - y0) / (ny - 1);
  if (!(g.dx > 0.0) || !(g.dy > 0.0))
    throw std::invalid_argument("grid cover: degenerate extent");
  return g;
}

Eigen::VectorXd krige_impute(const Eigen::MatrixX2d& coords, const Eigen::VectorXd& values,
                             const GpParams& params, const Grid& grid, bool parallel) {
  params.validate();
  if (coords.rows() < 2) throw std::invalid_argument("krige_impute needs >= 2 observations");
  const Eigen::MatrixXd C = exp_covariance(params, coords);
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("krige_impute: singular covariance (duplicate sites need a nugget)");
  const double mean = values.mean();
  const Eigen::VectorXd wts = llt.solve((values.array() - mean).matrix());

  const int G = grid.n_nodes();
  Eigen::VectorXd pred(G);
  const double s2 = params.sigma * params.sigma;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parallel)
#endif
  for (int k = 0; k < G; ++k) {
    const Eigen::Vector2d g = grid.node(k);
    double acc = 0.0;
    for (int i = 0; i < coords.rows(); ++i) {
      const double dist = (coords.row(i).transpose() - g).norm();
      double c = s2 * std::exp(-dist / params.range);
      if (dist == 0.0) c += params.nugget;  // prediction of the observed value
      acc += c * wts(i);
    }
    pred(k) = mean + acc;
  }
  return pred;
}

Eigen::MatrixXd krige_conditional_draws(const Eigen::MatrixX2d& coords,
                                        const Eigen::VectorXd& values, const GpParams& params,
                                        const Grid& grid, int k_draws, std::uint64_t seed) {
  params.validate();
  if (k_draws < 1) throw std::invalid_argument("need at least one conditional draw");
  const Eigen::MatrixXd C = exp_covariance(params, coords);
  Eigen::LLT<Eigen::MatrixXd> llt(C);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("conditional draws: singular covariance");
  const Eigen::MatrixX2d gn = grid.nodes();
  const Eigen::MatrixXd dgo = pairwise_distances(gn, coords);
  const Eigen::MatrixXd dgg = pairwise_distances(gn, gn);
  const double s2 = params.sigma * params.sigma;
  const Eigen::MatrixXd Cgo = (s2 * (-dgo / params.range).array().exp()).matrix();
  Eigen::MatrixXd Cgg = (s2 * (-dgg / params.range).array().exp()).matrix();

  const double mean = values.mean();
  const Eigen::VectorXd mu =
      Eigen::VectorXd::Constant(grid.n_nodes(), mean) + Cgo * llt.solve((values.array() - mean).matrix());
  Eigen::MatrixXd cond = Cgg - Cgo * llt.solve(Cgo.transpose());
  cond.diagonal().array() += 1e-8 * s2;  // jitter for the factorization
  Eigen::LLT<Eigen::MatrixXd> lltc(cond);
  if (lltc.info() != Eigen::Success)
    throw std::runtime_error("conditional draws: conditional covariance not PD");
  const Eigen::MatrixXd L = lltc.matrixL();

  Rng rng(seed);
  Eigen::MatrixXd draws(k_draws, grid.n_nodes());
  Eigen::VectorXd z(grid.n_nodes());
  for (int k = 0; k < k_draws; ++k) {
    for (int i = 0; i < z.size(); ++i) z(i) = rng.normal();
    draws.row(k) = (mu + L * z).transpose();
  }
  return draws;
}

void SpilloverKernel::validate() const {
  if (kind == Kind::Disc && !(radius > 0.0))
    throw std::invalid_argument("disc kernel needs radius > 0");
  if (kind == Kind::Gaussian && !(bandwidth > 0.0))
    throw std::invalid_argument("gaussian kernel needs bandwidth > 0");
}

Eigen::VectorXd spillover_summary(const Grid& grid, const Eigen::VectorXd& field,
                                  const SpilloverKernel& kernel, const Eigen::MatrixX2d& targets,
                                  bool parallel) {
  kernel.validate();
  if (field.size() != grid.n_nodes())
    throw std::invalid_argument("field length must match the grid");
  const int nt = static_cast<int>(targets.rows());
  const int G = grid.n_nodes();
  Eigen::VectorXd out(nt);
  std::vector<int> empty;

#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parallel)
#endif
  for (int i = 0; i < nt; ++i) {
    double wsum = 0.0, asum = 0.0;
    for (int k = 0; k < G; ++k) {
      const double dist = (grid.node(k) - targets.row(i).transpose()).norm();
      double w = 0.0;
      if (kernel.kind == SpilloverKernel::Kind::Disc) {
        w = dist <= kernel.radius ? 1.0 : 0.0;
      } else {
        const double r = dist / kernel.bandwidth;
        w = std::exp(-0.5 * r * r);
      }
      wsum += w;
      asum += w * field(k);
    }
    out(i) = wsum > 0.0 ? asum / wsum : std::numeric_limits<double>::quiet_NaN();
  }
  for (int i = 0; i < nt; ++i)
    if (!std::isfinite(out(i)))
      throw std::invalid_argument("empty kernel support at target " + std::to_string(i) +
                                  ": no grid node within the disc radius");
  return out;
}

GaussianFit fit_gp_regression(const GpRegressionModel& model, const ChainSettings& settings,
                              Rng rng) {
  settings.validate();
  check_full_rank(model.design, model.coef_names);
  const int n = static_cast<int>(model.response.size());
  if (model.design.rows() != n || model.coords.rows() != n)
    throw std::invalid_argument("gp regression: size mismatch");

  const PriorSpec prior;
  const Eigen::MatrixXd dist = pairwise_distances(model.coords, model.coords);
  const double dmax = std::max(dist.maxCoeff(), 1e-12);
  const double var0 = std::max(
      (model.response.array() - model.response.mean()).square().sum() / (n - 1), 1e-8);

  struct CovState {
    double sig2, tau2, range;
  } cov{0.5 * var0, 0.5 * var0, 0.25 * dmax};

  Eigen::VectorXd coef = Eigen::VectorXd::Zero(model.design.cols());
  Eigen::LLT<Eigen::MatrixXd> llt_cur;
  double logdet_cur = 0.0;
  const auto factor = [&](const CovState& c, Eigen::LLT<Eigen::MatrixXd>& llt, double& logdet) {
    Eigen::MatrixXd S = (c.sig2 * (-dist / c.range).array().exp()).matrix();
    S.diagonal().array() += c.tau2;
    llt.compute(S);
    if (llt.info() != Eigen::Success) return false;
    logdet = 0.0;
    for (int i = 0; i < n; ++i) logdet += std::log(llt.matrixL()(i, i));
    return true;
  };
  if (!factor(cov, llt_cur, logdet_cur))
    throw std::runtime_error("gp regression: initial covariance not PD");

  const auto loglik = [&](const Eigen::LLT<Eigen::MatrixXd>& llt, double logdet) {
    const Eigen::VectorXd r = model.response - model.design * coef;
    return -logdet - 0.5 * r.dot(llt.solve(r));
  };
  const auto log_prior = [&](const CovState& c) {
    // IG(0.5, 0.005) on both variances; range uniform on (0, 2 dmax)
    const double lp_s = -(prior.var_shape + 1.0) * std::log(c.sig2) - prior.var_rate / c.sig2;
    const double lp_t = -(prior.var_shape + 1.0) * std::log(c.tau2) - prior.var_rate / c.tau2;
    const bool ok = c.range > 0.0 && c.range < 2.0 * dmax;
    return ok ? lp_s + lp_t : -std::numeric_limits<double>::infinity();
  };

  std::vector<AdaptiveStep> steps(3, AdaptiveStep(0.6));
  std::map<std::string, std::vector<double>> draws;
  std::vector<double> accs(3, 0.0);
  const int retained = settings.retained();
  GaussianFit fit;
  fit.coef_draws.resize(retained, model.design.cols());
  int kept = 0;

  for (int it = 0; it < settings.iterations; ++it) {
    if (it == settings.burnin)
      for (auto& s : steps) s.freeze();

    // coefficients | covariance: conjugate GLS
    {
      const Eigen::MatrixXd SiD = llt_cur.solve(model.design);
      Eigen::MatrixXd prec = model.design.transpose() * SiD;
      prec.diagonal().array() += 1.0 / prior.coef_variance;
      Eigen::LLT<Eigen::MatrixXd> lltp(prec);
      const Eigen::VectorXd mean = lltp.solve(SiD.transpose() * model.response);
      coef = mvn_draw(lltp, mean, rng);
    }

    // covariance parameters: log-scale RW MH, one at a time
    double ll_cur = loglik(llt_cur, logdet_cur) + log_prior(cov);
    for (int which = 0; which < 3; ++which) {
      CovState prop = cov;
      double jac = 0.0;
      const double z = steps[which].step() * rng.normal();
      if (which == 0) {
        prop.sig2 = cov.sig2 * std::exp(z);
        jac = std::log(prop.sig2 / cov.sig2);
      } else if (which == 1) {
        prop.tau2 = cov.tau2 * std::exp(z);
        jac = std::log(prop.tau2 / cov.tau2);
      } else {
        prop.range = cov.range * std::exp(z);
        jac = std::log(prop.range / cov.range);
      }
      Eigen::LLT<Eigen::MatrixXd> llt_prop;
      double logdet_prop = 0.0;
      bool ok = factor(prop, llt_prop, logdet_prop);
      if (ok) {
        const double ll_prop = loglik(llt_prop, logdet_prop) + log_prior(prop);
        ok = std::isfinite(ll_prop) && std::log(rng.uniform() + 1e-300) < ll_prop - ll_cur + jac;
        if (ok) {
          cov = prop;
          llt_cur = std::move(llt_prop);
          logdet_cur = logdet_prop;
          ll_cur = ll_prop;
        }
      }
      steps[which].observe(ok ? 1.0 : 0.0);
      if (it >= settings.burnin) accs[which] += ok ? 1.0 : 0.0;
    }

    if (it < settings.burnin || (it - settings.burnin) % settings.thin != 0) continue;
    fit.coef_draws.row(kept) = coef.transpose();
    for (int j = 0; j < coef.size(); ++j) draws[model.coef_names[j]].push_back(coef(j));
    draws["sigma2_gp"].push_back(cov.sig2);
    draws["tau2"].push_back(cov.tau2);
    draws["range"].push_back(cov.range);
    ++kept;
  }

  const double denom = settings.iterations - settings.burnin;
  fit.summary = summarize(draws,
                          {{"sigma2_gp", accs[0] / denom},
                           {"tau2", accs[1] / denom},
                           {"range", accs[2] / denom}},
                          settings.iterations, settings.burnin, settings.thin);
  return fit;
}

FitResult fit_discontinuity(const PointDataset& data,
                            const std::function<bool(double, double)>& in_region,
                            const ChainSettings& settings, double band_halfwidth) {
  data.validate();
  const int n = data.n();
  Eigen::VectorXd a(n);
  for (int i = 0; i < n; ++i) a(i) = in_region(data.coords(i, 0), data.coords(i, 1)) ? 1.0 : 0.0;
  const double na1 = a.sum();
  if (na1 == 0.0 || na1 == n)
    throw std::invalid_argument("discontinuity design needs samples on both sides of the border");

  // band restriction: distance to the nearest opposite-side point stands in
  // for distance to the boundary
  std::vector<int> keep;
  if (std::isfinite(band_halfwidth)) {
    for (int i = 0; i < n; ++i) {
      double dmin = std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j)
        if (a(i) != a(j))
          dmin = std::min(dmin, (data.coords.row(i) - data.coords.row(j)).norm());
      if (dmin <= band_halfwidth) keep.push_back(i);
    }
    if (static_cast<int>(keep.size()) < 10)
      throw std::invalid_argument("discontinuity band h=" + format_double(band_halfwidth) +
                                  " keeps only " + std::to_string(keep.size()) +
                                  " points; insufficient data in band");
  } else {
    keep.resize(n);
    std::iota(keep.begin(), keep.end(), 0);
  }

  const int m = static_cast<int>(keep.size());
  GpRegressionModel gm;
  gm.design.resize(m, 1 + data.x.cols());
  gm.response.resize(m);
  gm.coords.resize(m, 2);
  gm.coef_names = {"gamma0", "beta"};
  for (int j = 1; j < data.x.cols(); ++j) gm.coef_names.push_back("gamma" + std::to_string(j));
  for (int r = 0; r < m; ++r) {
    const int i = keep[r];
    gm.design(r, 0) = 1.0;
    gm.design(r, 1) = a(i);
    for (int j = 1; j < data.x.cols(); ++j) gm.design(r, 1 + j) = data.x(i, j);
    gm.response(r) = data.y(i);
    gm.coords.row(r) = data.coords.row(i);
  }
  double a_in_band = 0.0;
  for (int r = 0; r < m; ++r) a_in_band += gm.design(r, 1);
  if (a_in_band == 0.0 || a_in_band == m)
    throw std::invalid_argument("discontinuity band is one-sided; widen h");

  Rng rng(settings.seed);
  const GaussianFit gf = fit_gp_regression(gm, settings, rng.sub("outcome"));
  FitResult out;
  out.posterior = gf.summary;
  const ParamSummary& b = gf.summary.at("beta");
  out.estimate.estimator = "RD";
  out.estimate.point = b.mean;
  out.estimate.lo95 = b.lo95;
  out.estimate.hi95 = b.hi95;
  out.estimate.diagnostics["n_band"] = m;
  return out;
}

GeostatInterferenceFit fit_geostat_interference(const PointDataset& data,
                                                const SpilloverKernel& kernel, const Grid& grid,
                                                const ChainSettings& settings, int n_imputations) {
  data.validate();
  kernel.validate();
  if (n_imputations < 1) throw std::invalid_argument("n_imputations must be >= 1");
  const int n = data.n();
  if ((data.a.array() - data.a.mean()).abs().maxCoeff() < 1e-12)
    throw std::invalid_argument("constant treatment: direct and spillover terms are collinear");

  const GpParams gp = estimate_gp_params(data.coords, data.a);
  const Eigen::VectorXd mean_field = krige_impute(data.coords, data.a, gp, grid);
  const Eigen::VectorXd abar_plug = spillover_summary(grid, mean_field, kernel, data.coords);

  Rng rng(settings.seed);
  const auto build = [&](const Eigen::VectorXd& abar) {
    GpRegressionModel gm;
    gm.design.resize(n, 3 + data.x.cols() - 1);
    gm.design.col(0).setOnes();
    gm.design.col(1) = data.a;
    gm.design.col(2) = abar;
    gm.coef_names = {"gamma0", "beta1", "beta2"};
    for (int j = 1; j < data.x.cols(); ++j) {
      gm.design.col(2 + j) = data.x.col(j);
      gm.coef_names.push_back("gamma" + std::to_string(j));
    }
    gm.response = data.y;
    gm.coords = data.coords;
    return gm;
  };

  std::vector<double> b1_draws, b2_draws;
  PosteriorSummary last;
  if (n_imputations == 1) {
    const GaussianFit gf = fit_gp_regression(build(abar_plug), settings, rng.sub("outcome"));
    b1_draws = gf.summary.at("beta1").draws;
    b2_draws = gf.summary.at("beta2").draws;
    last = gf.summary;
  } else {
    const Eigen::MatrixXd fields = krige_conditional_draws(
        data.coords, data.a, gp, grid, n_imputations, Rng(settings.seed).sub("impute").raw());
    for (int k = 0; k < n_imputations; ++k) {
      const Eigen::VectorXd abar =
          spillover_summary(grid, fields.row(k).transpose(), kernel, data.coords);
      const GaussianFit gf =
          fit_gp_regression(build(abar), settings, rng.sub("outcome").sub(k));
      const auto& d1 = gf.summary.at("beta1").draws;
      const auto& d2 = gf.summary.at("beta2").draws;
      b1_draws.insert(b1_draws.end(), d1.begin(), d1.end());
      b2_draws.insert(b2_draws.end(), d2.begin(), d2.end());
      last = gf.summary;
    }
  }

  GeostatInterferenceFit out;
  out.abar = abar_plug;
  out.posterior = last;
  const auto mk = [&](std::vector<double> d, const char* tag) {
    const ParamSummary s = summarize_draws(std::move(d));
    CausalEstimate e;
    e.estimator = tag;
    e.point = s.mean;
    e.lo95 = s.lo95;
    e.hi95 = s.hi95;
    e.diagnostics["n"] = n;
    return e;
  };
  out.direct = mk(std::move(b1_draws), "geostat-direct");
  out.indirect = mk(std::move(b2_draws), "geostat-indirect");
  return out;
}

}  // namespace spcausal
