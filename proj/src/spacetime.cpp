#include "spcausal/spacetime.hpp"

#include <cmath>
#include <stdexcept>

#include "spcausal/propensity.hpp"

namespace spcausal {

namespace {

// row lookup: (region, t) -> row, requiring a complete panel
std::vector<std::vector<int>> panel_index(const PanelDataset& p) {
  std::vector<std::vector<int>> idx(p.n_regions, std::vector<int>(p.n_times + 1, -1));
  for (int r = 0; r < p.n(); ++r) idx[p.region[r]][p.t[r]] = r;
  for (int i = 0; i < p.n_regions; ++i)
    for (int t = 1; t <= p.n_times; ++t)
      if (idx[i][t] < 0)
        throw std::invalid_argument("panel is incomplete: region " + std::to_string(i) +
                                    " missing at t=" + std::to_string(t));
  return idx;
}

Eigen::VectorXd neighbor_mean_at(const PanelDataset& p, const Lattice& lat,
                                 const std::vector<std::vector<int>>& idx, int t) {
  Eigen::VectorXd abar(lat.n_regions);
  for (int i = 0; i < lat.n_regions; ++i) {
    double s = 0.0;
    for (int k : lat.neighbors[i]) s += p.a(idx[k][t]);
    abar(i) = s / lat.m[i];
  }
  return abar;
}

ParamSummary pick(const PosteriorSummary& post, const std::string& name) {
  return post.at(name);
}

}  // namespace

JanesFit janes_test(const PanelDataset& panel, int time_spline_df,
                    const ChainSettings& settings) {
  panel.validate();
  if (panel.n_times < 3) throw std::invalid_argument("janes_test needs at least 3 time steps");

  // Abar_t and the centered treatment
  std::vector<double> abar_t(panel.n_times + 1, 0.0);
  std::vector<int> cnt(panel.n_times + 1, 0);
  for (int r = 0; r < panel.n(); ++r) {
    abar_t[panel.t[r]] += panel.a(r);
    ++cnt[panel.t[r]];
  }
  for (int t = 1; t <= panel.n_times; ++t) abar_t[t] /= cnt[t];

  Eigen::VectorXd global(panel.n()), local(panel.n()), tval(panel.n());
  for (int r = 0; r < panel.n(); ++r) {
    global(r) = abar_t[panel.t[r]];
    local(r) = panel.a(r) - global(r);
    tval(r) = panel.t[r];
  }
  if ((local.array().abs() < 1e-12).all())
    throw std::invalid_argument(
        "treatment is constant within every time step: eta2 is unidentified");
  double mn = *std::min_element(abar_t.begin() + 1, abar_t.end());
  double mx = *std::max_element(abar_t.begin() + 1, abar_t.end());
  if (mx - mn < 1e-12)
    throw std::invalid_argument(
        "Abar_t is constant over time: eta1 is collinear with the intercept");

  // smooth time functions: df-basis with the leading column dropped
  const SplineBasis tb = make_basis_df(tval, time_spline_df);
  const Eigen::MatrixXd tcols = spline_transform(tval, tb);

  const int p_extra = static_cast<int>(panel.x.cols()) - 1;
  const int p_time = static_cast<int>(tcols.cols()) - 1;
  Eigen::MatrixXd X(panel.n(), 3 + p_time + p_extra);
  X.col(0).setOnes();
  X.col(1) = global;
  X.col(2) = local;
  std::vector<std::string> names = {"gamma0", "eta1", "eta2"};
  for (int j = 1; j < tcols.cols(); ++j) {
    X.col(2 + j) = tcols.col(j);
    names.push_back("time" + std::to_string(j));
  }
  for (int j = 1; j < panel.x.cols(); ++j) {
    X.col(2 + p_time + j) = panel.x.col(j);
    names.push_back("gamma" + std::to_string(j));
  }

  GaussianModel m;
  m.design = std::move(X);
  m.coef_names = std::move(names);
  m.response = panel.y;
  m.field = FieldKind::None;
  Rng rng(settings.seed);
  const GaussianFit gf = fit_gaussian_spatial(m, settings, rng.sub("outcome"));

  JanesFit out;
  out.posterior = gf.summary;
  out.eta1 = pick(gf.summary, "eta1");
  out.eta2 = pick(gf.summary, "eta2");
  std::vector<double> diff(out.eta1.draws.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = out.eta1.draws[i] - out.eta2.draws[i];
  out.diff = summarize_draws(std::move(diff));
  return out;
}

CausalEstimate DidFit::did_estimate() const {
  CausalEstimate e;
  e.estimator = "DID";
  e.point = beta3.mean;
  e.lo95 = beta3.lo95;
  e.hi95 = beta3.hi95;
  e.flags = flags;
  return e;
}

DidFit fit_did(const PanelDataset& panel, bool spillover, const Lattice* lattice,
               const ChainSettings& settings) {
  panel.validate();
  if (panel.n_times != 2) throw std::invalid_argument("fit_did expects exactly two time steps");
  if (spillover && !lattice)
    throw std::invalid_argument("the spillover variant needs a lattice for neighbor means");
  const auto idx = panel_index(panel);
  const int N = panel.n_regions;

  double a_min = 1e300, a_max = -1e300;
  for (int r = 0; r < panel.n(); ++r) {
    a_min = std::min(a_min, panel.a(r));
    a_max = std::max(a_max, panel.a(r));
  }
  if (!(a_max > a_min))
    throw std::invalid_argument("fit_did: no treated/control contrast in the panel");

  // difference the two periods: region effects and time-invariant confounders
  // cancel; column j of the differenced design identifies its coefficient
  // only if the underlying term varies over time
  Eigen::VectorXd dy(N), d_a(N), d_ta(N);
  Eigen::MatrixXd dx(N, panel.x.cols() - 1);
  for (int i = 0; i < N; ++i) {
    const int r1 = idx[i][1], r2 = idx[i][2];
    dy(i) = panel.y(r2) - panel.y(r1);
    d_a(i) = panel.a(r2) - panel.a(r1);
    d_ta(i) = 2.0 * panel.a(r2) - 1.0 * panel.a(r1);
    for (int c = 1; c < panel.x.cols(); ++c)
      dx(i, c - 1) = panel.x(r2, c) - panel.x(r1, c);
  }
  Eigen::VectorXd d_ab, d_tab;
  if (spillover) {
    const Eigen::VectorXd ab1 = neighbor_mean_at(panel, *lattice, idx, 1);
    const Eigen::VectorXd ab2 = neighbor_mean_at(panel, *lattice, idx, 2);
    d_ab = ab2 - ab1;
    d_tab = 2.0 * ab2 - ab1;
  }

  DidFit out;
  std::vector<Eigen::VectorXd> cols = {Eigen::VectorXd::Ones(N)};
  std::vector<std::string> names = {"beta2"};
  const auto add_col = [&](const Eigen::VectorXd& c, const std::string& nm, bool required) {
    if ((c.array() - 0.0).abs().maxCoeff() < 1e-12) {
      if (required)
        throw std::invalid_argument("column " + nm + " is identically zero after differencing");
      out.flags.push_back(nm + "_unidentified");
      return false;
    }
    cols.push_back(c);
    names.push_back(nm);
    return true;
  };
  const bool has_b1 = add_col(d_a, "beta1", false);
  add_col(d_ta, "beta3", true);
  bool has_b4 = false;
  if (spillover) {
    has_b4 = add_col(d_ab, "beta4", false);
    add_col(d_tab, "beta5", true);
  }
  for (int c = 0; c < dx.cols(); ++c)
    if (dx.col(c).cwiseAbs().maxCoeff() > 1e-12) {
      cols.push_back(dx.col(c));
      names.push_back("gamma" + std::to_string(c + 1));
    }

  Eigen::MatrixXd X(N, cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) X.col(c) = cols[c];

  GaussianModel m;
  m.design = std::move(X);
  m.coef_names = names;
  m.response = dy;
  m.field = FieldKind::None;
  Rng rng(settings.seed);
  const GaussianFit gf = fit_gaussian_spatial(m, settings, rng.sub("outcome"));

  out.posterior = gf.summary;
  out.beta2 = pick(gf.summary, "beta2");
  out.beta3 = pick(gf.summary, "beta3");
  if (has_b1) out.beta1 = pick(gf.summary, "beta1");
  if (spillover) {
    if (has_b4) out.beta4 = pick(gf.summary, "beta4");
    out.beta5 = pick(gf.summary, "beta5");
  }
  return out;
}

DidFit fit_did_level(const PanelDataset& panel, bool spillover, const Lattice* lattice,
                     const ChainSettings& settings) {
  panel.validate();
  if (spillover && !lattice)
    throw std::invalid_argument("the spillover variant needs a lattice for neighbor means");
  const auto idx = panel_index(panel);
  const int n = panel.n();

  Eigen::MatrixXd X(n, 4 + (spillover ? 2 : 0) + panel.x.cols() - 1);
  std::vector<std::string> names = {"gamma0", "beta1", "beta2", "beta3"};
  X.col(0).setOnes();
  for (int r = 0; r < n; ++r) {
    X(r, 1) = panel.a(r);
    X(r, 2) = panel.t[r];
    X(r, 3) = panel.t[r] * panel.a(r);
  }
  int c = 4;
  if (spillover) {
    std::vector<Eigen::VectorXd> ab(panel.n_times + 1);
    for (int t = 1; t <= panel.n_times; ++t) ab[t] = neighbor_mean_at(panel, *lattice, idx, t);
    for (int r = 0; r < n; ++r) {
      X(r, 4) = ab[panel.t[r]](panel.region[r]);
      X(r, 5) = panel.t[r] * X(r, 4);
    }
    names.push_back("beta4");
    names.push_back("beta5");
    c = 6;
  }
  for (int j = 1; j < panel.x.cols(); ++j) {
    X.col(c++) = panel.x.col(j);
    names.push_back("gamma" + std::to_string(j));
  }

  GaussianModel m;
  m.design = std::move(X);
  m.coef_names = names;
  m.response = panel.y;
  m.region = panel.region;
  m.n_regions = panel.n_regions;
  m.field = FieldKind::Iid;  // time-invariant additive region effects
  Rng rng(settings.seed);
  const GaussianFit gf = fit_gaussian_spatial(m, settings, rng.sub("outcome"));

  DidFit out;
  out.posterior = gf.summary;
  out.beta1 = pick(gf.summary, "beta1");
  out.beta2 = pick(gf.summary, "beta2");
  out.beta3 = pick(gf.summary, "beta3");
  if (spillover) {
    out.beta4 = pick(gf.summary, "beta4");
    out.beta5 = pick(gf.summary, "beta5");
  }
  return out;
}

GrangerFit fit_granger(const PanelDataset& panel, int lags, bool spillover,
                       const Lattice& lattice, const ChainSettings& settings) {
  panel.validate();
  if (lags < 1) throw std::invalid_argument("fit_granger needs at least one lag");
  if (panel.n_times <= lags + 1)
    throw std::invalid_argument("insufficient time depth: need T > L + 1 (T=" +
                                std::to_string(panel.n_times) + ", L=" + std::to_string(lags) +
                                ")");
  const auto idx = panel_index(panel);
  const int N = panel.n_regions;
  const int T = panel.n_times;
  const int steps = T - lags;
  const int n = N * steps;
  const int p_extra = static_cast<int>(panel.x.cols()) - 1;

  Eigen::MatrixXd X(n, 1 + lags * (2 + p_extra) + (spillover ? 1 : 0));
  Eigen::VectorXd y(n);
  std::vector<int> region_of(n);
  std::vector<std::string> names = {"gamma0"};
  for (int l = 1; l <= lags; ++l) names.push_back("beta" + std::to_string(l));
  for (int l = 1; l <= lags; ++l) names.push_back("rho" + std::to_string(l));
  for (int l = 1; l <= lags; ++l)
    for (int j = 1; j < panel.x.cols(); ++j)
      names.push_back("gamma" + std::to_string(j) + "_l" + std::to_string(l));
  if (spillover) names.push_back("beta_nbr1");

  int row = 0;
  for (int t = lags + 1; t <= T; ++t) {
    for (int i = 0; i < N; ++i, ++row) {
      y(row) = panel.y(idx[i][t]);
      // the CAR field is independent over time: one copy of the lattice per step
      region_of[row] = (t - lags - 1) * N + i;
      X(row, 0) = 1.0;
      int c = 1;
      for (int l = 1; l <= lags; ++l) X(row, c++) = panel.a(idx[i][t - l]);
      for (int l = 1; l <= lags; ++l) X(row, c++) = panel.y(idx[i][t - l]);
      for (int l = 1; l <= lags; ++l)
        for (int j = 1; j < panel.x.cols(); ++j) X(row, c++) = panel.x(idx[i][t - l], j);
      if (spillover) {
        double s = 0.0;
        for (int k : lattice.neighbors[i]) s += panel.a(idx[k][t - 1]);
        X(row, c++) = s / lattice.m[i];
      }
    }
  }

  const Lattice expanded = replicate_lattice(lattice, steps);
  GaussianModel m;
  m.design = std::move(X);
  m.coef_names = names;
  m.response = y;
  m.region = region_of;
  m.lattice = &expanded;
  m.field = FieldKind::Car;
  Rng rng(settings.seed);
  const GaussianFit gf = fit_gaussian_spatial(m, settings, rng.sub("outcome"));

  GrangerFit out;
  out.lags = lags;
  out.posterior = gf.summary;
  for (int l = 1; l <= lags; ++l) {
    out.beta.push_back(pick(gf.summary, "beta" + std::to_string(l)));
    out.rho.push_back(pick(gf.summary, "rho" + std::to_string(l)));
    const ParamSummary& b = out.beta.back();
    if (b.lo95 > 0.0 || b.hi95 < 0.0) out.any_lag_excludes_zero = true;
  }
  return out;
}

}  // namespace spcausal
