#include "spcausal/engine.hpp"

#include <Eigen/QR>
#include <stdexcept>

namespace spcausal {

void ChainSettings::validate() const {
  if (burnin < 0 || iterations <= burnin)
    throw std::invalid_argument("chain settings: need iterations > burnin >= 0");
  if (thin < 1) throw std::invalid_argument("chain settings: thin must be >= 1");
}

FieldLayout FieldLayout::none() { return FieldLayout{}; }

namespace {
std::vector<std::vector<int>> group_obs(int n_regions, const std::vector<int>& region_of_obs) {
  std::vector<std::vector<int>> by(n_regions);
  for (int j = 0; j < static_cast<int>(region_of_obs.size()); ++j) {
    const int r = region_of_obs[j];
    if (r < 0 || r >= n_regions)
      throw std::invalid_argument("observation region id " + std::to_string(r) +
                                  " outside 0.." + std::to_string(n_regions - 1));
    by[r].push_back(j);
  }
  return by;
}
}  // namespace

FieldLayout FieldLayout::car(const Lattice& lattice, const std::vector<int>& region_of_obs) {
  FieldLayout f;
  f.kind = FieldKind::Car;
  f.lattice = &lattice;
  f.n_regions = lattice.n_regions;
  f.obs_by_region = group_obs(lattice.n_regions, region_of_obs);
  return f;
}

FieldLayout FieldLayout::iid(int n_regions, const std::vector<int>& region_of_obs) {
  FieldLayout f;
  f.kind = FieldKind::Iid;
  f.n_regions = n_regions;
  f.obs_by_region = group_obs(n_regions, region_of_obs);
  return f;
}

void check_full_rank(const Eigen::MatrixXd& design, const std::vector<std::string>& names) {
  if (design.rows() == 0) return;
  // identically-zero columns are tolerated: their coefficients simply recover
  // the prior (used by null-model invariants); collinearity among the active
  // columns is still an error
  std::vector<int> active;
  for (int c = 0; c < design.cols(); ++c)
    if (design.col(c).cwiseAbs().maxCoeff() > 0.0) active.push_back(c);
  if (active.empty()) return;
  Eigen::MatrixXd sub(design.rows(), active.size());
  for (std::size_t c = 0; c < active.size(); ++c) sub.col(c) = design.col(active[c]);
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sub);
  qr.setThreshold(1e-9);
  if (qr.rank() < sub.cols()) {
    std::string msg = "design matrix is rank deficient (rank " + std::to_string(qr.rank()) +
                      " of " + std::to_string(design.cols()) + "); columns:";
    for (const auto& n : names) msg += " " + n;
    throw std::invalid_argument(msg);
  }
}

SweepAccept gaussian_gibbs_sweep(GaussianState& st, const Eigen::MatrixXd& design,
                                 const Eigen::VectorXd& response, const FieldLayout& field,
                                 const std::vector<int>& level_cols, AdaptiveStep& rho_step,
                                 const PriorSpec& prior, Rng& rng) {
  SweepAccept acc;
  const bool has_field = field.kind != FieldKind::None;

  // coefficients | field, tau2
  Eigen::VectorXd resp = response;
  if (has_field)
    for (int r = 0; r < field.n_regions; ++r)
      for (int j : field.obs_by_region[r]) resp(j) -= st.u(r);
  st.coef = gibbs_normal_coefficients(design, resp, st.tau2, prior, rng);

  Eigen::VectorXd resid = response - design * st.coef;

  if (has_field) {
    // field | rest, one region at a time (exact Gibbs from the CAR full
    // conditional Normal(rho * Ubar_i, sigma^2/m_i), or iid Normal(0, sigma^2))
    for (int i = 0; i < field.n_regions; ++i) {
      double prior_prec = 0.0, prior_mean_times_prec = 0.0;
      if (field.kind == FieldKind::Car) {
        const auto& lat = *field.lattice;
        prior_prec = lat.m[i] / st.sig2_u;
        double nb_sum = 0.0;
        for (int k : lat.neighbors[i]) nb_sum += st.u(k);
        prior_mean_times_prec = st.rho_u * nb_sum / st.sig2_u;
      } else {
        prior_prec = 1.0 / st.sig2_u;
      }
      double like_prec = 0.0, like_sum = 0.0;
      for (int j : field.obs_by_region[i]) {
        like_prec += 1.0 / st.tau2;
        like_sum += resid(j) / st.tau2;
      }
      const double post_prec = prior_prec + like_prec;
      const double post_mean = (prior_mean_times_prec + like_sum) / post_prec;
      st.u(i) = post_mean + rng.normal() / std::sqrt(post_prec);
    }

    // sum-to-zero recentering, compensated on the level columns
    const double shift = st.u.mean();
    st.u.array() -= shift;
    for (int c : level_cols) st.coef(c) += shift;

    // field scale
    double quad = 0.0;
    if (field.kind == FieldKind::Car) {
      quad = car_quadform(*field.lattice, st.u, st.rho_u);
    } else {
      quad = st.u.squaredNorm();
    }
    st.sig2_u =
        rng.inverse_gamma(prior.var_shape + 0.5 * field.n_regions, prior.var_rate + 0.5 * quad);

    // field dependence
    if (field.kind == FieldKind::Car) {
      const bool ok = mh_car_rho(st.rho_u, st.u, *field.lattice, std::sqrt(st.sig2_u),
                                 rho_step.step(), rng);
      acc.rho_u = ok ? 1.0 : 0.0;
      rho_step.observe(acc.rho_u);
    }

    resid = response - design * st.coef;
    for (int r = 0; r < field.n_regions; ++r)
      for (int j : field.obs_by_region[r]) resid(j) -= st.u(r);
  }

  st.tau2 = gibbs_variance(resid, prior, rng);
  return acc;
}

GaussianFit fit_gaussian_spatial(const GaussianModel& model, const ChainSettings& settings,
                                 Rng rng, const PriorSpec& prior) {
  settings.validate();
  prior.validate();
  check_full_rank(model.design, model.coef_names);
  if (model.design.rows() != model.response.size())
    throw std::invalid_argument("design/response size mismatch");
  if (static_cast<int>(model.coef_names.size()) != model.design.cols())
    throw std::invalid_argument("coefficient names must match design columns");

  FieldLayout field = FieldLayout::none();
  if (model.field == FieldKind::Car) {
    if (!model.lattice) throw std::invalid_argument("CAR field requires a lattice");
    field = FieldLayout::car(*model.lattice, model.region);
  } else if (model.field == FieldKind::Iid) {
    const int nr = model.n_regions > 0
                       ? model.n_regions
                       : (model.lattice ? model.lattice->n_regions : 0);
    if (nr <= 0) throw std::invalid_argument("iid field requires n_regions");
    field = FieldLayout::iid(nr, model.region);
  }

  GaussianState st;
  st.coef = Eigen::VectorXd::Zero(model.design.cols());
  if (field.kind != FieldKind::None) st.u = Eigen::VectorXd::Zero(field.n_regions);

  AdaptiveStep rho_step(0.7);
  const int retained = settings.retained();
  GaussianFit fit;
  fit.coef_draws.resize(retained, model.design.cols());
  fit.tau2_draws.reserve(retained);
  if (field.kind != FieldKind::None) {
    fit.field_mean = Eigen::VectorXd::Zero(field.n_regions);
    if (model.store_field_draws) fit.field_draws.resize(retained, field.n_regions);
  }

  std::map<std::string, std::vector<double>> draws;
  double rho_acc_sum = 0.0;
  int kept = 0;
  for (int it = 0; it < settings.iterations; ++it) {
    if (it == settings.burnin) rho_step.freeze();
    const SweepAccept acc =
        gaussian_gibbs_sweep(st, model.design, model.response, field, model.level_cols, rho_step,
                             prior, rng);
    if (it < settings.burnin || (it - settings.burnin) % settings.thin != 0) continue;
    rho_acc_sum += acc.rho_u;
    fit.coef_draws.row(kept) = st.coef.transpose();
    fit.tau2_draws.push_back(st.tau2);
    for (int j = 0; j < st.coef.size(); ++j) draws[model.coef_names[j]].push_back(st.coef(j));
    draws["tau2"].push_back(st.tau2);
    if (field.kind != FieldKind::None) {
      fit.field_mean += st.u;
      if (model.store_field_draws) fit.field_draws.row(kept) = st.u.transpose();
      draws["sigma2_u"].push_back(st.sig2_u);
      if (field.kind == FieldKind::Car) draws["rho_u"].push_back(st.rho_u);
    }
    ++kept;
  }
  if (field.kind != FieldKind::None) fit.field_mean /= static_cast<double>(kept);

  std::map<std::string, double> acceptance;
  if (field.kind == FieldKind::Car) acceptance["rho_u"] = rho_acc_sum / kept;
  fit.summary = summarize(draws, acceptance, settings.iterations, settings.burnin, settings.thin);
  if (!settings.trace_path.empty()) write_trace_jsonl(settings.trace_path, draws);
  return fit;
}

LogisticAccept logistic_gibbs_sweep(LogisticState& st, const Eigen::MatrixXd& design,
                                    const Eigen::VectorXd& treat01, const FieldLayout& field,
                                    AdaptiveStep& alpha_step, AdaptiveStep& v_step,
                                    AdaptiveStep& rho_step, const PriorSpec& prior, Rng& rng,
                                    const GaussianCoupling* coupling) {
  LogisticAccept out;
  const bool car = field.kind == FieldKind::Car;
  const int N = field.n_regions;

  // field v, one region at a time: CAR (or iid) prior + Bernoulli likelihood
  // (+ Gaussian coupling through psi * v in the outcome mean, joint model)
  Eigen::VectorXd xa = design * st.alpha;
  int acc_v = 0;
  for (int i = 0; i < N; ++i) {
    const double cur = st.v(i);
    const double prop = cur + v_step.step() * rng.normal();
    double lr = 0.0;
    if (car) {
      const auto& lat = *field.lattice;
      double nb_sum = 0.0;
      for (int k : lat.neighbors[i]) nb_sum += st.v(k);
      lr = -(lat.m[i] * (prop * prop - cur * cur) - 2.0 * st.rho_v * (prop - cur) * nb_sum) /
           (2.0 * st.sig2_v);
    } else {
      lr = -(prop * prop - cur * cur) / (2.0 * st.sig2_v);
    }
    for (int j : field.obs_by_region[i]) {
      const double ec = xa(j) + cur, ep = xa(j) + prop;
      const double lc = ec > 35.0 ? ec : std::log1p(std::exp(ec));
      const double lp = ep > 35.0 ? ep : std::log1p(std::exp(ep));
      lr += treat01(j) * (ep - ec) - lp + lc;
    }
    if (coupling && coupling->resid) {
      const double psi = coupling->psi, tau2 = coupling->tau2;
      for (int j : (*coupling->obs_by_region)[i]) {
        const double r = (*coupling->resid)(j);
        lr += (-(r - psi * prop) * (r - psi * prop) + (r - psi * cur) * (r - psi * cur)) /
              (2.0 * tau2);
      }
    }
    if (std::log(rng.uniform() + 1e-300) < lr) {
      st.v(i) = prop;
      ++acc_v;
    }
  }
  out.v = static_cast<double>(acc_v) / N;
  v_step.observe(out.v);

  // recenter v into the intercept
  out.recenter_shift = st.v.mean();
  st.v.array() -= out.recenter_shift;
  st.alpha(0) += out.recenter_shift;

  // coefficients
  Eigen::VectorXd offset(treat01.size());
  for (int r = 0; r < N; ++r)
    for (int j : field.obs_by_region[r]) offset(j) = st.v(r);
  const int acc_a = mh_logistic_block(st.alpha, design, treat01, offset, alpha_step.step(), prior,
                                      rng);
  out.alpha = static_cast<double>(acc_a) / static_cast<double>(st.alpha.size());
  alpha_step.observe(out.alpha);

  // field scale and dependence
  const double quad = car ? car_quadform(*field.lattice, st.v, st.rho_v) : st.v.squaredNorm();
  st.sig2_v = rng.inverse_gamma(prior.var_shape + 0.5 * N, prior.var_rate + 0.5 * quad);
  if (car) {
    const bool ok =
        mh_car_rho(st.rho_v, st.v, *field.lattice, std::sqrt(st.sig2_v), rho_step.step(), rng);
    out.rho_v = ok ? 1.0 : 0.0;
    rho_step.observe(out.rho_v);
  }
  return out;
}

}  // namespace spcausal
