#include "spcausal/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace spcausal {

bool CausalEstimate::has_flag(const std::string& f) const {
  return std::find(flags.begin(), flags.end(), f) != flags.end();
}

std::string CausalEstimate::csv_row(const std::string& dataset_id) const {
  std::ostringstream out;
  out << dataset_id << ',' << estimator << ',' << format_double(point) << ','
      << format_double(lo95) << ',' << format_double(hi95) << ',';
  for (std::size_t i = 0; i < flags.size(); ++i) out << (i ? ";" : "") << flags[i];
  return out.str();
}

const std::vector<std::string>& ModelSpec::known_tags() {
  static const std::vector<std::string> tags = {"NS",  "NS+P", "S",       "S+P",      "S+Strata",
                                                "S+AIPW", "Joint", "Cut",     "SEM",      "SAR",
                                                "Schnell", "IV",   "MatchDiff", "CondLogit"};
  return tags;
}

void ModelSpec::validate() const {
  const auto& tags = known_tags();
  if (std::find(tags.begin(), tags.end(), tag) == tags.end())
    throw std::invalid_argument("unknown estimator tag '" + tag + "'");
  if (tag == "S+Strata" && strata_count < 1)
    throw std::invalid_argument("strata count must be >= 1");
  if (tag == "IV" && iv_column < 1)
    throw std::invalid_argument("IV instrument column must name a covariate (x1..xp)");
}

namespace {

// canonical outcome design [level block | A | covariates]; beta is the column
// right after the level block
struct Design {
  Eigen::MatrixXd X;
  std::vector<std::string> names;
  std::vector<int> level_cols;
  int beta_col = 1;
};

Design outcome_design(const ArealDataset& d) {
  Design ds;
  const int p_extra = static_cast<int>(d.x.cols()) - 1;
  ds.X.resize(d.n(), 2 + p_extra);
  ds.X.col(0).setOnes();
  ds.X.col(1) = d.a;
  ds.names = {"gamma0", "beta"};
  for (int j = 1; j < d.x.cols(); ++j) {
    ds.X.col(1 + j) = d.x.col(j);
    ds.names.push_back("gamma" + std::to_string(j));
  }
  ds.level_cols = {0};
  ds.beta_col = 1;
  return ds;
}

void require_treatment_contrast(const ArealDataset& d) {
  const double mean_a = d.a.mean();
  if ((d.a.array() - mean_a).abs().maxCoeff() < 1e-12)
    throw std::invalid_argument("constant treatment: no contrast to estimate");
}

FitResult wrap_gaussian(const std::string& tag, const GaussianFit& gf, const ArealDataset& data,
                        const std::string& beta_name = "beta") {
  FitResult out;
  const ParamSummary& b = gf.summary.at(beta_name);
  out.estimate.estimator = tag;
  out.estimate.point = b.mean;
  out.estimate.lo95 = b.lo95;
  out.estimate.hi95 = b.hi95;
  out.estimate.diagnostics["n"] = data.n();
  for (const auto& [k, v] : gf.summary.acceptance)
    out.estimate.diagnostics["accept_" + k] = v;
  out.posterior = gf.summary;
  return out;
}

}  // namespace

FitResult fit_ns(const ArealDataset& data, const ChainSettings& settings) {
  data.validate();
  require_treatment_contrast(data);
  Design ds = outcome_design(data);
  GaussianModel m;
  m.design = std::move(ds.X);
  m.coef_names = std::move(ds.names);
  m.response = data.y;
  m.field = FieldKind::None;
  Rng rng(settings.seed);
  return wrap_gaussian("NS", fit_gaussian_spatial(m, settings, rng.sub("outcome")), data);
}

FitResult fit_s(const ArealDataset& data, const Lattice& lattice, const ChainSettings& settings,
                SpatialFitArtifacts* artifacts) {
  data.validate(&lattice);
  require_treatment_contrast(data);
  Design ds = outcome_design(data);
  GaussianModel m;
  m.design = std::move(ds.X);
  m.coef_names = std::move(ds.names);
  m.response = data.y;
  m.region = data.region;
  m.lattice = &lattice;
  m.field = FieldKind::Car;
  m.level_cols = ds.level_cols;
  m.store_field_draws = artifacts != nullptr;
  Rng rng(settings.seed);
  GaussianFit gf = fit_gaussian_spatial(m, settings, rng.sub("outcome"));
  if (artifacts) {
    artifacts->coef_draws = gf.coef_draws;
    artifacts->field_draws = gf.field_draws;
    artifacts->region = data.region;
  }
  return wrap_gaussian("S", gf, data);
}

FitResult fit_with_propensity(const ArealDataset& data, const Lattice* lattice,
                              const Eigen::VectorXd& scores, bool spatial,
                              const ChainSettings& settings) {
  data.validate(spatial ? lattice : nullptr);
  require_treatment_contrast(data);
  if (scores.size() != data.n())
    throw std::invalid_argument("scores must align with observations");
  const SplineBasis basis = make_spline_basis(scores);
  const Eigen::MatrixXd f = spline_transform(scores, basis);

  Design ds = outcome_design(data);
  const int p0 = static_cast<int>(ds.X.cols());
  // drop the first basis column: the remaining four plus the intercept span
  // the same five-dimensional spline space
  ds.X.conservativeResize(Eigen::NoChange, p0 + f.cols() - 1);
  for (int j = 1; j < f.cols(); ++j) {
    ds.X.col(p0 + j - 1) = f.col(j);
    ds.names.push_back("spline" + std::to_string(j));
  }

  GaussianModel m;
  m.design = std::move(ds.X);
  m.coef_names = std::move(ds.names);
  m.response = data.y;
  if (spatial) {
    if (!lattice) throw std::invalid_argument("S+P requires a lattice");
    m.region = data.region;
    m.lattice = lattice;
    m.field = FieldKind::Car;
  }
  m.level_cols = ds.level_cols;
  Rng rng(settings.seed);
  return wrap_gaussian(spatial ? "S+P" : "NS+P",
                       fit_gaussian_spatial(m, settings, rng.sub("outcome")), data);
}

FitResult fit_strata(const ArealDataset& data, const Lattice& lattice, const StrataSpec& strata,
                     const Eigen::VectorXd& scores, const ChainSettings& settings) {
  data.validate(&lattice);
  require_treatment_contrast(data);
  const int L = strata.n_strata();
  if (L < 1) throw std::invalid_argument("strata spec is empty");
  if (scores.size() != data.n())
    throw std::invalid_argument("scores must align with observations");
  const std::vector<int> labels = strata.labels(scores);
  std::vector<int> count(L, 0);
  for (int lab : labels) ++count[lab];
  for (int l = 0; l < L; ++l)
    if (count[l] == 0)
      throw std::invalid_argument("stratum " + std::to_string(l) + " is empty");

  // stratum indicators take the place of the intercept
  const int p_extra = static_cast<int>(data.x.cols()) - 1;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(data.n(), L + 1 + p_extra);
  std::vector<std::string> names;
  std::vector<int> level_cols;
  for (int l = 0; l < L; ++l) {
    names.push_back("S" + std::to_string(l));
    level_cols.push_back(l);
  }
  for (int i = 0; i < data.n(); ++i) X(i, labels[i]) = 1.0;
  X.col(L) = data.a;
  names.push_back("beta");
  for (int j = 1; j < data.x.cols(); ++j) {
    X.col(L + j) = data.x.col(j);
    names.push_back("gamma" + std::to_string(j));
  }

  GaussianModel m;
  m.design = std::move(X);
  m.coef_names = std::move(names);
  m.response = data.y;
  m.region = data.region;
  m.lattice = &lattice;
  m.field = FieldKind::Car;
  m.level_cols = level_cols;
  Rng rng(settings.seed);
  FitResult out =
      wrap_gaussian("S+Strata", fit_gaussian_spatial(m, settings, rng.sub("outcome")), data);
  out.estimate.diagnostics["strata"] = L;
  return out;
}

FitResult fit_joint(const ArealDataset& data, const Lattice& lattice, JointPrior prior_family,
                    const ChainSettings& settings, bool fix_psi_zero) {
  settings.validate();
  data.validate(&lattice);
  require_treatment_contrast(data);
  if (!data.binary_treatment())
    throw std::invalid_argument("the joint model requires a binary treatment");
  if (prior_family == JointPrior::Independent) {
    int max_rep = 0;
    std::vector<int> cnt(lattice.n_regions, 0);
    for (int r : data.region) max_rep = std::max(max_rep, ++cnt[r]);
    if (max_rep < 2)
      throw std::invalid_argument(
          "SEM variant (independent random effects) requires replication within region");
  }

  const PriorSpec prior;
  Design ds = outcome_design(data);
  const int p_main = static_cast<int>(ds.X.cols());
  const bool with_psi = !fix_psi_zero;
  Eigen::MatrixXd design_out(data.n(), p_main + (with_psi ? 1 : 0));
  design_out.leftCols(p_main) = ds.X;
  std::vector<std::string> names = ds.names;
  if (with_psi) names.push_back("psi");
  check_full_rank(ds.X, ds.names);

  const FieldKind fk =
      prior_family == JointPrior::Car ? FieldKind::Car : FieldKind::Iid;
  FieldLayout field_u = fk == FieldKind::Car ? FieldLayout::car(lattice, data.region)
                                             : FieldLayout::iid(lattice.n_regions, data.region);
  FieldLayout field_v = field_u;

  GaussianState gst;
  gst.coef = Eigen::VectorXd::Zero(design_out.cols());
  gst.u = Eigen::VectorXd::Zero(lattice.n_regions);
  LogisticState lst;
  lst.alpha = Eigen::VectorXd::Zero(data.x.cols());
  lst.v = Eigen::VectorXd::Zero(lattice.n_regions);

  AdaptiveStep rho_u_step(0.7), a_step(0.2), v_step(0.6), rho_v_step(0.7);
  Rng rng(settings.seed);
  Rng rng_o = rng.sub("outcome");
  Rng rng_t = rng.sub("treatment");

  std::map<std::string, std::vector<double>> draws;
  std::map<std::string, double> accs;
  int kept = 0;
  for (int it = 0; it < settings.iterations; ++it) {
    if (it == settings.burnin) {
      rho_u_step.freeze();
      a_step.freeze();
      v_step.freeze();
      rho_v_step.freeze();
    }
    if (with_psi)
      for (int j = 0; j < data.n(); ++j) design_out(j, p_main) = lst.v(data.region[j]);
    const SweepAccept oacc = gaussian_gibbs_sweep(gst, design_out, data.y, field_u, ds.level_cols,
                                                  rho_u_step, prior, rng_o);
    const double psi = with_psi ? gst.coef(p_main) : 0.0;

    // treatment side; the outcome couples through psi * v
    Eigen::VectorXd resid = data.y - design_out.leftCols(p_main) * gst.coef.head(p_main);
    for (int j = 0; j < data.n(); ++j) resid(j) -= gst.u(data.region[j]);
    GaussianCoupling coupling;
    coupling.resid = &resid;
    coupling.obs_by_region = &field_v.obs_by_region;
    coupling.psi = psi;
    coupling.tau2 = gst.tau2;
    const LogisticAccept tacc = logistic_gibbs_sweep(lst, data.x, data.a, field_v, a_step, v_step,
                                                     rho_v_step, prior, rng_t, &coupling);
    // recentering v shifts the outcome mean by psi * shift; compensate
    gst.coef(0) += psi * tacc.recenter_shift;

    if (it < settings.burnin || (it - settings.burnin) % settings.thin != 0) continue;
    for (int j = 0; j < p_main; ++j) draws[names[j]].push_back(gst.coef(j));
    if (with_psi) draws["psi"].push_back(psi);
    draws["tau2"].push_back(gst.tau2);
    draws["sigma2_u"].push_back(gst.sig2_u);
    draws["sigma2_v"].push_back(lst.sig2_v);
    if (fk == FieldKind::Car) {
      draws["rho_u"].push_back(gst.rho_u);
      draws["rho_v"].push_back(lst.rho_v);
    }
    for (int j = 0; j < lst.alpha.size(); ++j)
      draws["alpha" + std::to_string(j)].push_back(lst.alpha(j));
    accs["rho_u"] += oacc.rho_u;
    accs["alpha"] += tacc.alpha;
    accs["v"] += tacc.v;
    accs["rho_v"] += tacc.rho_v;
    ++kept;
  }
  for (auto& [k, v] : accs) v /= kept;

  FitResult out;
  out.posterior =
      summarize(draws, accs, settings.iterations, settings.burnin, settings.thin);
  const ParamSummary& b = out.posterior.at("beta");
  out.estimate.estimator = prior_family == JointPrior::Car ? "Joint" : "SEM";
  out.estimate.point = b.mean;
  out.estimate.lo95 = b.lo95;
  out.estimate.hi95 = b.hi95;
  out.estimate.diagnostics["n"] = data.n();
  for (const auto& [k, v] : accs) out.estimate.diagnostics["accept_" + k] = v;
  if (!settings.trace_path.empty()) write_trace_jsonl(settings.trace_path, draws);
  return out;
}

FitResult fit_cut(const ArealDataset& data, const Lattice& lattice,
                  const ChainSettings& settings) {
  settings.validate();
  data.validate(&lattice);
  require_treatment_contrast(data);
  if (!data.binary_treatment())
    throw std::invalid_argument("the cut model requires a binary treatment");

  const PriorSpec prior;
  // stage 1: treatment model alone, storing the v posterior
  FieldLayout field_v = FieldLayout::car(lattice, data.region);
  LogisticState lst;
  lst.alpha = Eigen::VectorXd::Zero(data.x.cols());
  lst.v = Eigen::VectorXd::Zero(lattice.n_regions);
  AdaptiveStep a_step(0.2), v_step(0.6), rho_v_step(0.7);
  Rng rng(settings.seed);
  Rng rng_t = rng.sub("treatment");
  const int retained = settings.retained();
  Eigen::MatrixXd v_store(retained, lattice.n_regions);
  int kept1 = 0;
  for (int it = 0; it < settings.iterations; ++it) {
    if (it == settings.burnin) {
      a_step.freeze();
      v_step.freeze();
      rho_v_step.freeze();
    }
    logistic_gibbs_sweep(lst, data.x, data.a, field_v, a_step, v_step, rho_v_step, prior, rng_t);
    if (it < settings.burnin || (it - settings.burnin) % settings.thin != 0) continue;
    v_store.row(kept1++) = lst.v.transpose();
  }

  // stage 2: outcome chain; v is drawn from the stored stage-1 posterior each
  // iteration and never sees the outcome likelihood
  Design ds = outcome_design(data);
  check_full_rank(ds.X, ds.names);
  const int p_main = static_cast<int>(ds.X.cols());
  Eigen::MatrixXd design_out(data.n(), p_main + 1);
  design_out.leftCols(p_main) = ds.X;
  std::vector<std::string> names = ds.names;
  names.push_back("psi");

  FieldLayout field_u = FieldLayout::car(lattice, data.region);
  GaussianState gst;
  gst.coef = Eigen::VectorXd::Zero(p_main + 1);
  gst.u = Eigen::VectorXd::Zero(lattice.n_regions);
  AdaptiveStep rho_u_step(0.7);
  Rng rng_o = rng.sub("outcome");
  Rng rng_cut = rng.sub("cut");

  std::map<std::string, std::vector<double>> draws;
  double acc_rho = 0.0;
  int kept = 0;
  for (int it = 0; it < settings.iterations; ++it) {
    if (it == settings.burnin) rho_u_step.freeze();
    const auto idx = rng_cut.below(static_cast<std::uint64_t>(kept1));
    for (int j = 0; j < data.n(); ++j)
      design_out(j, p_main) = v_store(static_cast<int>(idx), data.region[j]);
    const SweepAccept acc = gaussian_gibbs_sweep(gst, design_out, data.y, field_u, ds.level_cols,
                                                 rho_u_step, prior, rng_o);
    if (it < settings.burnin || (it - settings.burnin) % settings.thin != 0) continue;
    for (int j = 0; j < p_main; ++j) draws[names[j]].push_back(gst.coef(j));
    draws["psi"].push_back(gst.coef(p_main));
    draws["tau2"].push_back(gst.tau2);
    draws["sigma2_u"].push_back(gst.sig2_u);
    draws["rho_u"].push_back(gst.rho_u);
    acc_rho += acc.rho_u;
    ++kept;
  }

  FitResult out;
  out.posterior = summarize(draws, {{"rho_u", acc_rho / kept}}, settings.iterations,
                            settings.burnin, settings.thin);
  const ParamSummary& b = out.posterior.at("beta");
  out.estimate.estimator = "Cut";
  out.estimate.point = b.mean;
  out.estimate.lo95 = b.lo95;
  out.estimate.hi95 = b.hi95;
  out.estimate.diagnostics["n"] = data.n();
  out.estimate.diagnostics["accept_rho_u"] = acc_rho / kept;
  return out;
}

FitResult run_chain(const ModelSpec& model, const ArealDataset& data, const Lattice* lattice,
                    const RunConfig& config) {
  model.validate();
  config.validate();
  ChainSettings cs;
  cs.iterations = config.iterations;
  cs.burnin = config.burnin;
  cs.thin = config.thin;
  cs.seed = config.seed;

  const auto need_lattice = [&]() -> const Lattice& {
    if (!lattice) throw std::invalid_argument("estimator " + model.tag + " requires a lattice");
    return *lattice;
  };
  const auto scores = [&]() {
    if (data.binary_treatment()) return fit_binary_propensity(data, need_lattice(), cs).scores;
    return fit_generalized_propensity(data, need_lattice(), cs).scores;
  };

  if (model.tag == "NS") return fit_ns(data, cs);
  if (model.tag == "S") return fit_s(data, need_lattice(), cs);
  if (model.tag == "NS+P") {
    return fit_with_propensity(data, lattice, scores(), false, cs);
  }
  if (model.tag == "S+P") {
    return fit_with_propensity(data, &need_lattice(), scores(), true, cs);
  }
  if (model.tag == "S+Strata") {
    const Eigen::VectorXd e = scores();
    const StrataSpec strata =
        model.strata_count == 1 ? StrataSpec::single() : build_strata(e, model.strata_count);
    return fit_strata(data, need_lattice(), strata, e, cs);
  }
  if (model.tag == "S+AIPW") {
    const Eigen::VectorXd e = scores();
    SpatialFitArtifacts art;
    fit_s(data, need_lattice(), cs, &art);
    return aipw_adjust(art, data, e);
  }
  if (model.tag == "Joint") return fit_joint(data, need_lattice(), JointPrior::Car, cs);
  if (model.tag == "SEM") return fit_joint(data, need_lattice(), JointPrior::Independent, cs);
  if (model.tag == "Cut") return fit_cut(data, need_lattice(), cs);
  if (model.tag == "SAR") return fit_sar(data, need_lattice(), cs);
  if (model.tag == "Schnell") return fit_schnell(data, need_lattice(), cs);
  if (model.tag == "IV") return fit_iv(data, need_lattice(), model.iv_column, cs);
  if (model.tag == "MatchDiff") return match_difference(data, cs);
  if (model.tag == "CondLogit") {
    FitResult out;
    out.estimate = fit_cond_logit(make_same_region_pairs(data));
    return out;
  }
  throw std::invalid_argument("unknown estimator tag '" + model.tag + "'");
}

}  // namespace spcausal
