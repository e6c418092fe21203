#include "spcausal/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <stdexcept>

#include "spcausal/mcmc.hpp"

namespace spcausal {

Eigen::VectorXd SplineBasis::eval(double x) const {
  const int p = degree;
  const int nb = n_basis();
  const double lo = knots.front(), hi = knots.back();
  x = std::clamp(x, lo, hi);
  // find the knot span [t_mu, t_{mu+1}) containing x; right edge snaps
  // to the last nonempty span so the basis sums to one at x = hi
  int mu = p;
  const int last = static_cast<int>(knots.size()) - p - 2;
  while (mu < last && x >= knots[mu + 1]) ++mu;
  // de Boor triangular scheme for the p+1 nonzero basis functions on the span
  std::vector<double> b(p + 1, 0.0);
  b[0] = 1.0;
  for (int k = 1; k <= p; ++k) {
    double saved = 0.0;
    for (int r = 0; r < k; ++r) {
      const double tleft = knots[mu - k + 1 + r];
      const double tright = knots[mu + 1 + r];
      const double denom = tright - tleft;
      const double term = denom > 0.0 ? b[r] / denom : 0.0;
      b[r] = saved + (tright - x) * term;
      saved = (x - tleft) * term;
    }
    b[k] = saved;
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(nb);
  for (int r = 0; r <= p; ++r) {
    const int idx = mu - p + r;
    if (idx >= 0 && idx < nb) out(idx) = b[r];
  }
  return out;
}

SplineBasis make_spline_basis(const Eigen::VectorXd& scores) {
  std::set<double> distinct(scores.data(), scores.data() + scores.size());
  if (distinct.size() < 6)
    throw std::invalid_argument("spline basis needs at least 6 distinct score values (got " +
                                std::to_string(distinct.size()) + "); knots would be degenerate");
  return make_basis_df(scores, 5);
}

SplineBasis make_basis_df(const Eigen::VectorXd& values, int df) {
  if (df < 2) throw std::invalid_argument("basis needs df >= 2");
  std::vector<double> s(values.data(), values.data() + values.size());
  const double lo = *std::min_element(s.begin(), s.end());
  const double hi = *std::max_element(s.begin(), s.end());
  if (!(lo < hi)) throw std::invalid_argument("basis needs at least two distinct values");
  SplineBasis b;
  b.degree = std::min(3, df - 1);
  const int interior = df - b.degree - 1;
  b.knots.assign(b.degree + 1, lo);
  for (int k = 1; k <= interior; ++k) {
    const double q = quantile(s, static_cast<double>(k) / (interior + 1));
    double knot = q;
    if (!(knot > b.knots.back() && knot < hi))
      knot = lo + (hi - lo) * static_cast<double>(k) / (interior + 1);  // tied quantile fallback
    b.knots.push_back(knot);
  }
  for (int k = 0; k <= b.degree; ++k) b.knots.push_back(hi);
  return b;
}

Eigen::MatrixXd spline_transform(const Eigen::VectorXd& scores, const SplineBasis& basis) {
  Eigen::MatrixXd out(scores.size(), basis.n_basis());
  int clamped = 0;
  for (int i = 0; i < scores.size(); ++i) {
    if (scores(i) < basis.lo() || scores(i) > basis.hi()) ++clamped;
    out.row(i) = basis.eval(scores(i)).transpose();
  }
  if (clamped > 0)
    std::cerr << "spline_transform: " << clamped
              << " score(s) outside the boundary knots were clamped\n";
  return out;
}

int StrataSpec::stratum_of(double score) const {
  const int L = n_strata();
  for (int l = 0; l < L; ++l)
    if (score < cuts[l + 1] || l == L - 1) return l;
  return L - 1;
}

std::vector<int> StrataSpec::labels(const Eigen::VectorXd& scores) const {
  std::vector<int> lab(scores.size());
  for (int i = 0; i < scores.size(); ++i) lab[i] = stratum_of(scores(i));
  return lab;
}

StrataSpec StrataSpec::single() { return StrataSpec{{0.0, 1.0}}; }

StrataSpec build_strata(const Eigen::VectorXd& scores, int L) {
  if (L < 2) throw std::invalid_argument("build_strata: L must be >= 2");
  std::set<double> distinct(scores.data(), scores.data() + scores.size());
  if (static_cast<int>(distinct.size()) < L)
    throw std::invalid_argument("build_strata: need at least L distinct scores");
  std::vector<double> s(scores.data(), scores.data() + scores.size());
  StrataSpec spec;
  spec.cuts.resize(L + 1);
  spec.cuts[0] = 0.0;
  spec.cuts[L] = 1.0;
  for (int l = 1; l < L; ++l) spec.cuts[l] = quantile(s, static_cast<double>(l) / L);
  for (int l = 0; l < L; ++l)
    if (!(spec.cuts[l] < spec.cuts[l + 1]))
      throw std::invalid_argument("build_strata: tied scores make stratum " + std::to_string(l) +
                                  " empty (cut " + format_double(spec.cuts[l]) + ")");
  // every observation lands somewhere by construction; check none is empty
  std::vector<int> count(L, 0);
  for (int lab : spec.labels(scores)) ++count[lab];
  for (int l = 0; l < L; ++l)
    if (count[l] == 0)
      throw std::invalid_argument("build_strata: stratum " + std::to_string(l) + " is empty");
  return spec;
}

PropensityFit fit_binary_propensity(const ArealDataset& data, const Lattice& lattice,
                                    const ChainSettings& settings) {
  settings.validate();
  if (!data.binary_treatment())
    throw std::invalid_argument("fit_binary_propensity requires a binary treatment");
  const double asum = data.a.sum();
  if (asum == 0.0 || asum == static_cast<double>(data.n()))
    throw std::invalid_argument(
        "all-treated or all-control data: positivity violated, propensity model cannot be fit");
  data.validate(&lattice);

  const PriorSpec prior;
  FieldLayout field = FieldLayout::car(lattice, data.region);
  LogisticState st;
  st.alpha = Eigen::VectorXd::Zero(data.x.cols());
  st.v = Eigen::VectorXd::Zero(lattice.n_regions);
  AdaptiveStep a_step(0.2), v_step(0.6), r_step(0.7);

  Rng rng(settings.seed);
  Rng chain_rng = rng.sub("treatment");

  Eigen::VectorXd score_sum = Eigen::VectorXd::Zero(data.n());
  Eigen::VectorXd alpha_sum = Eigen::VectorXd::Zero(data.x.cols());
  Eigen::VectorXd v_sum = Eigen::VectorXd::Zero(lattice.n_regions);
  std::map<std::string, std::vector<double>> draws;
  double acc_a = 0.0, acc_v = 0.0, acc_r = 0.0;
  int kept = 0;
  for (int it = 0; it < settings.iterations; ++it) {
    if (it == settings.burnin) {
      a_step.freeze();
      v_step.freeze();
      r_step.freeze();
    }
    const LogisticAccept acc = logistic_gibbs_sweep(st, data.x, data.a, field, a_step, v_step,
                                                    r_step, prior, chain_rng);
    if (it < settings.burnin || (it - settings.burnin) % settings.thin != 0) continue;
    acc_a += acc.alpha;
    acc_v += acc.v;
    acc_r += acc.rho_v;
    for (int j = 0; j < data.n(); ++j)
      score_sum(j) += expit(data.x.row(j).dot(st.alpha) + st.v(data.region[j]));
    alpha_sum += st.alpha;
    v_sum += st.v;
    for (int j = 0; j < st.alpha.size(); ++j)
      draws["alpha" + std::to_string(j)].push_back(st.alpha(j));
    draws["sigma2_v"].push_back(st.sig2_v);
    draws["rho_v"].push_back(st.rho_v);
    ++kept;
  }

  PropensityFit fit;
  fit.binary = true;
  fit.scores = score_sum / kept;
  fit.alpha_mean = alpha_sum / kept;
  fit.v_mean = v_sum / kept;
  fit.summary = summarize(draws,
                          {{"alpha", acc_a / kept}, {"v", acc_v / kept}, {"rho_v", acc_r / kept}},
                          settings.iterations, settings.burnin, settings.thin);
  if (!settings.trace_path.empty()) write_trace_jsonl(settings.trace_path, draws);
  return fit;
}

PropensityFit fit_generalized_propensity(const ArealDataset& data, const Lattice& lattice,
                                         const ChainSettings& settings) {
  settings.validate();
  data.validate(&lattice);
  const double mean_a = data.a.mean();
  if ((data.a.array() - mean_a).abs().maxCoeff() < 1e-12)
    throw std::invalid_argument("fit_generalized_propensity: treatment has zero variance");

  GaussianModel model;
  model.design = data.x;
  model.coef_names.resize(data.x.cols());
  for (int j = 0; j < data.x.cols(); ++j) model.coef_names[j] = "alpha" + std::to_string(j);
  model.response = data.a;
  model.region = data.region;
  model.lattice = &lattice;
  model.field = FieldKind::Car;
  Rng rng(settings.seed);
  const GaussianFit gf = fit_gaussian_spatial(model, settings, rng.sub("treatment"));

  Eigen::VectorXd alpha_mean(data.x.cols());
  for (int j = 0; j < data.x.cols(); ++j) alpha_mean(j) = gf.summary.at(model.coef_names[j]).mean;

  PropensityFit fit;
  fit.binary = false;
  fit.alpha_mean = alpha_mean;
  fit.v_mean = gf.field_mean;
  fit.scores.resize(data.n());
  for (int j = 0; j < data.n(); ++j) {
    const double r = data.a(j) - data.x.row(j).dot(alpha_mean) - gf.field_mean(data.region[j]);
    fit.scores(j) = r * r;
  }
  fit.summary = gf.summary;
  return fit;
}

void write_scores_csv(const ArealDataset& data, const Eigen::VectorXd& scores,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write scores file: " + path);
  out << "region,y,a";
  for (int j = 1; j < data.x.cols(); ++j) out << ",x" << j;
  out << ",score\n";
  for (int i = 0; i < data.n(); ++i) {
    out << data.region[i] << ',' << format_double(data.y(i)) << ',' << format_double(data.a(i));
    for (int j = 1; j < data.x.cols(); ++j) out << ',' << format_double(data.x(i, j));
    out << ',' << format_double(scores(i)) << '\n';
  }
}

}  // namespace spcausal
