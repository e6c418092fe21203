#include "spcausal/simstudy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "spcausal/gmrf.hpp"
#include "spcausal/propensity.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace spcausal {

const std::vector<Scenario>& Scenario::registry() {
  static const std::vector<Scenario> reg = {
      {"a", 0.99, 0.99, Scenario::G::Linear, 0.5, 0.5},
      {"b", 0.90, 0.99, Scenario::G::Linear, 0.5, 0.5},
      {"c", 0.99, 0.90, Scenario::G::Linear, 0.5, 0.5},
      {"d", 0.90, 0.90, Scenario::G::Linear, 0.5, 0.5},
      {"nonlinear", 0.99, 0.99, Scenario::G::Nonlinear, 0.5, 0.5},
      {"nonstationary", 0.99, 0.99, Scenario::G::Nonstationary, 0.5, 0.5},
  };
  return reg;
}

Scenario Scenario::by_name(const std::string& name) {
  for (const Scenario& s : registry())
    if (s.name == name) return s;
  throw std::invalid_argument("unknown scenario '" + name +
                              "' (a, b, c, d, nonlinear, nonstationary)");
}

ArealDataset generate_dataset(const Scenario& scenario, int nrows, int ncols, std::uint64_t seed,
                              TruthRecord* truth) {
  const Lattice lat = build_rook_grid(nrows, ncols);
  const int N = lat.n_regions;
  Rng root(seed);
  Rng rng_u = root.sub("field_u");
  Rng rng_v = root.sub("field_v");
  Rng rng_obs = root.sub("obs");

  const Eigen::VectorXd u = sample_gmrf(car_precision(lat, {scenario.rho_u, 2.0}), rng_u);
  const Eigen::VectorXd v = sample_gmrf(car_precision(lat, {scenario.rho_v, 2.0}), rng_v);

  Eigen::VectorXd prob(N);
  for (int i = 0; i < N; ++i) {
    double g = 0.0;
    const double pu = scenario.phi * u(i);
    switch (scenario.g) {
      case Scenario::G::Linear:
        g = v(i) + pu;
        break;
      case Scenario::G::Nonlinear:
        // centering constant 0.63 keeps the truncated term mean-comparable
        g = v(i) + scenario.phi * (u(i) * (u(i) > 0.0 ? 1.0 : 0.0) - 0.63);
        break;
      case Scenario::G::Nonstationary: {
        const double c = ncols > 1 ? static_cast<double>(i % ncols) / (ncols - 1) : 0.0;
        g = v(i) + pu * c;
        break;
      }
    }
    prob(i) = expit(g);
  }

  ArealDataset d;
  d.region.resize(N);
  d.rep.assign(N, 0);
  d.y.resize(N);
  d.a.resize(N);
  d.x = Eigen::MatrixXd::Ones(N, 1);
  d.n_regions = N;
  for (int i = 0; i < N; ++i) {
    d.region[i] = i;
    d.a(i) = rng_obs.bernoulli(prob(i)) ? 1.0 : 0.0;
    d.y(i) = scenario.beta * d.a(i) + u(i) + rng_obs.normal();
  }
  if (truth) {
    truth->beta = scenario.beta;
    truth->u = u;
    truth->v = v;
    truth->prob = prob;
  }
  return d;
}

void write_truth_csv(const TruthRecord& truth, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write truth file: " + path);
  out << "region,u,v,prob,beta\n";
  for (int i = 0; i < truth.u.size(); ++i)
    out << i << ',' << format_double(truth.u(i)) << ',' << format_double(truth.v(i)) << ','
        << format_double(truth.prob(i)) << ',' << format_double(truth.beta) << '\n';
}

std::uint64_t dataset_seed(std::uint64_t master_seed, int dataset_index) {
  return hash_index(master_seed, 0x5d5u + static_cast<std::uint64_t>(dataset_index));
}

std::string StudyResult::summary_csv() const {
  std::ostringstream out;
  out << "scenario,estimator,n_datasets,mean_bias,coverage95,mean_ci_width,n_failed\n";
  for (const auto& [name, agg] : by_estimator)
    out << scenario << ',' << name << ',' << agg.n_ok << ',' << format_double(agg.mean_bias)
        << ',' << format_double(agg.coverage95) << ',' << format_double(agg.mean_ci_width) << ','
        << agg.n_failed << '\n';
  return out.str();
}

std::string StudyResult::estimates_csv() const {
  std::ostringstream out;
  out << "dataset_id,estimator,point,lo95,hi95,flags\n";
  for (const auto& r : records) {
    out << r.dataset << ',' << r.estimator << ',';
    if (r.failed) {
      out << ",,," << "failed:" << r.error << '\n';
    } else {
      out << format_double(r.point) << ',' << format_double(r.lo95) << ','
          << format_double(r.hi95) << ',' << r.flags << '\n';
    }
  }
  return out.str();
}

namespace {

const std::vector<std::string>& study_bank() {
  static const std::vector<std::string> bank = {"NS", "NS+P", "S", "S+P", "S+AIPW", "Joint", "Cut"};
  return bank;
}

bool needs_scores(const std::string& tag) {
  return tag == "NS+P" || tag == "S+P" || tag == "S+AIPW" || tag == "S+Strata";
}

}  // namespace

StudyResult run_study(const RunConfig& config) {
  config.validate();
  const Scenario scenario = Scenario::by_name(config.scenario);
  std::vector<std::string> estimators =
      config.estimators.empty() ? study_bank() : config.estimators;
  for (const auto& e : estimators)
    if (std::find(study_bank().begin(), study_bank().end(), e) == study_bank().end())
      throw std::invalid_argument("run_study estimator '" + e +
                                  "' is outside the benchmark bank (NS, NS+P, S, S+P, S+AIPW, "
                                  "Joint, Cut)");

  const int nd = config.n_datasets;
  const int ne = static_cast<int>(estimators.size());
  StudyResult result;
  result.scenario = scenario.name;
  result.true_beta = scenario.beta;
  result.records.resize(static_cast<std::size_t>(nd) * ne);

  const bool any_scores =
      std::any_of(estimators.begin(), estimators.end(), [](const auto& t) { return needs_scores(t); });

  Scenario sc = scenario;
  sc.beta = config.beta;
  sc.phi = config.phi;

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (config.parallel)
#endif
  for (int d = 0; d < nd; ++d) {
    const std::uint64_t seed_d = dataset_seed(config.seed, d);
    const Lattice lattice = build_rook_grid(config.grid_rows, config.grid_cols);
    const ArealDataset data = generate_dataset(sc, config.grid_rows, config.grid_cols, seed_d);

    ChainSettings cs;
    cs.iterations = config.iterations;
    cs.burnin = config.burnin;
    cs.thin = config.thin;
    cs.seed = seed_d;

    // the propensity stage is shared by every estimator that needs scores
    Eigen::VectorXd scores;
    std::string score_error;
    if (any_scores) {
      try {
        scores = fit_binary_propensity(data, lattice, cs).scores;
      } catch (const std::exception& ex) {
        score_error = ex.what();
      }
    }

    for (int e = 0; e < ne; ++e) {
      EstimateRecord rec;
      rec.dataset = d;
      rec.estimator = estimators[e];
      try {
        if (needs_scores(estimators[e]) && !score_error.empty())
          throw std::runtime_error("propensity stage failed: " + score_error);
        FitResult fr;
        const std::string& tag = estimators[e];
        if (tag == "NS") {
          fr = fit_ns(data, cs);
        } else if (tag == "S") {
          fr = fit_s(data, lattice, cs);
        } else if (tag == "NS+P") {
          fr = fit_with_propensity(data, nullptr, scores, false, cs);
        } else if (tag == "S+P") {
          fr = fit_with_propensity(data, &lattice, scores, true, cs);
        } else if (tag == "S+AIPW") {
          SpatialFitArtifacts art;
          fit_s(data, lattice, cs, &art);
          fr = aipw_adjust(art, data, scores);
        } else if (tag == "Joint") {
          fr = fit_joint(data, lattice, JointPrior::Car, cs);
        } else {  // Cut
          fr = fit_cut(data, lattice, cs);
        }
        rec.point = fr.estimate.point;
        rec.lo95 = fr.estimate.lo95;
        rec.hi95 = fr.estimate.hi95;
        rec.covered = rec.lo95 <= sc.beta && sc.beta <= rec.hi95;
        std::ostringstream fl;
        for (std::size_t f = 0; f < fr.estimate.flags.size(); ++f)
          fl << (f ? ";" : "") << fr.estimate.flags[f];
        rec.flags = fl.str();
      } catch (const std::exception& ex) {
        rec.failed = true;
        rec.error = ex.what();
      }
      result.records[static_cast<std::size_t>(d) * ne + e] = std::move(rec);
    }
  }

  // aggregate in fixed order
  for (int e = 0; e < ne; ++e) {
    EstimatorAggregate agg;
    double bias = 0.0, width = 0.0;
    int covered = 0;
    for (int d = 0; d < nd; ++d) {
      const EstimateRecord& r = result.records[static_cast<std::size_t>(d) * ne + e];
      if (r.failed) {
        ++agg.n_failed;
        continue;
      }
      ++agg.n_ok;
      bias += r.point - sc.beta;
      width += r.hi95 - r.lo95;
      covered += r.covered ? 1 : 0;
    }
    if (agg.n_ok > 0) {
      agg.mean_bias = bias / agg.n_ok;
      agg.mean_ci_width = width / agg.n_ok;
      agg.coverage95 = static_cast<double>(covered) / agg.n_ok;
    }
    result.by_estimator[estimators[e]] = agg;
  }
  return result;
}

}  // namespace spcausal
