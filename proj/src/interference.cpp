#include "spcausal/interference.hpp"

#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace spcausal {

void Policy::validate() const {
  const auto ok = [](double q) { return q >= 0.0 && q <= 1.0; };
  if (kind == Kind::IidBernoulli && !ok(p))
    throw std::invalid_argument("policy: p must lie in [0,1]");
  if (kind == Kind::Transition && (!ok(p0) || !ok(p1)))
    throw std::invalid_argument("policy: p0, p1 must lie in [0,1]");
}

double Policy::prob_one(int current_a) const {
  if (kind == Kind::IidBernoulli) return p;
  return current_a ? p1 : p0;
}

Policy Policy::iid(double p) {
  Policy q;
  q.kind = Kind::IidBernoulli;
  q.p = p;
  q.validate();
  return q;
}

Policy Policy::transition(double p0, double p1) {
  Policy q;
  q.kind = Kind::Transition;
  q.p0 = p0;
  q.p1 = p1;
  q.validate();
  return q;
}

std::string Policy::label() const {
  if (kind == Kind::IidBernoulli) return "iid(" + format_double(p) + ")";
  return "transition(" + format_double(p0) + "," + format_double(p1) + ")";
}

void OutcomeModel::validate() const {
  if (n_units < 2) throw std::invalid_argument("outcome model needs at least 2 units");
  if (spill == SpillKind::GroupLeaveOneOut) {
    if (static_cast<int>(group.size()) != n_units)
      throw std::invalid_argument("group labels must cover every unit");
    std::vector<int> count;
    for (int g : group) {
      if (g < 0) throw std::invalid_argument("negative group label");
      if (g >= static_cast<int>(count.size())) count.resize(g + 1, 0);
      ++count[g];
    }
    for (std::size_t g = 0; g < count.size(); ++g)
      if (count[g] == 1)
        throw std::invalid_argument("group " + std::to_string(g) +
                                    " is a singleton; the leave-self-out proportion is undefined");
  } else {
    if (!lattice || lattice->n_regions != n_units)
      throw std::invalid_argument("neighbor-mean spillover needs a lattice over the units");
  }
}

double OutcomeModel::spillover(int unit, const TreatmentField& field) const {
  if (spill == SpillKind::GroupLeaveOneOut) {
    const int g = group[unit];
    int sum = 0, cnt = 0;
    for (int k = 0; k < n_units; ++k) {
      if (k == unit || group[k] != g) continue;
      sum += field[k];
      ++cnt;
    }
    return static_cast<double>(sum) / static_cast<double>(cnt);
  }
  const auto& nb = lattice->neighbors[unit];
  int sum = 0;
  for (int k : nb) sum += field[k];
  return static_cast<double>(sum) / static_cast<double>(nb.size());
}

double OutcomeModel::mean_outcome(int unit, int own_a, const TreatmentField& field) const {
  const double s = spillover(unit, field);
  return own_a * beta1 + s * beta2 + s * s * beta2_quad;
}

double estimand_de(const OutcomeModel& model, int unit, const TreatmentField& a_minus) {
  return model.mean_outcome(unit, 1, a_minus) - model.mean_outcome(unit, 0, a_minus);
}

double estimand_ie(const OutcomeModel& model, int unit, const TreatmentField& a_minus,
                   const TreatmentField& a_minus_prime) {
  return model.mean_outcome(unit, 0, a_minus) - model.mean_outcome(unit, 0, a_minus_prime);
}

double estimand_te(const OutcomeModel& model, int unit, const TreatmentField& a_minus,
                   const TreatmentField& a_minus_prime) {
  return model.mean_outcome(unit, 1, a_minus) - model.mean_outcome(unit, 0, a_minus_prime);
}

double estimand_oe(const OutcomeModel& model, int unit, const TreatmentField& a,
                   const TreatmentField& a_prime) {
  return model.mean_outcome(unit, a[unit], a) - model.mean_outcome(unit, a_prime[unit], a_prime);
}

std::string effect_name(EffectKind k) {
  switch (k) {
    case EffectKind::DE: return "DE";
    case EffectKind::IE: return "IE";
    case EffectKind::TE: return "TE";
    case EffectKind::OE: return "OE";
  }
  return "?";
}

namespace {

// exact policy-averaged expectation Ybar_unit(a, psi): the other units'
// assignments are enumerated with their product probabilities
double ybar_exact(const OutcomeModel& model, int unit, int own_a, const Policy& policy,
                  const TreatmentField& observed) {
  const int n = model.n_units;
  std::vector<int> others;
  for (int k = 0; k < n; ++k)
    if (k != unit) others.push_back(k);
  const int n_other = static_cast<int>(others.size());
  TreatmentField field(n, 0);
  field[unit] = own_a;
  double total = 0.0;
  const std::uint64_t count = 1ULL << n_other;
  for (std::uint64_t mask = 0; mask < count; ++mask) {
    double prob = 1.0;
    for (int b = 0; b < n_other; ++b) {
      const int k = others[b];
      const double p1 = policy.prob_one(observed[k]);
      const bool on = (mask >> b) & 1ULL;
      field[k] = on ? 1 : 0;
      prob *= on ? p1 : (1.0 - p1);
    }
    if (prob == 0.0) continue;
    total += prob * model.mean_outcome(unit, own_a, field);
  }
  return total;
}

// expectation with the unit's own assignment also drawn from the policy
double ytilde_exact(const OutcomeModel& model, int unit, const Policy& policy,
                    const TreatmentField& observed) {
  const double p1 = policy.prob_one(observed[unit]);
  return p1 * ybar_exact(model, unit, 1, policy, observed) +
         (1.0 - p1) * ybar_exact(model, unit, 0, policy, observed);
}

void draw_field(TreatmentField& out, const Policy& policy, const TreatmentField& observed,
                Rng& rng) {
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = rng.bernoulli(policy.prob_one(observed[k])) ? 1 : 0;
}

}  // namespace

PolicyAverage policy_average_enumerate(const OutcomeModel& model, const Policy& policy,
                                       EffectKind effect, const TreatmentField& observed,
                                       const Policy* reference) {
  model.validate();
  policy.validate();
  if (static_cast<int>(observed.size()) != model.n_units)
    throw std::invalid_argument("observed field must cover every unit");
  if (model.n_units > 20)
    throw std::invalid_argument("enumeration over 2^(n-1) fields is guarded at 20 units (got " +
                                std::to_string(model.n_units) + ")");
  const Policy all_control = Policy::iid(0.0);
  const Policy& ref = reference ? *reference : all_control;

  const int n = model.n_units;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    switch (effect) {
      case EffectKind::DE:
        acc += ybar_exact(model, i, 1, policy, observed) -
               ybar_exact(model, i, 0, policy, observed);
        break;
      case EffectKind::IE:
        acc += ybar_exact(model, i, 0, policy, observed) -
               ybar_exact(model, i, 0, ref, observed);
        break;
      case EffectKind::TE:
        acc += ybar_exact(model, i, 1, policy, observed) -
               ybar_exact(model, i, 0, ref, observed);
        break;
      case EffectKind::OE:
        acc += ytilde_exact(model, i, policy, observed) - ytilde_exact(model, i, ref, observed);
        break;
    }
  }
  PolicyAverage out;
  out.value = acc / n;
  out.mc_se = 0.0;
  out.method = "enumerate";
  return out;
}

PolicyAverage policy_average_mc(const OutcomeModel& model, const Policy& policy, EffectKind effect,
                                const TreatmentField& observed, int draws, std::uint64_t seed,
                                bool parallel, const Policy* reference) {
  model.validate();
  policy.validate();
  if (draws < 2) throw std::invalid_argument("policy_average_mc needs at least 2 draws");
  if (static_cast<int>(observed.size()) != model.n_units)
    throw std::invalid_argument("observed field must cover every unit");
  const Policy all_control = Policy::iid(0.0);
  const Policy& ref = reference ? *reference : all_control;
  const int n = model.n_units;

  constexpr int kBlock = 4096;
  const int n_blocks = (draws + kBlock - 1) / kBlock;
  std::vector<double> block_sum(n_blocks, 0.0), block_sumsq(n_blocks, 0.0);
  const Rng root(seed);

  // per-block substreams with an in-block serial loop: the reduction order is
  // fixed, so parallel and serial runs produce identical results
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) if (parallel)
#endif
  for (int b = 0; b < n_blocks; ++b) {
    Rng rng = root.sub(static_cast<std::uint64_t>(b));
    TreatmentField field(n, 0), field_ref(n, 0);
    const int lo = b * kBlock;
    const int hi = std::min(draws, lo + kBlock);
    double s = 0.0, s2 = 0.0;
    for (int t = lo; t < hi; ++t) {
      draw_field(field, policy, observed, rng);
      const bool needs_ref =
          effect == EffectKind::IE || effect == EffectKind::TE || effect == EffectKind::OE;
      if (needs_ref) draw_field(field_ref, ref, observed, rng);
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        switch (effect) {
          case EffectKind::DE:
            acc += estimand_de(model, i, field);
            break;
          case EffectKind::IE:
            acc += estimand_ie(model, i, field, field_ref);
            break;
          case EffectKind::TE:
            acc += estimand_te(model, i, field, field_ref);
            break;
          case EffectKind::OE:
            acc += estimand_oe(model, i, field, field_ref);
            break;
        }
      }
      const double d = acc / n;
      s += d;
      s2 += d * d;
    }
    block_sum[b] = s;
    block_sumsq[b] = s2;
  }

  double sum = 0.0, sumsq = 0.0;
  for (int b = 0; b < n_blocks; ++b) {
    sum += block_sum[b];
    sumsq += block_sumsq[b];
  }
  PolicyAverage out;
  out.value = sum / draws;
  const double var = std::max(0.0, (sumsq - sum * sum / draws) / (draws - 1));
  out.mc_se = std::sqrt(var / draws);
  out.method = "monte-carlo";
  return out;
}

namespace {

InterferenceFit interference_linear_fit(const ArealDataset& data, const Eigen::VectorXd& atilde,
                                        const ChainSettings& settings, OutcomeModel model_out) {
  // collinearity guard: a constant spillover column cannot be separated from
  // the intercept
  if ((atilde.array() - atilde.mean()).abs().maxCoeff() < 1e-12)
    throw std::invalid_argument(
        "spillover covariate is constant (all groups fully treated or fully "
        "control); beta2 is unidentified");

  const int p_extra = static_cast<int>(data.x.cols()) - 1;
  Eigen::MatrixXd X(data.n(), 3 + p_extra);
  X.col(0).setOnes();
  X.col(1) = data.a;
  X.col(2) = atilde;
  std::vector<std::string> names = {"gamma0", "beta1", "beta2"};
  for (int j = 1; j < data.x.cols(); ++j) {
    X.col(2 + j) = data.x.col(j);
    names.push_back("gamma" + std::to_string(j));
  }

  GaussianModel m;
  m.design = std::move(X);
  m.coef_names = std::move(names);
  m.response = data.y;
  m.field = FieldKind::None;
  Rng rng(settings.seed);
  const GaussianFit gf = fit_gaussian_spatial(m, settings, rng.sub("outcome"));

  InterferenceFit out;
  out.posterior = gf.summary;
  out.model = std::move(model_out);
  out.model.beta1 = gf.summary.at("beta1").mean;
  out.model.beta2 = gf.summary.at("beta2").mean;
  const auto mk = [&](const char* nm, const char* tag) {
    const ParamSummary& s = gf.summary.at(nm);
    CausalEstimate e;
    e.estimator = tag;
    e.point = s.mean;
    e.lo95 = s.lo95;
    e.hi95 = s.hi95;
    e.diagnostics["n"] = data.n();
    return e;
  };
  out.direct = mk("beta1", "interference-direct");
  out.indirect = mk("beta2", "interference-indirect");
  return out;
}

}  // namespace

InterferenceFit fit_partial_interference(const ArealDataset& data,
                                         const ChainSettings& settings) {
  data.validate();
  std::vector<int> group_count(data.n_regions, 0);
  std::vector<double> group_sum(data.n_regions, 0.0);
  for (int i = 0; i < data.n(); ++i) {
    ++group_count[data.region[i]];
    group_sum[data.region[i]] += data.a(i);
  }
  for (int g = 0; g < data.n_regions; ++g)
    if (group_count[g] == 1)
      throw std::invalid_argument("group " + std::to_string(g) +
                                  " has a single unit; Atilde is undefined");

  Eigen::VectorXd atilde(data.n());
  for (int i = 0; i < data.n(); ++i) {
    const int g = data.region[i];
    atilde(i) = (group_sum[g] - data.a(i)) / (group_count[g] - 1);
  }

  OutcomeModel model;
  model.spill = SpillKind::GroupLeaveOneOut;
  model.group = data.region;
  model.n_units = data.n();
  return interference_linear_fit(data, atilde, settings, std::move(model));
}

InterferenceFit fit_network_interference(const ArealDataset& data, const Lattice& lattice,
                                         const ChainSettings& settings) {
  data.validate(&lattice);
  // region-level treatment must be unambiguous: one observation per region
  std::vector<int> row_of(lattice.n_regions, -1);
  for (int i = 0; i < data.n(); ++i) {
    if (row_of[data.region[i]] >= 0)
      throw std::invalid_argument("network interference expects one observation per region");
    row_of[data.region[i]] = i;
  }
  for (int g = 0; g < lattice.n_regions; ++g)
    if (row_of[g] < 0)
      throw std::invalid_argument("region " + std::to_string(g) + " has no observation");

  Eigen::VectorXd atilde(data.n());
  for (int i = 0; i < data.n(); ++i) {
    const int r = data.region[i];
    double sum = 0.0;
    for (int k : lattice.neighbors[r]) sum += data.a(row_of[k]);
    atilde(i) = sum / lattice.m[r];
  }

  OutcomeModel model;
  model.spill = SpillKind::NeighborMean;
  model.lattice = &lattice;
  model.n_units = lattice.n_regions;
  return interference_linear_fit(data, atilde, settings, std::move(model));
}

}  // namespace spcausal
