#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "spcausal/engine.hpp"
#include "spcausal/estimators.hpp"

namespace spcausal {

// A complete hypothetical assignment, one 0/1 value per unit.
using TreatmentField = std::vector<int>;

// Distribution over hypothetical treatment fields. Units are independent
// under both kinds: iid Bernoulli(p), or a transition policy where a unit
// currently untreated becomes treated with probability p0 and a unit
// currently treated stays treated with probability p1.
struct Policy {
  enum class Kind { IidBernoulli, Transition };
  Kind kind = Kind::IidBernoulli;
  double p = 0.5;
  double p0 = 0.0;
  double p1 = 1.0;

  void validate() const;
  double prob_one(int current_a) const;
  static Policy iid(double p);
  static Policy transition(double p0, double p1);
  std::string label() const;
};

enum class SpillKind { GroupLeaveOneOut, NeighborMean };

// Parametric outcome model Y = a beta1 + s beta2 + s^2 beta2_quad + X gamma + eps
// where s is the spillover summary of the treatment field (leave-self-out
// group proportion, or neighbor mean on a lattice). beta2_quad = 0 is the
// linear model; a nonzero value gives the nonlinear test model.
struct OutcomeModel {
  double beta1 = 0.0;
  double beta2 = 0.0;
  double beta2_quad = 0.0;
  Eigen::VectorXd gamma;  // unused by the estimands (covariates cancel)
  SpillKind spill = SpillKind::NeighborMean;
  std::vector<int> group;            // unit -> group, for GroupLeaveOneOut
  const Lattice* lattice = nullptr;  // for NeighborMean
  int n_units = 0;

  void validate() const;
  // deterministic function of the others' treatments; own entry is ignored
  double spillover(int unit, const TreatmentField& field) const;
  // expected potential outcome with the covariate part dropped (it cancels in
  // every contrast below)
  double mean_outcome(int unit, int own_a, const TreatmentField& field) const;
};

// E{Y(1, a_minus)} - E{Y(0, a_minus)}
double estimand_de(const OutcomeModel& model, int unit, const TreatmentField& a_minus);
// E{Y(0, a_minus)} - E{Y(0, a_minus_prime)}
double estimand_ie(const OutcomeModel& model, int unit, const TreatmentField& a_minus,
                   const TreatmentField& a_minus_prime);
// E{Y(1, a_minus)} - E{Y(0, a_minus_prime)} = DE + IE
double estimand_te(const OutcomeModel& model, int unit, const TreatmentField& a_minus,
                   const TreatmentField& a_minus_prime);
// E{Y(a_unit, a_minus)} - E{Y(a'_unit, a'_minus)} with own treatments from the fields
double estimand_oe(const OutcomeModel& model, int unit, const TreatmentField& a,
                   const TreatmentField& a_prime);

enum class EffectKind { DE, IE, TE, OE };
std::string effect_name(EffectKind k);

struct PolicyAverage {
  double value = 0.0;
  double mc_se = 0.0;  // 0 for enumeration
  std::string method;
};

// Exact policy average by enumeration over all assignments of the other
// units (2^(n-1) fields; guarded at n <= 20). IE/TE/OE contrast the policy
// against `reference` (all-control when null). The observed field supplies
// the conditioning state for transition policies.
PolicyAverage policy_average_enumerate(const OutcomeModel& model, const Policy& policy,
                                       EffectKind effect, const TreatmentField& observed,
                                       const Policy* reference = nullptr);

// Monte Carlo policy average with a deterministic block reduction: draws are
// split into fixed blocks, each block has its own substream, and partial sums
// combine in block order, so the result is identical with and without OpenMP.
PolicyAverage policy_average_mc(const OutcomeModel& model, const Policy& policy, EffectKind effect,
                                const TreatmentField& observed, int draws, std::uint64_t seed,
                                bool parallel = true, const Policy* reference = nullptr);

struct InterferenceFit {
  OutcomeModel model;      // posterior means
  CausalEstimate direct;   // beta1
  CausalEstimate indirect; // beta2
  PosteriorSummary posterior;
};

// Y = A beta1 + Atilde beta2 + X gamma + eps with Atilde the leave-self-out
// group treatment proportion; groups are the dataset's region labels.
InterferenceFit fit_partial_interference(const ArealDataset& data, const ChainSettings& settings);

// Same linear fit with Atilde replaced by the lattice neighbor mean
// (one observation per region).
InterferenceFit fit_network_interference(const ArealDataset& data, const Lattice& lattice,
                                         const ChainSettings& settings);

}  // namespace spcausal
