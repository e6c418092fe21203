#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "spcausal/engine.hpp"
#include "spcausal/estimators.hpp"

namespace spcausal {

// Confounding diagnostic of global vs local treatment effects:
// Y_it = eta1 Abar_t + eta2 (A_it - Abar_t) + X_it gamma + eps, with smooth
// time functions in X. A large eta1 - eta2 difference points at a missing
// spatial confounder; the posterior of the difference is reported without a
// decision threshold.
struct JanesFit {
  ParamSummary eta1;
  ParamSummary eta2;
  ParamSummary diff;  // eta1 - eta2, summarized from the per-draw difference
  PosteriorSummary posterior;
};

JanesFit janes_test(const PanelDataset& panel, int time_spline_df, const ChainSettings& settings);
inline int default_janes_df(int n_times) { return std::min(6, n_times - 1); }

// Two-period difference-in-differences, fit on the differenced data
// D_i = Y_i2 - Y_i1 so additive region effects cancel exactly. beta3 is the
// DID effect; beta1 (and beta4 with spillovers) are identified only when the
// treatment varies over time and are flagged otherwise.
struct DidFit {
  std::optional<ParamSummary> beta1;  // treatment main
  ParamSummary beta2;                 // time
  ParamSummary beta3;                 // time x treatment
  std::optional<ParamSummary> beta4;  // neighbor spillover (spillover variant)
  std::optional<ParamSummary> beta5;  // time x neighbor spillover
  std::vector<std::string> flags;
  PosteriorSummary posterior;

  CausalEstimate did_estimate() const;  // beta3 as the causal summary
};

DidFit fit_did(const PanelDataset& panel, bool spillover, const Lattice* lattice,
               const ChainSettings& settings);

// Undifferenced level-form fit of the same model with iid region intercepts;
// kept as a cross-check for T = 2.
DidFit fit_did_level(const PanelDataset& panel, bool spillover, const Lattice* lattice,
                     const ChainSettings& settings);

// Lagged spatiotemporal regression
// Y_it = sum_l (A_{i,t-l} beta_l + X_{i,t-l} gamma_l + Y_{i,t-l} rho_l) + U_it + eps
// with U_it CAR over space and independent over time (one field per step).
// Granger summary: per-lag intervals plus a joint exclusion-of-zero indicator.
struct GrangerFit {
  int lags = 1;
  std::vector<ParamSummary> beta;  // per lag
  std::vector<ParamSummary> rho;   // autoregressive coefficients per lag
  bool any_lag_excludes_zero = false;
  PosteriorSummary posterior;
};

GrangerFit fit_granger(const PanelDataset& panel, int lags, bool spillover, const Lattice& lattice,
                       const ChainSettings& settings);

}  // namespace spcausal
