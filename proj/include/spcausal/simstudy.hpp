#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spcausal/dataio.hpp"
#include "spcausal/estimators.hpp"
#include "spcausal/lattice.hpp"

namespace spcausal {

// Benchmark scenario: Y_i ~ Normal(A_i beta + U_i, 1),
// A_i ~ Bernoulli(expit{g(V_i, phi U_i)}), U ~ CAR(rho_u, 2), V ~ CAR(rho_v, 2).
struct Scenario {
  std::string name;
  double rho_u = 0.99;
  double rho_v = 0.99;
  enum class G { Linear, Nonlinear, Nonstationary } g = G::Linear;
  double beta = 0.5;
  double phi = 0.5;

  static const std::vector<Scenario>& registry();
  static Scenario by_name(const std::string& name);
};

struct TruthRecord {
  double beta = 0.5;
  Eigen::VectorXd u, v;
  Eigen::VectorXd prob;  // expit{g} per region
};

ArealDataset generate_dataset(const Scenario& scenario, int nrows, int ncols, std::uint64_t seed,
                              TruthRecord* truth = nullptr);

void write_truth_csv(const TruthRecord& truth, const std::string& path);

struct EstimateRecord {
  int dataset = 0;
  std::string estimator;
  double point = 0.0, lo95 = 0.0, hi95 = 0.0;
  bool failed = false;
  bool covered = false;
  std::string flags;
  std::string error;
};

struct EstimatorAggregate {
  double mean_bias = 0.0;
  double coverage95 = 0.0;
  double mean_ci_width = 0.0;
  int n_ok = 0;
  int n_failed = 0;
};

struct StudyResult {
  std::string scenario;
  double true_beta = 0.5;
  std::vector<EstimateRecord> records;  // dataset-major, estimator order fixed
  std::map<std::string, EstimatorAggregate> by_estimator;

  std::string summary_csv() const;    // scenario,estimator,n_datasets,mean_bias,coverage95,mean_ci_width,n_failed
  std::string estimates_csv() const;  // dataset_id,estimator,point,lo95,hi95,flags
};

// Allowed estimators: NS, NS+P, S, S+P, S+AIPW, Joint, Cut. Per-dataset seeds
// derive from the master seed by dataset index, datasets run concurrently when
// config.parallel is set, and aggregation is deterministic by index.
// Individual fit failures are recorded, never fatal.
StudyResult run_study(const RunConfig& config);

// seed for dataset d of a study (exposed so single fits can be reproduced)
std::uint64_t dataset_seed(std::uint64_t master_seed, int dataset_index);

}  // namespace spcausal
