#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "spcausal/lattice.hpp"
#include "spcausal/rng.hpp"

namespace spcausal {

using PrecisionMatrix = Eigen::SparseMatrix<double>;

// CAR(rho, sigma): full conditionals U_i | U_-i ~ Normal(rho * Ubar_i, sigma^2 / m_i),
// joint precision sigma^-2 (M - rho W). rho in the open interval (0,1).
struct CarParams {
  double rho = 0.5;
  double sigma = 1.0;
};

struct SarParams {
  double psi = 0.5;
  double sigma = 1.0;
};

void validate(const CarParams& p);
void validate(const SarParams& p);

// sigma^-2 (M - rho W), sparse and symmetric positive definite for rho in (0,1)
PrecisionMatrix car_precision(const Lattice& lattice, const CarParams& params);

// dense Sigma_CAR = sigma^2 (M - rho W)^-1
Eigen::MatrixXd car_covariance(const Lattice& lattice, const CarParams& params);

// Corr(U_i, U_k) from Sigma_CAR; does not depend on sigma
double implied_correlation(const Lattice& lattice, const CarParams& params, int i, int k);

// One mean-zero draw with the given precision (dense Cholesky; throws on non-PD input).
Eigen::VectorXd sample_gmrf(const PrecisionMatrix& precision, Rng& rng);

// SAR error covariance as printed: sigma^2 (I - psi C)^-1 (I - psi C)^-1 with
// C_ik = 1/m_i for adjacent pairs. transposed=true gives the standard form
// sigma^2 (I - psi C)^-1 (I - psi C)^-T instead.
Eigen::MatrixXd sar_error_covariance(const Lattice& lattice, const SarParams& params,
                                     bool transposed = false);

// neighborhood-mean operator C (C y = vector of neighbor means)
Eigen::SparseMatrix<double> neighbor_mean_matrix(const Lattice& lattice);

// log det(M - rho W) via sparse Cholesky; throws if the factorization fails
double car_structure_logdet(const Lattice& lattice, double rho);

// U^T (M - rho W) U without forming the matrix
double car_quadform(const Lattice& lattice, const Eigen::VectorXd& u, double rho);

}  // namespace spcausal
