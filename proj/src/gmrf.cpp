#include "spcausal/gmrf.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace spcausal {

void validate(const CarParams& p) {
  if (!(p.rho > 0.0 && p.rho < 1.0))
    throw std::invalid_argument("CAR rho must lie in the open interval (0,1)");
  if (!(p.sigma > 0.0)) throw std::invalid_argument("CAR sigma must be positive");
}

void validate(const SarParams& p) {
  if (!(p.psi > 0.0 && p.psi < 1.0))
    throw std::invalid_argument("SAR psi must lie in the open interval (0,1)");
  if (!(p.sigma > 0.0)) throw std::invalid_argument("SAR sigma must be positive");
}

PrecisionMatrix car_precision(const Lattice& lattice, const CarParams& params) {
  validate(params);
  const int n = lattice.n_regions;
  const double inv_s2 = 1.0 / (params.sigma * params.sigma);
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(n) * 5);
  for (int i = 0; i < n; ++i) {
    trips.emplace_back(i, i, lattice.m[i] * inv_s2);
    for (int k : lattice.neighbors[i]) trips.emplace_back(i, k, -params.rho * inv_s2);
  }
  PrecisionMatrix Q(n, n);
  Q.setFromTriplets(trips.begin(), trips.end());
  return Q;
}

Eigen::MatrixXd car_covariance(const Lattice& lattice, const CarParams& params) {
  const Eigen::MatrixXd Q = Eigen::MatrixXd(car_precision(lattice, params));
  Eigen::LLT<Eigen::MatrixXd> llt(Q);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("car_covariance: precision not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(lattice.n_regions, lattice.n_regions));
}

double implied_correlation(const Lattice& lattice, const CarParams& params, int i, int k) {
  if (i == k) throw std::invalid_argument("implied_correlation requires i != k");
  if (i < 0 || k < 0 || i >= lattice.n_regions || k >= lattice.n_regions)
    throw std::invalid_argument("implied_correlation: region index out of range");
  const Eigen::MatrixXd S = car_covariance(lattice, params);
  return S(i, k) / std::sqrt(S(i, i) * S(k, k));
}

Eigen::VectorXd sample_gmrf(const PrecisionMatrix& precision, Rng& rng) {
  const int n = static_cast<int>(precision.rows());
  const Eigen::MatrixXd dense(precision);
  Eigen::LLT<Eigen::MatrixXd> llt(dense);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("sample_gmrf: precision not positive definite");
  Eigen::VectorXd z(n);
  for (int i = 0; i < n; ++i) z(i) = rng.normal();
  // Q = L L^T  =>  x = L^-T z has covariance Q^-1
  return llt.matrixU().solve(z);
}

Eigen::SparseMatrix<double> neighbor_mean_matrix(const Lattice& lattice) {
  const int n = lattice.n_regions;
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(n) * 4);
  for (int i = 0; i < n; ++i)
    for (int k : lattice.neighbors[i]) trips.emplace_back(i, k, 1.0 / lattice.m[i]);
  Eigen::SparseMatrix<double> C(n, n);
  C.setFromTriplets(trips.begin(), trips.end());
  return C;
}

Eigen::MatrixXd sar_error_covariance(const Lattice& lattice, const SarParams& params,
                                     bool transposed) {
  validate(params);
  const int n = lattice.n_regions;
  const Eigen::MatrixXd B =
      Eigen::MatrixXd::Identity(n, n) - params.psi * Eigen::MatrixXd(neighbor_mean_matrix(lattice));
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(B);
  if (std::abs(lu.determinant()) < 1e-12)
    throw std::runtime_error("sar_error_covariance: I - psi C is singular");
  const Eigen::MatrixXd Binv = lu.inverse();
  const double s2 = params.sigma * params.sigma;
  if (transposed) return s2 * Binv * Binv.transpose();
  return s2 * Binv * Binv;
}

double car_structure_logdet(const Lattice& lattice, double rho) {
  const int n = lattice.n_regions;
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(n) * 5);
  for (int i = 0; i < n; ++i) {
    trips.emplace_back(i, i, static_cast<double>(lattice.m[i]));
    for (int k : lattice.neighbors[i]) trips.emplace_back(i, k, -rho);
  }
  Eigen::SparseMatrix<double> Q(n, n);
  Q.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(Q);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("car_structure_logdet: factorization failed");
  const Eigen::SparseMatrix<double> L = llt.matrixL();
  double ld = 0.0;
  for (int i = 0; i < n; ++i) ld += std::log(L.coeff(i, i));
  return 2.0 * ld;
}

double car_quadform(const Lattice& lattice, const Eigen::VectorXd& u, double rho) {
  double diag = 0.0, cross = 0.0;
  for (int i = 0; i < lattice.n_regions; ++i) {
    diag += lattice.m[i] * u(i) * u(i);
    for (int k : lattice.neighbors[i]) cross += u(i) * u(k);
  }
  return diag - rho * cross;
}

}  // namespace spcausal
