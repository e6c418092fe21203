#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "spcausal/gmrf.hpp"
#include "spcausal/lattice.hpp"

using namespace spcausal;

TEST_CASE("rook grid adjacency") {
  SUBCASE("1x2 smallest valid grid") {
    const Lattice lat = build_rook_grid(1, 2);
    CHECK(lat.n_regions == 2);
    CHECK(lat.m[0] == 1);
    CHECK(lat.m[1] == 1);
    CHECK(lat.adjacent(0, 1));
  }
  SUBCASE("1x1 rejected") { CHECK_THROWS(build_rook_grid(1, 1)); }
  SUBCASE("3x3 neighbor counts") {
    const Lattice lat = build_rook_grid(3, 3);
    CHECK(lat.m[4] == 4);  // center
    CHECK(lat.m[1] == 3);  // edge midpoint
    CHECK(lat.m[0] == 2);  // corner
  }
  SUBCASE("30x30 counts") {
    const Lattice lat = build_rook_grid(30, 30);
    CHECK(lat.m[15 * 30 + 15] == 4);
    CHECK(lat.m[0] == 2);
    CHECK(lat.m[29] == 2);
  }
  SUBCASE("symmetry holds for assorted sizes") {
    for (auto [r, c] : {std::pair{2, 2}, {3, 5}, {7, 4}, {1, 9}}) {
      const Lattice lat = build_rook_grid(r, c);
      CHECK_NOTHROW(lat.validate());
    }
  }
}

TEST_CASE("adjacency text round trip") {
  const Lattice lat = build_rook_grid(4, 5);
  const Lattice back = read_adjacency(write_adjacency(lat));
  CHECK(back.n_regions == lat.n_regions);
  CHECK(back.neighbors == lat.neighbors);
  CHECK_THROWS(read_adjacency("0: 1\n2: 0\n"));  // non-consecutive ids
  CHECK_THROWS(read_adjacency("0: 1\n1: 0 1\n"));  // self-neighbor
}

TEST_CASE("car precision") {
  SUBCASE("two regions closed form") {
    const Lattice lat = build_rook_grid(1, 2);
    const double rho = 0.7, sigma = 1.7;
    const Eigen::MatrixXd Q = Eigen::MatrixXd(car_precision(lat, {rho, sigma}));
    const double inv_s2 = 1.0 / (sigma * sigma);
    CHECK(Q(0, 0) == doctest::Approx(inv_s2));
    CHECK(Q(1, 1) == doctest::Approx(inv_s2));
    CHECK(Q(0, 1) == doctest::Approx(-rho * inv_s2));
    CHECK(Q(1, 0) == doctest::Approx(-rho * inv_s2));
  }
  SUBCASE("rho -> 0 gives diagonal M / sigma^2") {
    const Lattice lat = build_rook_grid(3, 3);
    const Eigen::MatrixXd Q = Eigen::MatrixXd(car_precision(lat, {1e-12, 2.0}));
    for (int i = 0; i < 9; ++i) {
      CHECK(Q(i, i) == doctest::Approx(lat.m[i] / 4.0));
      for (int j = 0; j < 9; ++j)
        if (i != j) CHECK(std::abs(Q(i, j)) < 1e-12);
    }
  }
  SUBCASE("boundary rho rejected") {
    const Lattice lat = build_rook_grid(2, 2);
    CHECK_THROWS(car_precision(lat, {0.0, 1.0}));
    CHECK_THROWS(car_precision(lat, {1.0, 1.0}));
    CHECK_THROWS(car_precision(lat, {0.5, 0.0}));
  }
  SUBCASE("symmetric positive definite across rho") {
    const Lattice lat = build_rook_grid(4, 4);
    for (double rho : {0.01, 0.3, 0.62, 0.9, 0.999}) {
      const Eigen::MatrixXd Q = Eigen::MatrixXd(car_precision(lat, {rho, 1.3}));
      CHECK((Q - Q.transpose()).cwiseAbs().maxCoeff() < 1e-14);
      Eigen::LLT<Eigen::MatrixXd> llt(Q);
      CHECK(llt.info() == Eigen::Success);
    }
  }
}

TEST_CASE("implied correlation") {
  const Lattice lat = build_rook_grid(30, 30);
  const int i = 14 * 30 + 14, k = 14 * 30 + 15;
  SUBCASE("sigma invariance") {
    const double c1 = implied_correlation(lat, {0.95, 1.0}, i, k);
    const double c2 = implied_correlation(lat, {0.95, 7.3}, i, k);
    CHECK(std::abs(c1 - c2) < 1e-12);
  }
  SUBCASE("monotone in rho") {
    double prev = 0.0;
    for (double rho : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99}) {
      const double c = implied_correlation(lat, {rho, 2.0}, i, k);
      CHECK(c > prev);
      prev = c;
    }
  }
  SUBCASE("rho -> 0 kills correlation") {
    const Lattice small = build_rook_grid(3, 3);
    CHECK(std::abs(implied_correlation(small, {1e-10, 1.0}, 4, 1)) < 1e-8);
  }
}

TEST_CASE("gmrf sampling") {
  const Lattice lat = build_rook_grid(3, 3);
  const CarParams par{0.8, 1.5};
  SUBCASE("deterministic given seed") {
    Rng r1(42), r2(42);
    const Eigen::VectorXd d1 = sample_gmrf(car_precision(lat, par), r1);
    const Eigen::VectorXd d2 = sample_gmrf(car_precision(lat, par), r2);
    CHECK((d1 - d2).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("sigma -> 0 shrinks the field") {
    Rng rng(7);
    const Eigen::VectorXd d = sample_gmrf(car_precision(lat, {0.8, 1e-8}), rng);
    CHECK(d.cwiseAbs().maxCoeff() < 1e-5);
  }
  SUBCASE("empirical covariance matches the dense inverse") {
    // sampling oracle: 1e5 draws against sigma^2 (M - rho W)^-1
    const int reps = 100000;
    const int n = lat.n_regions;
    const Eigen::MatrixXd target = car_covariance(lat, par);
    const PrecisionMatrix Q = car_precision(lat, par);
    Rng rng(2024);
    Eigen::MatrixXd sum2 = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
    for (int r = 0; r < reps; ++r) {
      const Eigen::VectorXd d = sample_gmrf(Q, rng);
      sum += d;
      sum2 += d * d.transpose();
    }
    const Eigen::VectorXd mean = sum / reps;
    CHECK(mean.cwiseAbs().maxCoeff() < 4.0 * std::sqrt(target.diagonal().maxCoeff() / reps));
    const Eigen::MatrixXd emp = sum2 / reps - mean * mean.transpose();
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        // MC standard error of a covariance entry, normal fourth-moment form
        const double se =
            std::sqrt((target(i, i) * target(j, j) + target(i, j) * target(i, j)) /
                      static_cast<double>(reps));
        CHECK(std::abs(emp(i, j) - target(i, j)) < 3.0 * se + 1e-12);
      }
  }
}

TEST_CASE("sar error covariance") {
  SUBCASE("psi = 0 gives sigma^2 I") {
    const Lattice lat = build_rook_grid(2, 3);
    const Eigen::MatrixXd S = sar_error_covariance(lat, {1e-14, 2.0});
    CHECK((S - 4.0 * Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("3x3 grid matches dense linear algebra") {
    const Lattice lat = build_rook_grid(3, 3);
    const double psi = 0.5, sigma = 1.3;
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(9, 9);
    for (int i = 0; i < 9; ++i)
      for (int k : lat.neighbors[i]) C(i, k) = 1.0 / lat.m[i];
    const Eigen::MatrixXd B = Eigen::MatrixXd::Identity(9, 9) - psi * C;
    const Eigen::MatrixXd Binv = B.inverse();
    const Eigen::MatrixXd expected = sigma * sigma * Binv * Binv;
    const Eigen::MatrixXd got = sar_error_covariance(lat, {psi, sigma});
    CHECK((got - expected).cwiseAbs().maxCoeff() < 1e-10);
    // the transposed variant
    const Eigen::MatrixXd expected_t = sigma * sigma * Binv * Binv.transpose();
    const Eigen::MatrixXd got_t = sar_error_covariance(lat, {psi, sigma}, true);
    CHECK((got_t - expected_t).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("2-region closed form by hand algebra") {
    // C is the anti-diagonal; (I - psi C)^-1 = (I + psi C) / (1 - psi^2), so
    // the printed product is s^2 (I (1+psi^2) + 2 psi C) / (1-psi^2)^2
    const Lattice lat = build_rook_grid(1, 2);
    const double psi = 0.4, s2 = 2.25;
    const double denom = (1.0 - psi * psi) * (1.0 - psi * psi);
    const Eigen::MatrixXd got = sar_error_covariance(lat, {psi, 1.5});
    CHECK(got(0, 0) == doctest::Approx(s2 * (1.0 + psi * psi) / denom));
    CHECK(got(1, 1) == doctest::Approx(s2 * (1.0 + psi * psi) / denom));
    CHECK(got(0, 1) == doctest::Approx(s2 * 2.0 * psi / denom));
  }
}

TEST_CASE("car quadform and logdet agree with dense algebra") {
  const Lattice lat = build_rook_grid(4, 3);
  const int n = lat.n_regions;
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n);
  const double rho = 0.83;
  for (int i = 0; i < n; ++i) {
    Q(i, i) = lat.m[i];
    for (int k : lat.neighbors[i]) Q(i, k) = -rho;
  }
  Rng rng(5);
  Eigen::VectorXd u(n);
  for (int i = 0; i < n; ++i) u(i) = rng.normal();
  CHECK(car_quadform(lat, u, rho) == doctest::Approx(u.dot(Q * u)));
  CHECK(car_structure_logdet(lat, rho) == doctest::Approx(std::log(Q.determinant())));
}
