#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "spcausal/gmrf.hpp"
#include "spcausal/propensity.hpp"
#include "spcausal/simstudy.hpp"

using namespace spcausal;

namespace {

// independent Cox-de Boor recursion for the oracle table (deliberately the
// naive recursive form, not the triangular scheme used by the implementation)
double coxdeboor(const std::vector<double>& t, int i, int k, double x) {
  if (k == 0) return (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
  double left = 0.0, right = 0.0;
  if (t[i + k] > t[i]) left = (x - t[i]) / (t[i + k] - t[i]) * coxdeboor(t, i, k - 1, x);
  if (t[i + k + 1] > t[i + 1])
    right = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * coxdeboor(t, i + 1, k - 1, x);
  return left + right;
}

Eigen::VectorXd linspace01(int n) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = static_cast<double>(i) / (n - 1);
  return v;
}

}  // namespace

TEST_CASE("spline basis") {
  const Eigen::VectorXd scores = linspace01(11);  // knots at 0, 0.5, 1
  const SplineBasis basis = make_spline_basis(scores);
  REQUIRE(basis.n_basis() == 5);
  REQUIRE(basis.knots == std::vector<double>{0, 0, 0, 0, 0.5, 1, 1, 1, 1});

  SUBCASE("partition of unity and nonnegativity") {
    for (double x : {0.0, 0.013, 0.25, 0.4999, 0.5, 0.77, 0.93, 1.0}) {
      const Eigen::VectorXd b = basis.eval(x);
      CHECK(b.sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(b.minCoeff() >= 0.0);
    }
  }
  SUBCASE("frozen reference table") {
    const double table[5][5] = {
        {0.512, 0.434, 0.052, 0.002, 0.0},
        {0.064, 0.558, 0.324, 0.054, 0.0},
        {0.0, 0.25, 0.5, 0.25, 0.0},
        {0.0, 0.109744, 0.427424, 0.449008, 0.013824},
        {0.0, 0.002, 0.052, 0.434, 0.512},
    };
    const double xs[5] = {0.1, 0.3, 0.5, 0.62, 0.9};
    for (int r = 0; r < 5; ++r) {
      const Eigen::VectorXd b = basis.eval(xs[r]);
      for (int j = 0; j < 5; ++j) CHECK(b(j) == doctest::Approx(table[r][j]).epsilon(1e-9));
    }
  }
  SUBCASE("matches the independent recursion on a grid") {
    for (int k = 1; k < 40; ++k) {
      const double x = 0.025 * k - 0.0125;  // interior, off-knot
      const Eigen::VectorXd b = basis.eval(x);
      for (int j = 0; j < 5; ++j)
        CHECK(b(j) == doctest::Approx(coxdeboor(basis.knots, j, 3, x)).epsilon(1e-10));
    }
  }
  SUBCASE("degenerate inputs rejected") {
    Eigen::VectorXd five(10);
    for (int i = 0; i < 10; ++i) five(i) = (i % 5) * 0.2;  // 5 distinct values
    CHECK_THROWS(make_spline_basis(five));
    CHECK_THROWS(make_spline_basis(Eigen::VectorXd::Constant(10, 0.4)));
  }
  SUBCASE("transform is a pure function and clamps") {
    const Eigen::MatrixXd f1 = spline_transform(scores, basis);
    const Eigen::MatrixXd f2 = spline_transform(scores, basis);
    CHECK((f1 - f2).cwiseAbs().maxCoeff() == 0.0);
    Eigen::VectorXd wild(2);
    wild << -0.5, 1.7;
    const Eigen::MatrixXd fw = spline_transform(wild, basis);
    CHECK(fw.row(0).sum() == doctest::Approx(1.0));
    CHECK((fw.row(0) - basis.eval(0.0).transpose()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((fw.row(1) - basis.eval(1.0).transpose()).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("strata construction") {
  SUBCASE("median split for L=2") {
    Rng rng(3);
    Eigen::VectorXd s(101);
    for (int i = 0; i < s.size(); ++i) s(i) = rng.uniform();
    const StrataSpec spec = build_strata(s, 2);
    REQUIRE(spec.n_strata() == 2);
    CHECK(spec.cuts[0] == 0.0);
    CHECK(spec.cuts[2] == 1.0);
    std::vector<double> v(s.data(), s.data() + s.size());
    CHECK(spec.cuts[1] == doctest::Approx(quantile(v, 0.5)));
    const auto lab = spec.labels(s);
    const int n0 = static_cast<int>(std::count(lab.begin(), lab.end(), 0));
    CHECK(std::abs(n0 - 51) <= 1);
  }
  SUBCASE("quintiles with 10 distinct scores put 2 per stratum") {
    Eigen::VectorXd s(10);
    for (int i = 0; i < 10; ++i) s(i) = 0.05 + 0.09 * i;
    const StrataSpec spec = build_strata(s, 5);
    const auto lab = spec.labels(s);
    std::vector<int> cnt(5, 0);
    for (int l : lab) ++cnt[l];
    for (int c : cnt) CHECK(c == 2);
  }
  SUBCASE("quantile cut values for a fixed vector") {
    Eigen::VectorXd s(5);
    s << 0.1, 0.2, 0.3, 0.6, 0.9;
    const StrataSpec spec = build_strata(s, 2);
    CHECK(spec.cuts[1] == doctest::Approx(0.3));
  }
  SUBCASE("ties that empty a stratum are an error naming it") {
    Eigen::VectorXd s(10);
    s << 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.6, 0.7, 0.8, 0.9;  // 5 distinct, tied quartiles
    CHECK_THROWS_WITH_AS(build_strata(s, 4), doctest::Contains("stratum"),
                         std::invalid_argument);
  }
  SUBCASE("labels are monotone in scores") {
    Rng rng(4);
    Eigen::VectorXd s(200);
    for (int i = 0; i < s.size(); ++i) s(i) = rng.uniform();
    const StrataSpec spec = build_strata(s, 5);
    std::vector<std::pair<double, int>> pairs;
    const auto lab = spec.labels(s);
    for (int i = 0; i < s.size(); ++i) pairs.push_back({s(i), lab[i]});
    std::sort(pairs.begin(), pairs.end());
    for (std::size_t i = 1; i < pairs.size(); ++i) CHECK(pairs[i].second >= pairs[i - 1].second);
  }
  SUBCASE("guards") {
    Eigen::VectorXd s(4);
    s << 0.1, 0.2, 0.3, 0.4;
    CHECK_THROWS(build_strata(s, 1));
    CHECK_THROWS(build_strata(s, 5));  // fewer distinct scores than strata
  }
}

TEST_CASE("binary propensity fit") {
  ChainSettings cs;
  cs.iterations = 2500;
  cs.burnin = 600;
  cs.seed = 17;

  SUBCASE("null model: scores near one half") {
    const Lattice lat = build_rook_grid(8, 8);
    Rng gen(5);
    ArealDataset d;
    const int n = 64;
    d.region.resize(n);
    d.rep.assign(n, 0);
    d.y = Eigen::VectorXd::Zero(n);
    d.a.resize(n);
    d.x = Eigen::MatrixXd::Ones(n, 1);
    d.n_regions = n;
    for (int i = 0; i < n; ++i) {
      d.region[i] = i;
      d.a(i) = gen.bernoulli(0.5) ? 1.0 : 0.0;
    }
    const PropensityFit fit = fit_binary_propensity(d, lat, cs);
    CHECK(std::abs(fit.scores.mean() - 0.5) < 0.1);
    for (int i = 0; i < n; ++i) {
      CHECK(fit.scores(i) > 0.0);
      CHECK(fit.scores(i) < 1.0);
    }
  }
  SUBCASE("positivity violations rejected") {
    const Lattice lat = build_rook_grid(2, 2);
    ArealDataset d;
    d.region = {0, 1, 2, 3};
    d.rep.assign(4, 0);
    d.y = Eigen::VectorXd::Zero(4);
    d.a = Eigen::VectorXd::Ones(4);
    d.x = Eigen::MatrixXd::Ones(4, 1);
    d.n_regions = 4;
    CHECK_THROWS_WITH_AS(fit_binary_propensity(d, lat, cs), doctest::Contains("positivity"),
                         std::invalid_argument);
  }
  SUBCASE("fitted field tracks the true spatial signal, and calibration holds") {
    // scenario generator at rho_v = 0.99; the treatment-model field should
    // correlate with the true V, and fitted scores should be calibrated
    // against the generator's expit{g} probabilities
    TruthRecord truth;
    const Scenario sc = Scenario::by_name("a");
    const ArealDataset d = generate_dataset(sc, 30, 30, 99, &truth);
    const Lattice lat = build_rook_grid(30, 30);
    const PropensityFit fit = fit_binary_propensity(d, lat, cs);

    // Pearson correlation of v_hat with the true combined field g = V + phi U
    const Eigen::VectorXd g = truth.v + sc.phi * truth.u;
    const auto corr = [](const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
      const Eigen::VectorXd ac = a.array() - a.mean();
      const Eigen::VectorXd bc = b.array() - b.mean();
      return ac.dot(bc) / std::sqrt(ac.squaredNorm() * bc.squaredNorm());
    };
    CHECK(corr(fit.v_mean, g) > 0.5);

    // calibration slope of true probabilities on fitted scores
    const Eigen::VectorXd ec = fit.scores.array() - fit.scores.mean();
    const Eigen::VectorXd pc = truth.prob.array() - truth.prob.mean();
    const double slope = ec.dot(pc) / ec.squaredNorm();
    CHECK(slope > 0.7);
    CHECK(slope < 1.3);
  }
}

TEST_CASE("generalized propensity fit") {
  ChainSettings cs;
  cs.iterations = 2000;
  cs.burnin = 500;
  cs.seed = 23;
  const Lattice lat = build_rook_grid(10, 10);
  const int n = 100;

  SUBCASE("zero-variance treatment rejected") {
    ArealDataset d;
    d.region.resize(n);
    d.rep.assign(n, 0);
    d.y = Eigen::VectorXd::Zero(n);
    d.a = Eigen::VectorXd::Constant(n, 1.7);
    d.x = Eigen::MatrixXd::Ones(n, 1);
    d.n_regions = n;
    for (int i = 0; i < n; ++i) d.region[i] = i;
    CHECK_THROWS(fit_generalized_propensity(d, lat, cs));
  }
  SUBCASE("homoskedastic simulation: mean score near the residual variance") {
    Rng gen(31);
    ArealDataset d;
    d.region.resize(n);
    d.rep.assign(n, 0);
    d.y = Eigen::VectorXd::Zero(n);
    d.a.resize(n);
    d.x = Eigen::MatrixXd::Ones(n, 1);
    d.n_regions = n;
    const double sd_a = 0.8;
    for (int i = 0; i < n; ++i) {
      d.region[i] = i;
      d.a(i) = 0.4 + sd_a * gen.normal();
    }
    const PropensityFit fit = fit_generalized_propensity(d, lat, cs);
    CHECK(fit.binary == false);
    CHECK(fit.scores.minCoeff() >= 0.0);
    // squared residuals should average near sd_a^2; the CAR field absorbs a
    // little, so allow 10%
    CHECK(fit.scores.mean() == doctest::Approx(sd_a * sd_a).epsilon(0.25));
  }
  SUBCASE("treatment equal to the fitted mean gives score zero") {
    PropensityFit f;
    f.alpha_mean = Eigen::Vector2d(0.3, 1.1);
    // direct arithmetic: residual zero implies score zero
    const double a = 0.3 * 1.0 + 1.1 * 2.0 + 0.0;
    const double r = a - (0.3 + 1.1 * 2.0) - 0.0;
    CHECK(r * r == 0.0);
  }
}
