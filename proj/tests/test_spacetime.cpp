#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spcausal/gmrf.hpp"
#include "spcausal/spacetime.hpp"

using namespace spcausal;

namespace {

ChainSettings quick(std::uint64_t seed, int iters = 1800, int burn = 400) {
  ChainSettings cs;
  cs.iterations = iters;
  cs.burnin = burn;
  cs.seed = seed;
  return cs;
}

PanelDataset blank_panel(int n_regions, int T) {
  PanelDataset p;
  p.n_regions = n_regions;
  p.n_times = T;
  const int n = n_regions * T;
  p.region.resize(n);
  p.t.resize(n);
  p.y.resize(n);
  p.a.resize(n);
  p.x = Eigen::MatrixXd::Ones(n, 1);
  int k = 0;
  for (int t = 1; t <= T; ++t)
    for (int i = 0; i < n_regions; ++i, ++k) {
      p.region[k] = i;
      p.t[k] = t;
    }
  return p;
}

}  // namespace

TEST_CASE("janes_test") {
  SUBCASE("needs T >= 3 and within-time variation") {
    PanelDataset p = blank_panel(10, 2);
    p.a.setZero();
    p.y.setRandom();
    CHECK_THROWS(janes_test(p, 2, quick(1)));
  }
  SUBCASE("constant A within every time step leaves eta2 unidentified") {
    PanelDataset p = blank_panel(10, 4);
    for (int k = 0; k < p.n(); ++k) p.a(k) = p.t[k] % 2;  // varies over t only
    p.y.setRandom();
    CHECK_THROWS_WITH_AS(janes_test(p, 3, quick(1)), doctest::Contains("eta2"),
                         std::invalid_argument);
  }
  SUBCASE("constant Abar_t collides with the intercept") {
    PanelDataset p = blank_panel(10, 4);
    for (int k = 0; k < p.n(); ++k) p.a(k) = p.region[k] % 2;  // same share every t
    p.y.setRandom();
    CHECK_THROWS_WITH_AS(janes_test(p, 3, quick(1)), doctest::Contains("eta1"),
                         std::invalid_argument);
  }
  SUBCASE("null calibration: unconfounded eta1 = eta2 = 0.5") {
    int covered = 0;
    const int reps = 10;
    for (int r = 0; r < reps; ++r) {
      Rng gen(100 + r);
      PanelDataset p = blank_panel(40, 6);
      for (int k = 0; k < p.n(); ++k) {
        p.a(k) = gen.bernoulli(0.3 + 0.08 * p.t[k]) ? 1.0 : 0.0;
        p.y(k) = 0.5 * p.a(k) + 0.2 * std::sin(0.9 * p.t[k]) + gen.normal();
      }
      const JanesFit f = janes_test(p, default_janes_df(p.n_times), quick(200 + r));
      if (f.diff.lo95 <= 0.0 && 0.0 <= f.diff.hi95) ++covered;
    }
    CHECK(covered >= 8);
  }
  SUBCASE("power: a spatial confounder separates the global and local effects") {
    // Abar_t needs high-frequency movement the time splines cannot absorb,
    // otherwise eta1 is barely identified
    int detected = 0;
    const int reps = 10;
    for (int r = 0; r < reps; ++r) {
      Rng gen(300 + r);
      const int T = 12;
      PanelDataset p = blank_panel(40, T);
      std::vector<double> u(40), shift(T + 1);
      for (auto& v : u) v = 1.5 * gen.normal();
      for (int t = 1; t <= T; ++t) shift[t] = 1.2 * gen.normal();
      for (int k = 0; k < p.n(); ++k) {
        const int i = p.region[k];
        p.a(k) = gen.bernoulli(expit(u[i] + shift[p.t[k]])) ? 1.0 : 0.0;
        p.y(k) = 0.5 * p.a(k) + 2.0 * u[i] + gen.normal();
      }
      const JanesFit f = janes_test(p, default_janes_df(T), quick(400 + r));
      if (f.diff.lo95 > 0.0 || f.diff.hi95 < 0.0) ++detected;
    }
    CHECK(detected >= 6);  // majority of replications
  }
  SUBCASE("purely temporal signals are absorbed by the time splines") {
    Rng gen(70);
    PanelDataset p = blank_panel(30, 8);
    for (int k = 0; k < p.n(); ++k) {
      p.a(k) = gen.bernoulli(0.5) ? 1.0 : 0.0;
      p.y(k) = 0.4 * p.a(k) + std::round(64.0 * gen.normal()) / 64.0;
    }
    PanelDataset p2 = p;
    for (int k = 0; k < p2.n(); ++k) p2.y(k) += 3.0 * std::sin(0.7 * p2.t[k]);
    const JanesFit f1 = janes_test(p, default_janes_df(8), quick(71));
    const JanesFit f2 = janes_test(p2, default_janes_df(8), quick(71));
    CHECK(f1.eta2.mean == doctest::Approx(f2.eta2.mean).epsilon(0.08));
  }
}

TEST_CASE("fit_did") {
  SUBCASE("per-region constants cancel exactly in the differenced fit") {
    Rng gen(5);
    PanelDataset p = blank_panel(40, 2);
    for (int k = 0; k < p.n(); ++k) {
      p.a(k) = gen.bernoulli(0.5) ? 1.0 : 0.0;
      p.y(k) = std::round(256.0 * gen.normal()) / 256.0;
    }
    PanelDataset shifted = p;
    for (int k = 0; k < p.n(); ++k) shifted.y(k) += 11.0 + 2.0 * p.region[k];
    const DidFit f1 = fit_did(p, false, nullptr, quick(6));
    const DidFit f2 = fit_did(shifted, false, nullptr, quick(6));
    REQUIRE(f1.beta3.draws.size() == f2.beta3.draws.size());
    for (std::size_t i = 0; i < f1.beta3.draws.size(); ++i)
      CHECK(f1.beta3.draws[i] == f2.beta3.draws[i]);
  }
  SUBCASE("time-invariant region effects: beta3 covered across replications") {
    int covered = 0;
    const int reps = 12;
    for (int r = 0; r < reps; ++r) {
      Rng gen(500 + r);
      PanelDataset p = blank_panel(80, 2);
      std::vector<double> u(80), treat(80);
      for (int i = 0; i < 80; ++i) {
        u[i] = 1.5 * gen.normal();
        treat[i] = gen.bernoulli(expit(u[i])) ? 1.0 : 0.0;  // confounded, time-constant
      }
      for (int k = 0; k < p.n(); ++k) {
        const int i = p.region[k];
        const double t = p.t[k];
        p.a(k) = treat[i];
        p.y(k) = 0.1 * p.a(k) + 0.3 * t + 0.4 * t * p.a(k) + u[i] + 0.5 * gen.normal();
      }
      const DidFit f = fit_did(p, false, nullptr, quick(600 + r, 1500, 300));
      CHECK(f.beta1.has_value() == false);  // time-constant treatment
      if (f.beta3.lo95 <= 0.4 && 0.4 <= f.beta3.hi95) ++covered;
    }
    CHECK(covered >= 10);
  }
  SUBCASE("spillover variant recovers beta4 and beta5") {
    const Lattice lat = build_rook_grid(10, 10);
    Rng gen(9);
    PanelDataset p = blank_panel(100, 2);
    std::vector<std::vector<double>> a(3, std::vector<double>(100));
    for (int t = 1; t <= 2; ++t)
      for (int i = 0; i < 100; ++i) a[t][i] = gen.bernoulli(0.5) ? 1.0 : 0.0;
    for (int k = 0; k < p.n(); ++k) {
      const int i = p.region[k], t = p.t[k];
      p.a(k) = a[t][i];
      double abar = 0.0;
      for (int nb : lat.neighbors[i]) abar += a[t][nb];
      abar /= lat.m[i];
      p.y(k) = 0.3 * p.a(k) + 0.25 * t + 0.4 * t * p.a(k) + 0.2 * abar + 0.3 * t * abar +
               0.4 * gen.normal();
    }
    const DidFit f = fit_did(p, true, &lat, quick(10, 2500, 500));
    REQUIRE(f.beta1.has_value());
    REQUIRE(f.beta4.has_value());
    REQUIRE(f.beta5.has_value());
    CHECK(f.beta3.lo95 <= 0.4);
    CHECK(0.4 <= f.beta3.hi95);
    CHECK(f.beta4->lo95 <= 0.2);
    CHECK(0.2 <= f.beta4->hi95);
    CHECK(f.beta5->lo95 <= 0.3);
    CHECK(0.3 <= f.beta5->hi95);
    // flag off: exactly the Eq-28 fit, two fewer coefficients
    const DidFit f0 = fit_did(p, false, &lat, quick(10, 800, 200));
    CHECK(!f0.beta4.has_value());
    CHECK(!f0.beta5.has_value());
  }
  SUBCASE("level-form cross-check at T=2") {
    Rng gen(12);
    PanelDataset p = blank_panel(60, 2);
    for (int k = 0; k < p.n(); ++k) {
      const double t = p.t[k];
      p.a(k) = gen.bernoulli(0.5) ? 1.0 : 0.0;
      p.y(k) = 0.2 * p.a(k) + 0.3 * t + 0.4 * t * p.a(k) + 0.5 * gen.normal();
    }
    const DidFit fd = fit_did(p, false, nullptr, quick(13, 2500, 500));
    const DidFit fl = fit_did_level(p, false, nullptr, quick(13, 2500, 500));
    CHECK(fd.beta3.mean == doctest::Approx(fl.beta3.mean).epsilon(0.3));
  }
  SUBCASE("no treated or no control units rejected") {
    PanelDataset p = blank_panel(10, 2);
    p.a.setZero();
    p.y.setRandom();
    CHECK_THROWS(fit_did(p, false, nullptr, quick(1)));
  }
}

TEST_CASE("fit_granger") {
  const Lattice lat = build_rook_grid(8, 8);
  SUBCASE("insufficient time depth rejected") {
    PanelDataset p = blank_panel(64, 3);
    p.a.setRandom();
    p.y.setRandom();
    CHECK_THROWS_WITH_AS(fit_granger(p, 2, false, lat, quick(1)),
                         doctest::Contains("time depth"), std::invalid_argument);
  }
  SUBCASE("beta1 = 0.5 at lag 1 is recovered") {
    Rng gen(20);
    PanelDataset p = blank_panel(64, 8);
    std::vector<std::vector<double>> ts(64);
    // build sequentially in time: Y_it = 0.5 A_{i,t-1} + 0.3 Y_{i,t-1} + eps
    std::vector<std::vector<double>> av(9, std::vector<double>(64)),
        yv(9, std::vector<double>(64));
    for (int i = 0; i < 64; ++i) {
      av[1][i] = gen.bernoulli(0.5);
      yv[1][i] = gen.normal();
    }
    for (int t = 2; t <= 8; ++t)
      for (int i = 0; i < 64; ++i) {
        av[t][i] = gen.bernoulli(0.5);
        yv[t][i] = 0.5 * av[t - 1][i] + 0.3 * yv[t - 1][i] + 0.6 * gen.normal();
      }
    for (int k = 0; k < p.n(); ++k) {
      p.a(k) = av[p.t[k]][p.region[k]];
      p.y(k) = yv[p.t[k]][p.region[k]];
    }
    const GrangerFit f = fit_granger(p, 1, false, lat, quick(21, 2200, 500));
    CHECK(f.beta[0].lo95 <= 0.5);
    CHECK(0.5 <= f.beta[0].hi95);
    CHECK(f.any_lag_excludes_zero);
    CHECK(f.rho[0].lo95 <= 0.3);
    CHECK(0.3 <= f.rho[0].hi95);

    SUBCASE("extra lags cover zero") {
      const GrangerFit f2 = fit_granger(p, 2, false, lat, quick(22, 2200, 500));
      CHECK(f2.beta[1].lo95 <= 0.0);
      CHECK(0.0 <= f2.beta[1].hi95);
    }
  }
  SUBCASE("null generation: the exclusion indicator fires at about the nominal rate") {
    int fired = 0;
    const int reps = 30;
    for (int r = 0; r < reps; ++r) {
      Rng gen(700 + r);
      PanelDataset p = blank_panel(36, 6);
      const Lattice small = build_rook_grid(6, 6);
      std::vector<std::vector<double>> yv(7, std::vector<double>(36));
      for (int i = 0; i < 36; ++i) yv[1][i] = gen.normal();
      for (int t = 2; t <= 6; ++t)
        for (int i = 0; i < 36; ++i) yv[t][i] = 0.3 * yv[t - 1][i] + gen.normal();
      for (int k = 0; k < p.n(); ++k) {
        p.a(k) = gen.bernoulli(0.5) ? 1.0 : 0.0;  // never enters y
        p.y(k) = yv[p.t[k]][p.region[k]];
      }
      const GrangerFit f = fit_granger(p, 1, false, small, quick(800 + r, 1200, 300));
      if (f.any_lag_excludes_zero) ++fired;
    }
    CHECK(fired <= 6);  // ~5% nominal over 30 replications
  }
  SUBCASE("zeroed treatment history recovers the prior") {
    Rng gen(30);
    PanelDataset p = blank_panel(36, 6);
    const Lattice small = build_rook_grid(6, 6);
    for (int k = 0; k < p.n(); ++k) {
      p.a(k) = 0.0;
      p.y(k) = gen.normal();
    }
    const GrangerFit f = fit_granger(p, 1, false, small, quick(31, 2500, 500));
    // prior N(0,10): the posterior interval should look like the prior's
    CHECK(f.beta[0].lo95 < -4.0);
    CHECK(f.beta[0].hi95 > 4.0);
    CHECK(!f.any_lag_excludes_zero);
  }
  SUBCASE("markov spillover covariate accepted") {
    Rng gen(40);
    PanelDataset p = blank_panel(64, 6);
    for (int k = 0; k < p.n(); ++k) {
      p.a(k) = gen.bernoulli(0.5) ? 1.0 : 0.0;
      p.y(k) = gen.normal();
    }
    const GrangerFit f = fit_granger(p, 1, true, lat, quick(41, 800, 200));
    CHECK(f.posterior.has("beta_nbr1"));
  }
}
