#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "spcausal/geostat.hpp"
#include "spcausal/interference.hpp"
#include "spcausal/simstudy.hpp"
#include "spcausal/spacetime.hpp"

namespace fs = std::filesystem;
using namespace spcausal;

namespace {

std::ofstream open_or_die(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

ChainSettings settings_from(const RunConfig& cfg) {
  ChainSettings cs;
  cs.iterations = cfg.iterations;
  cs.burnin = cfg.burnin;
  cs.thin = cfg.thin;
  cs.seed = cfg.seed;
  return cs;
}

Policy parse_policy(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  if (kind == "iid") {
    if (colon == std::string::npos) throw CLI::ValidationError("--policy", "expected iid:p");
    return Policy::iid(std::stod(text.substr(colon + 1)));
  }
  if (kind == "transition") {
    const auto comma = text.find(',', colon);
    if (colon == std::string::npos || comma == std::string::npos)
      throw CLI::ValidationError("--policy", "expected transition:p0,p1");
    return Policy::transition(std::stod(text.substr(colon + 1, comma - colon - 1)),
                              std::stod(text.substr(comma + 1)));
  }
  throw CLI::ValidationError("--policy", "expected iid:p or transition:p0,p1");
}

SpilloverKernel parse_kernel(const std::string& text) {
  const auto colon = text.find(':');
  const std::string kind = text.substr(0, colon);
  SpilloverKernel k;
  if (colon == std::string::npos)
    throw CLI::ValidationError("--kernel", "expected disc:r or gauss:phi");
  if (kind == "disc") {
    k.kind = SpilloverKernel::Kind::Disc;
    k.radius = std::stod(text.substr(colon + 1));
  } else if (kind == "gauss") {
    k.kind = SpilloverKernel::Kind::Gaussian;
    k.bandwidth = std::stod(text.substr(colon + 1));
  } else {
    throw CLI::ValidationError("--kernel", "expected disc:r or gauss:phi");
  }
  k.validate();
  return k;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spatial causal inference toolkit"};
  app.require_subcommand(1);

  // ---- simulate -------------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "generate a benchmark scenario dataset");
  std::string sim_scenario = "a", sim_out = ".";
  int sim_rows = 20, sim_cols = 20;
  std::uint64_t sim_seed = 1;
  double sim_beta = 0.5, sim_phi = 0.5;
  sim->add_option("--scenario", sim_scenario, "a|b|c|d|nonlinear|nonstationary");
  sim->add_option("--rows", sim_rows, "grid rows");
  sim->add_option("--cols", sim_cols, "grid cols");
  sim->add_option("--seed", sim_seed, "rng seed");
  sim->add_option("--beta", sim_beta, "treatment effect");
  sim->add_option("--phi", sim_phi, "confounding strength");
  sim->add_option("--out", sim_out, "output directory");

  // ---- fit ------------------------------------------------------------------
  auto* fit = app.add_subcommand("fit", "fit one estimator to an areal CSV");
  std::string fit_estimator = "NS", fit_data, fit_lattice, fit_config, fit_out, fit_id = "0";
  int fit_strata_n = 5, fit_iv_col = 1;
  fit->add_option("--estimator", fit_estimator, "estimator tag (NS, S, S+P, Joint, ...)")
      ->required();
  fit->add_option("--data", fit_data, "areal CSV (region,y,a[,rep,x1..xp])")->required();
  fit->add_option("--lattice", fit_lattice, "adjacency-list file");
  fit->add_option("--config", fit_config, "key=value run configuration");
  fit->add_option("--strata", fit_strata_n, "strata count for S+Strata");
  fit->add_option("--iv-column", fit_iv_col, "covariate index of the instrument (x<k>)");
  fit->add_option("--dataset-id", fit_id, "id written to the output row");
  fit->add_option("--out", fit_out, "output CSV (stdout when omitted)");

  // ---- sim-study ------------------------------------------------------------
  auto* study = app.add_subcommand("sim-study", "run the benchmark simulation study");
  std::string study_config, study_out = ".";
  bool paper_scale = false;
  study->add_option("--config", study_config, "key=value run configuration")->required();
  study->add_option("--out", study_out, "output directory");
  study->add_flag("--paper-scale", paper_scale, "100 datasets on a 30x30 grid");

  // ---- interference ---------------------------------------------------------
  auto* intf = app.add_subcommand("interference", "policy-averaged interference effects");
  std::string intf_data, intf_lattice, intf_mode = "network", intf_policy = "iid:0.5",
              intf_method = "mc", intf_out;
  int intf_draws = 100000;
  std::uint64_t intf_seed = 1;
  std::string intf_config;
  intf->add_option("--data", intf_data, "areal CSV")->required();
  intf->add_option("--mode", intf_mode, "partial|network");
  intf->add_option("--lattice", intf_lattice, "adjacency-list file (network mode)");
  intf->add_option("--policy", intf_policy, "iid:p or transition:p0,p1");
  intf->add_option("--method", intf_method, "enumerate|mc");
  intf->add_option("--draws", intf_draws, "Monte Carlo draws");
  intf->add_option("--seed", intf_seed, "rng seed");
  intf->add_option("--config", intf_config, "key=value run configuration");
  intf->add_option("--out", intf_out, "output CSV (stdout when omitted)");

  // ---- spacetime ------------------------------------------------------------
  auto* st = app.add_subcommand("spacetime", "spatiotemporal estimators on a panel CSV");
  std::string st_data, st_lattice, st_method = "did", st_out, st_config;
  bool st_spill = false;
  int st_lags = 1;
  st->add_option("--data", st_data, "panel CSV (region,t,y,a[,x1..xp])")->required();
  st->add_option("--method", st_method, "janes|did|granger");
  st->add_option("--lattice", st_lattice, "adjacency-list file");
  st->add_flag("--spillover", st_spill, "neighbor spillover terms");
  st->add_option("--lags", st_lags, "Granger lag count");
  st->add_option("--config", st_config, "key=value run configuration");
  st->add_option("--out", st_out, "output CSV (stdout when omitted)");

  // ---- geostat ----------------------------------------------------------------
  auto* geo = app.add_subcommand("geostat", "point-referenced methods on a point CSV");
  std::string geo_data, geo_method = "krige", geo_kernel = "disc:1", geo_out, geo_config;
  int geo_nx = 32, geo_ny = 32, geo_imputations = 1;
  double geo_w = 0.5, geo_band = std::numeric_limits<double>::infinity(), geo_boundary = 0.0;
  geo->add_option("--data", geo_data, "point CSV (s1,s2,y,a[,x1..xp])")->required();
  geo->add_option("--method", geo_method, "krige|dapsm|rd|interference");
  geo->add_option("--kernel", geo_kernel, "disc:r or gauss:phi");
  geo->add_option("--grid-nx", geo_nx, "grid nodes in x");
  geo->add_option("--grid-ny", geo_ny, "grid nodes in y");
  geo->add_option("--w", geo_w, "DAPSm weight in [0,1]");
  geo->add_option("--band", geo_band, "discontinuity band half-width");
  geo->add_option("--boundary", geo_boundary, "rd: treated half-plane is s1 > this value");
  geo->add_option("--imputations", geo_imputations, "conditional field draws (interference)");
  geo->add_option("--config", geo_config, "key=value run configuration");
  geo->add_option("--out", geo_out, "output CSV (stdout when omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      const Scenario base = Scenario::by_name(sim_scenario);
      Scenario sc = base;
      sc.beta = sim_beta;
      sc.phi = sim_phi;
      TruthRecord truth;
      const ArealDataset d = generate_dataset(sc, sim_rows, sim_cols, sim_seed, &truth);
      fs::create_directories(sim_out);
      write_areal_csv(d, (fs::path(sim_out) / "data.csv").string());
      write_truth_csv(truth, (fs::path(sim_out) / "truth.csv").string());
      write_adjacency_file(build_rook_grid(sim_rows, sim_cols),
                           (fs::path(sim_out) / "lattice.adj").string());
      std::cout << "wrote data.csv, truth.csv, lattice.adj to " << sim_out << "\n";
      return 0;
    }

    if (*fit) {
      RunConfig cfg = fit_config.empty() ? RunConfig{} : parse_config(fit_config);
      const ArealDataset data = read_areal_csv(fit_data);
      Lattice lattice;
      const bool have_lat = !fit_lattice.empty();
      if (have_lat) lattice = read_adjacency_file(fit_lattice);
      ModelSpec spec;
      spec.tag = fit_estimator;
      spec.strata_count = fit_strata_n;
      spec.iv_column = fit_iv_col;
      const FitResult fr = run_chain(spec, data, have_lat ? &lattice : nullptr, cfg);
      const std::string row = fr.estimate.csv_row(fit_id);
      if (fit_out.empty()) {
        std::cout << "dataset_id,estimator,point,lo95,hi95,flags\n" << row << "\n";
      } else {
        auto out = open_or_die(fit_out);
        out << "dataset_id,estimator,point,lo95,hi95,flags\n" << row << "\n";
      }
      return 0;
    }

    if (*study) {
      RunConfig cfg = parse_config(study_config);
      if (paper_scale) {
        cfg.grid_rows = cfg.grid_cols = 30;
        cfg.n_datasets = 100;
      }
      fs::create_directories(study_out);
      const StudyResult res = run_study(cfg);
      {
        auto out = open_or_die((fs::path(study_out) / ("estimates_" + res.scenario + ".csv")).string());
        out << res.estimates_csv();
      }
      auto out = open_or_die((fs::path(study_out) / "summary.csv").string());
      out << res.summary_csv();
      std::cout << res.summary_csv();
      return 0;
    }

    if (*intf) {
      RunConfig cfg = intf_config.empty() ? RunConfig{} : parse_config(intf_config);
      const ArealDataset data = read_areal_csv(intf_data, TreatmentKind::Binary);
      const ChainSettings cs = settings_from(cfg);
      InterferenceFit f;
      Lattice lattice;
      if (intf_mode == "network") {
        if (intf_lattice.empty())
          throw std::runtime_error("network mode needs --lattice");
        lattice = read_adjacency_file(intf_lattice);
        f = fit_network_interference(data, lattice, cs);
      } else if (intf_mode == "partial") {
        f = fit_partial_interference(data, cs);
      } else {
        throw std::runtime_error("unknown mode '" + intf_mode + "'");
      }
      const Policy policy = parse_policy(intf_policy);
      TreatmentField observed(f.model.n_units, 0);
      if (intf_mode == "network") {
        std::vector<int> row_of(lattice.n_regions, -1);
        for (int i = 0; i < data.n(); ++i) row_of[data.region[i]] = i;
        for (int u = 0; u < f.model.n_units; ++u) observed[u] = data.a(row_of[u]) > 0.5;
      } else {
        for (int u = 0; u < f.model.n_units; ++u) observed[u] = data.a(u) > 0.5;
      }
      std::ostringstream rows;
      rows << "effect,policy,value,mc_se,method\n";
      for (EffectKind k : {EffectKind::DE, EffectKind::IE, EffectKind::TE, EffectKind::OE}) {
        const PolicyAverage pa =
            intf_method == "enumerate"
                ? policy_average_enumerate(f.model, policy, k, observed)
                : policy_average_mc(f.model, policy, k, observed, intf_draws, intf_seed);
        rows << effect_name(k) << ',' << policy.label() << ',' << format_double(pa.value) << ','
             << format_double(pa.mc_se) << ',' << pa.method << '\n';
      }
      if (intf_out.empty()) {
        std::cout << rows.str();
      } else {
        open_or_die(intf_out) << rows.str();
      }
      return 0;
    }

    if (*st) {
      RunConfig cfg = st_config.empty() ? RunConfig{} : parse_config(st_config);
      const PanelDataset panel = read_panel_csv(st_data);
      const ChainSettings cs = settings_from(cfg);
      Lattice lattice;
      const bool have_lat = !st_lattice.empty();
      if (have_lat) lattice = read_adjacency_file(st_lattice);
      std::ostringstream rows;
      if (st_method == "janes") {
        const JanesFit jf = janes_test(panel, default_janes_df(panel.n_times), cs);
        rows << "param,point,lo95,hi95\n";
        rows << "eta1," << format_double(jf.eta1.mean) << ',' << format_double(jf.eta1.lo95)
             << ',' << format_double(jf.eta1.hi95) << '\n';
        rows << "eta2," << format_double(jf.eta2.mean) << ',' << format_double(jf.eta2.lo95)
             << ',' << format_double(jf.eta2.hi95) << '\n';
        rows << "eta1-eta2," << format_double(jf.diff.mean) << ',' << format_double(jf.diff.lo95)
             << ',' << format_double(jf.diff.hi95) << '\n';
      } else if (st_method == "did") {
        const DidFit df = fit_did(panel, st_spill, have_lat ? &lattice : nullptr, cs);
        rows << "param,point,lo95,hi95\n";
        const auto put = [&](const char* nm, const ParamSummary& s) {
          rows << nm << ',' << format_double(s.mean) << ',' << format_double(s.lo95) << ','
               << format_double(s.hi95) << '\n';
        };
        if (df.beta1) put("beta1", *df.beta1);
        put("beta2", df.beta2);
        put("beta3", df.beta3);
        if (df.beta4) put("beta4", *df.beta4);
        if (df.beta5) put("beta5", *df.beta5);
      } else if (st_method == "granger") {
        if (!have_lat) throw std::runtime_error("granger needs --lattice");
        const GrangerFit gf = fit_granger(panel, st_lags, st_spill, lattice, cs);
        rows << "param,point,lo95,hi95\n";
        for (int l = 0; l < gf.lags; ++l)
          rows << "beta" << (l + 1) << ',' << format_double(gf.beta[l].mean) << ','
               << format_double(gf.beta[l].lo95) << ',' << format_double(gf.beta[l].hi95) << '\n';
        rows << "granger_detected," << (gf.any_lag_excludes_zero ? 1 : 0) << ",,\n";
      } else {
        throw std::runtime_error("unknown method '" + st_method + "'");
      }
      if (st_out.empty()) {
        std::cout << rows.str();
      } else {
        open_or_die(st_out) << rows.str();
      }
      return 0;
    }

    if (*geo) {
      RunConfig cfg = geo_config.empty() ? RunConfig{} : parse_config(geo_config);
      const PointDataset data = read_point_csv(geo_data);
      const ChainSettings cs = settings_from(cfg);
      std::ostringstream rows;
      if (geo_method == "krige") {
        const Grid grid = Grid::cover(data.coords, geo_nx, geo_ny);
        const GpParams gp = estimate_gp_params(data.coords, data.a);
        const Eigen::VectorXd field = krige_impute(data.coords, data.a, gp, grid);
        rows << "s1,s2,value\n";
        for (int k = 0; k < grid.n_nodes(); ++k) {
          const auto node = grid.node(k);
          rows << format_double(node(0)) << ',' << format_double(node(1)) << ','
               << format_double(field(k)) << '\n';
        }
      } else if (geo_method == "dapsm") {
        std::vector<int> tr, ct;
        for (int i = 0; i < data.n(); ++i) (data.a(i) > 0.5 ? tr : ct).push_back(i);
        Eigen::VectorXd ts(tr.size()), csc(ct.size());
        Eigen::MatrixX2d tc(tr.size(), 2), cc(ct.size(), 2);
        if (data.x.cols() < 2)
          throw std::runtime_error("dapsm expects propensity scores in column x1");
        for (std::size_t i = 0; i < tr.size(); ++i) {
          ts(i) = data.x(tr[i], 1);
          tc.row(i) = data.coords.row(tr[i]);
        }
        for (std::size_t i = 0; i < ct.size(); ++i) {
          csc(i) = data.x(ct[i], 1);
          cc.row(i) = data.coords.row(ct[i]);
        }
        const MatchSet ms = dapsm_match(ts, tc, csc, cc, geo_w);
        rows << "treated,control,distance\n";
        for (const auto& p : ms.pairs)
          rows << tr[p.treated] << ',' << ct[p.control] << ',' << format_double(p.distance)
               << '\n';
      } else if (geo_method == "rd") {
        const double b = geo_boundary;
        const FitResult fr = fit_discontinuity(
            data, [b](double s1, double) { return s1 > b; }, cs, geo_band);
        rows << "dataset_id,estimator,point,lo95,hi95,flags\n" << fr.estimate.csv_row("0") << '\n';
      } else if (geo_method == "interference") {
        const Grid grid = Grid::cover(data.coords, geo_nx, geo_ny);
        const GeostatInterferenceFit f =
            fit_geostat_interference(data, parse_kernel(geo_kernel), grid, cs, geo_imputations);
        rows << "dataset_id,estimator,point,lo95,hi95,flags\n";
        rows << f.direct.csv_row("0") << '\n' << f.indirect.csv_row("0") << '\n';
      } else {
        throw std::runtime_error("unknown method '" + geo_method + "'");
      }
      if (geo_out.empty()) {
        std::cout << rows.str();
      } else {
        open_or_die(geo_out) << rows.str();
      }
      return 0;
    }
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
