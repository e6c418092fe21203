#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "spcausal/lattice.hpp"

namespace spcausal {

// parse/validation failure carrying the offending position (1-based row, column name)
struct ParseError : std::runtime_error {
  ParseError(std::string msg, int row = 0, std::string column = "")
      : std::runtime_error(std::move(msg)), row(row), column(std::move(column)) {}
  int row;
  std::string column;
};

// Areal observations: one row per observation j in region i. X carries a
// leading intercept column of ones; CSV covariates x1..xp fill columns 1..p.
struct ArealDataset {
  std::vector<int> region;
  std::vector<int> rep;  // replicate index per row (0 when absent)
  Eigen::VectorXd y;
  Eigen::VectorXd a;
  Eigen::MatrixXd x;
  int n_regions = 0;  // 1 + max region id seen

  int n() const { return static_cast<int>(region.size()); }
  bool binary_treatment() const;
  void validate(const Lattice* lattice = nullptr) const;
};

struct PanelDataset {
  std::vector<int> region;
  std::vector<int> t;  // 1..T, contiguous
  Eigen::VectorXd y;
  Eigen::VectorXd a;
  Eigen::MatrixXd x;  // leading intercept column
  int n_regions = 0;
  int n_times = 0;

  int n() const { return static_cast<int>(region.size()); }
  void validate() const;
};

struct PointDataset {
  Eigen::MatrixX2d coords;  // s1, s2
  Eigen::VectorXd y;
  Eigen::VectorXd a;
  Eigen::MatrixXd x;  // leading intercept column
  int n() const { return static_cast<int>(coords.rows()); }
  void validate() const;
};

enum class TreatmentKind { Auto, Binary, Continuous };

ArealDataset read_areal_csv(const std::string& path, TreatmentKind kind = TreatmentKind::Auto);
PanelDataset read_panel_csv(const std::string& path, TreatmentKind kind = TreatmentKind::Auto);
PointDataset read_point_csv(const std::string& path, TreatmentKind kind = TreatmentKind::Auto);

void write_areal_csv(const ArealDataset& d, const std::string& path);
void write_panel_csv(const PanelDataset& d, const std::string& path);
void write_point_csv(const PointDataset& d, const std::string& path);

// shortest decimal representation that round-trips to the same double
std::string format_double(double v);

// Run configuration: line-oriented `key=value`, '#' comments. Defaults:
// iterations=5000 burnin=1000 thin=1 seed=1 scenario=a grid=20x20 datasets=20.
struct RunConfig {
  std::string scenario = "a";
  int grid_rows = 20;
  int grid_cols = 20;
  int n_datasets = 20;
  int iterations = 5000;
  int burnin = 1000;
  int thin = 1;
  std::uint64_t seed = 1;
  double beta = 0.5;
  double phi = 0.5;
  std::vector<std::string> estimators;  // empty means the 2.8 default bank
  std::string out_path;
  bool parallel = true;
  bool write_traces = false;

  void validate() const;
};

RunConfig parse_config(const std::string& path);
RunConfig parse_config_text(const std::string& text);

}  // namespace spcausal
