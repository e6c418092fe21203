#include "spcausal/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace spcausal {

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

double parse_num(const std::string& cell, int row, const std::string& col) {
  const std::string t = trim(cell);
  if (t.empty()) throw ParseError("row " + std::to_string(row) + ", column '" + col +
                                      "': empty cell (missing values are not allowed)",
                                  row, col);
  double v = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError("row " + std::to_string(row) + ", column '" + col + "': non-numeric value '" +
                         t + "'",
                     row, col);
  return v;
}

int parse_int(const std::string& cell, int row, const std::string& col) {
  const double v = parse_num(cell, row, col);
  if (v != std::floor(v))
    throw ParseError("row " + std::to_string(row) + ", column '" + col +
                         "': expected integer, got '" + trim(cell) + "'",
                     row, col);
  return static_cast<int>(v);
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int col(const std::string& name) const {
    auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  }
};

CsvTable read_table(const std::string& path) {
  const std::string text = slurp(path);
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file: " + path);
  t.header = split(line, ',');
  for (auto& h : t.header) h = trim(h);
  int width = static_cast<int>(t.header.size());
  int rowno = 1;
  while (std::getline(in, line)) {
    ++rowno;
    if (trim(line).empty()) continue;
    auto cells = split(line, ',');
    if (static_cast<int>(cells.size()) != width)
      throw ParseError("row " + std::to_string(rowno) + ": expected " + std::to_string(width) +
                           " cells, found " + std::to_string(cells.size()),
                       rowno);
    t.rows.push_back(std::move(cells));
  }
  return t;
}

// x1..xp column indices in numeric order; contiguous numbering enforced
std::vector<int> covariate_cols(const CsvTable& t) {
  std::map<int, int> byidx;
  for (int c = 0; c < static_cast<int>(t.header.size()); ++c) {
    const std::string& h = t.header[c];
    if (h.size() >= 2 && h[0] == 'x') {
      bool digits = true;
      for (std::size_t i = 1; i < h.size(); ++i) digits = digits && std::isdigit(h[i]);
      if (digits) byidx[std::stoi(h.substr(1))] = c;
    }
  }
  std::vector<int> cols;
  int expect = 1;
  for (auto [k, c] : byidx) {
    if (k != expect)
      throw ParseError("covariate columns must be numbered x1..xp without gaps; missing x" +
                       std::to_string(expect));
    ++expect;
    cols.push_back(c);
  }
  return cols;
}

void require(const CsvTable& t, const std::string& name) {
  if (t.col(name) < 0) throw ParseError("missing required column '" + name + "'", 1, name);
}

void check_binary(const Eigen::VectorXd& a, TreatmentKind kind, const CsvTable& t) {
  if (kind != TreatmentKind::Binary) return;
  const int acol = t.col("a");
  for (int i = 0; i < a.size(); ++i)
    if (a(i) != 0.0 && a(i) != 1.0)
      throw ParseError("row " + std::to_string(i + 2) +
                           ", column 'a': value " + format_double(a(i)) +
                           " invalid under a binary treatment (must be 0 or 1)",
                       i + 2, t.header[acol]);
}

Eigen::MatrixXd build_x(const CsvTable& t, const std::vector<int>& xcols) {
  const int n = static_cast<int>(t.rows.size());
  Eigen::MatrixXd x(n, 1 + static_cast<int>(xcols.size()));
  x.col(0).setOnes();
  for (int r = 0; r < n; ++r)
    for (std::size_t j = 0; j < xcols.size(); ++j)
      x(r, 1 + static_cast<int>(j)) = parse_num(t.rows[r][xcols[j]], r + 2, t.header[xcols[j]]);
  return x;
}

}  // namespace

bool ArealDataset::binary_treatment() const {
  for (int i = 0; i < a.size(); ++i)
    if (a(i) != 0.0 && a(i) != 1.0) return false;
  return true;
}

void ArealDataset::validate(const Lattice* lattice) const {
  const int nn = n();
  if (nn == 0) throw ParseError("areal dataset has no rows");
  if (y.size() != nn || a.size() != nn || x.rows() != nn)
    throw ParseError("areal dataset: column length mismatch");
  for (int i = 0; i < nn; ++i) {
    if (region[i] < 0) throw ParseError("row " + std::to_string(i + 2) + ": negative region id",
                                        i + 2, "region");
    if (lattice && region[i] >= lattice->n_regions)
      throw ParseError("row " + std::to_string(i + 2) + ": region id " +
                           std::to_string(region[i]) + " not on the lattice (N=" +
                           std::to_string(lattice->n_regions) + ")",
                       i + 2, "region");
  }
}

void PanelDataset::validate() const {
  const int nn = n();
  if (nn == 0) throw ParseError("panel dataset has no rows");
  std::set<std::pair<int, int>> seen;
  std::set<int> times;
  for (int i = 0; i < nn; ++i) {
    if (!seen.insert({region[i], t[i]}).second)
      throw ParseError("row " + std::to_string(i + 2) + ": duplicate (region,t) pair (" +
                           std::to_string(region[i]) + "," + std::to_string(t[i]) + ")",
                       i + 2, "t");
    times.insert(t[i]);
  }
  int expect = 1;
  for (int tv : times) {
    if (tv != expect)
      throw ParseError("time steps must be contiguous from 1; missing t=" +
                       std::to_string(expect));
    ++expect;
  }
}

void PointDataset::validate() const {
  for (int i = 0; i < n(); ++i)
    if (!std::isfinite(coords(i, 0)) || !std::isfinite(coords(i, 1)))
      throw ParseError("row " + std::to_string(i + 2) + ": non-finite coordinate", i + 2, "s1");
}

ArealDataset read_areal_csv(const std::string& path, TreatmentKind kind) {
  const CsvTable t = read_table(path);
  require(t, "region");
  require(t, "y");
  require(t, "a");
  const int creg = t.col("region"), cy = t.col("y"), ca = t.col("a"), crep = t.col("rep");
  const auto xcols = covariate_cols(t);
  ArealDataset d;
  const int n = static_cast<int>(t.rows.size());
  d.region.resize(n);
  d.rep.resize(n, 0);
  d.y.resize(n);
  d.a.resize(n);
  for (int r = 0; r < n; ++r) {
    d.region[r] = parse_int(t.rows[r][creg], r + 2, "region");
    if (crep >= 0) d.rep[r] = parse_int(t.rows[r][crep], r + 2, "rep");
    d.y(r) = parse_num(t.rows[r][cy], r + 2, "y");
    d.a(r) = parse_num(t.rows[r][ca], r + 2, "a");
  }
  d.x = build_x(t, xcols);
  d.n_regions = n ? *std::max_element(d.region.begin(), d.region.end()) + 1 : 0;
  check_binary(d.a, kind, t);
  d.validate();
  return d;
}

PanelDataset read_panel_csv(const std::string& path, TreatmentKind kind) {
  const CsvTable tab = read_table(path);
  require(tab, "region");
  require(tab, "t");
  require(tab, "y");
  require(tab, "a");
  const int creg = tab.col("region"), ct = tab.col("t"), cy = tab.col("y"), ca = tab.col("a");
  const auto xcols = covariate_cols(tab);
  PanelDataset d;
  const int n = static_cast<int>(tab.rows.size());
  d.region.resize(n);
  d.t.resize(n);
  d.y.resize(n);
  d.a.resize(n);
  for (int r = 0; r < n; ++r) {
    d.region[r] = parse_int(tab.rows[r][creg], r + 2, "region");
    d.t[r] = parse_int(tab.rows[r][ct], r + 2, "t");
    d.y(r) = parse_num(tab.rows[r][cy], r + 2, "y");
    d.a(r) = parse_num(tab.rows[r][ca], r + 2, "a");
  }
  d.x = build_x(tab, xcols);
  d.n_regions = n ? *std::max_element(d.region.begin(), d.region.end()) + 1 : 0;
  d.n_times = n ? *std::max_element(d.t.begin(), d.t.end()) : 0;
  check_binary(d.a, kind, tab);
  d.validate();
  return d;
}

PointDataset read_point_csv(const std::string& path, TreatmentKind kind) {
  const CsvTable t = read_table(path);
  require(t, "s1");
  require(t, "s2");
  require(t, "y");
  require(t, "a");
  const int cs1 = t.col("s1"), cs2 = t.col("s2"), cy = t.col("y"), ca = t.col("a");
  const auto xcols = covariate_cols(t);
  PointDataset d;
  const int n = static_cast<int>(t.rows.size());
  d.coords.resize(n, 2);
  d.y.resize(n);
  d.a.resize(n);
  for (int r = 0; r < n; ++r) {
    d.coords(r, 0) = parse_num(t.rows[r][cs1], r + 2, "s1");
    d.coords(r, 1) = parse_num(t.rows[r][cs2], r + 2, "s2");
    d.y(r) = parse_num(t.rows[r][cy], r + 2, "y");
    d.a(r) = parse_num(t.rows[r][ca], r + 2, "a");
  }
  d.x = build_x(t, xcols);
  check_binary(d.a, kind, t);
  d.validate();
  return d;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

namespace {

void write_rows(std::ostream& out, const std::vector<std::vector<std::string>>& cols,
                const std::vector<std::string>& names) {
  for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << names[c];
  out << '\n';
  const std::size_t n = cols.empty() ? 0 : cols[0].size();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c][r];
    out << '\n';
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  return out;
}

std::vector<std::string> num_col(const Eigen::VectorXd& v) {
  std::vector<std::string> c(v.size());
  for (int i = 0; i < v.size(); ++i) c[i] = format_double(v(i));
  return c;
}

std::vector<std::string> int_col(const std::vector<int>& v) {
  std::vector<std::string> c(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) c[i] = std::to_string(v[i]);
  return c;
}

}  // namespace

void write_areal_csv(const ArealDataset& d, const std::string& path) {
  auto out = open_out(path);
  std::vector<std::string> names = {"region"};
  std::vector<std::vector<std::string>> cols = {int_col(d.region)};
  const bool has_rep = std::any_of(d.rep.begin(), d.rep.end(), [](int r) { return r != 0; });
  if (has_rep) {
    names.push_back("rep");
    cols.push_back(int_col(d.rep));
  }
  names.push_back("y");
  cols.push_back(num_col(d.y));
  names.push_back("a");
  cols.push_back(num_col(d.a));
  for (int j = 1; j < d.x.cols(); ++j) {
    names.push_back("x" + std::to_string(j));
    cols.push_back(num_col(d.x.col(j)));
  }
  write_rows(out, cols, names);
}

void write_panel_csv(const PanelDataset& d, const std::string& path) {
  auto out = open_out(path);
  std::vector<std::string> names = {"region", "t", "y", "a"};
  std::vector<std::vector<std::string>> cols = {int_col(d.region), int_col(d.t), num_col(d.y),
                                                num_col(d.a)};
  for (int j = 1; j < d.x.cols(); ++j) {
    names.push_back("x" + std::to_string(j));
    cols.push_back(num_col(d.x.col(j)));
  }
  write_rows(out, cols, names);
}

void write_point_csv(const PointDataset& d, const std::string& path) {
  auto out = open_out(path);
  std::vector<std::string> names = {"s1", "s2", "y", "a"};
  std::vector<std::vector<std::string>> cols = {num_col(d.coords.col(0)), num_col(d.coords.col(1)),
                                                num_col(d.y), num_col(d.a)};
  for (int j = 1; j < d.x.cols(); ++j) {
    names.push_back("x" + std::to_string(j));
    cols.push_back(num_col(d.x.col(j)));
  }
  write_rows(out, cols, names);
}

void RunConfig::validate() const {
  if (burnin < 0) throw ParseError("config: burnin must be >= 0");
  if (iterations <= burnin)
    throw ParseError("config: iterations (" + std::to_string(iterations) +
                     ") must exceed burnin (" + std::to_string(burnin) + ")");
  if (thin < 1) throw ParseError("config: thin must be >= 1");
  if (n_datasets < 1) throw ParseError("config: datasets must be >= 1");
  if (grid_rows < 1 || grid_cols < 1 || grid_rows * grid_cols < 2)
    throw ParseError("config: grid must have at least 2 regions");
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config line " + std::to_string(lineno) + ": expected key=value", lineno);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "scenario") {
        cfg.scenario = val;
      } else if (key == "grid") {
        const auto x = val.find('x');
        if (x == std::string::npos) throw std::invalid_argument("expected RxC");
        cfg.grid_rows = std::stoi(val.substr(0, x));
        cfg.grid_cols = std::stoi(val.substr(x + 1));
      } else if (key == "datasets") {
        cfg.n_datasets = std::stoi(val);
      } else if (key == "iters") {
        cfg.iterations = std::stoi(val);
      } else if (key == "burnin") {
        cfg.burnin = std::stoi(val);
      } else if (key == "thin") {
        cfg.thin = std::stoi(val);
      } else if (key == "seed") {
        cfg.seed = std::stoull(val);
      } else if (key == "beta") {
        cfg.beta = std::stod(val);
      } else if (key == "phi") {
        cfg.phi = std::stod(val);
      } else if (key == "estimators") {
        cfg.estimators.clear();
        for (auto& e : split(val, ',')) {
          const std::string name = trim(e);
          if (!name.empty()) cfg.estimators.push_back(name);
        }
      } else if (key == "out") {
        cfg.out_path = val;
      } else if (key == "parallel") {
        cfg.parallel = (val == "1" || val == "true" || val == "on");
      } else if (key == "traces") {
        cfg.write_traces = (val == "1" || val == "true" || val == "on");
      } else {
        throw ParseError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'",
                         lineno);
      }
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError("config line " + std::to_string(lineno) + ": malformed value for '" + key +
                           "': '" + val + "'",
                       lineno);
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig parse_config(const std::string& path) { return parse_config_text(slurp(path)); }

}  // namespace spcausal
