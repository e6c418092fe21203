#include "spcausal/lattice.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace spcausal {

bool Lattice::adjacent(int i, int k) const {
  const auto& ni = neighbors[i];
  return std::binary_search(ni.begin(), ni.end(), k);
}

void Lattice::validate() const {
  if (n_regions < 2) throw std::invalid_argument("lattice needs at least 2 regions");
  if (static_cast<int>(neighbors.size()) != n_regions || static_cast<int>(m.size()) != n_regions)
    throw std::invalid_argument("lattice: neighbor list size mismatch");
  for (int i = 0; i < n_regions; ++i) {
    if (neighbors[i].empty())
      throw std::invalid_argument("lattice: region " + std::to_string(i) + " has no neighbors");
    if (m[i] != static_cast<int>(neighbors[i].size()))
      throw std::invalid_argument("lattice: m[" + std::to_string(i) + "] inconsistent");
    int prev = -1;
    for (int k : neighbors[i]) {
      if (k < 0 || k >= n_regions)
        throw std::invalid_argument("lattice: neighbor index out of range at region " +
                                    std::to_string(i));
      if (k == i)
        throw std::invalid_argument("lattice: region " + std::to_string(i) + " neighbors itself");
      if (k <= prev)
        throw std::invalid_argument("lattice: neighbor list of region " + std::to_string(i) +
                                    " not sorted/unique");
      prev = k;
      if (!adjacent(k, i))
        throw std::invalid_argument("lattice: asymmetric adjacency between " + std::to_string(i) +
                                    " and " + std::to_string(k));
    }
  }
}

Lattice build_rook_grid(int nrows, int ncols) {
  if (nrows < 1 || ncols < 1) throw std::invalid_argument("grid dimensions must be >= 1");
  if (nrows * ncols < 2)
    throw std::invalid_argument("1x1 grid rejected: single region has no neighbors");
  Lattice lat;
  lat.n_regions = nrows * ncols;
  lat.neighbors.resize(lat.n_regions);
  lat.m.resize(lat.n_regions);
  for (int r = 0; r < nrows; ++r) {
    for (int c = 0; c < ncols; ++c) {
      const int i = r * ncols + c;
      auto& nb = lat.neighbors[i];
      if (r > 0) nb.push_back((r - 1) * ncols + c);
      if (c > 0) nb.push_back(i - 1);
      if (c + 1 < ncols) nb.push_back(i + 1);
      if (r + 1 < nrows) nb.push_back((r + 1) * ncols + c);
      std::sort(nb.begin(), nb.end());
      lat.m[i] = static_cast<int>(nb.size());
    }
  }
  lat.validate();
  return lat;
}

Lattice replicate_lattice(const Lattice& base, int copies) {
  if (copies < 1) throw std::invalid_argument("replicate_lattice: copies must be >= 1");
  Lattice lat;
  lat.n_regions = base.n_regions * copies;
  lat.neighbors.resize(lat.n_regions);
  lat.m.resize(lat.n_regions);
  for (int c = 0; c < copies; ++c) {
    const int off = c * base.n_regions;
    for (int i = 0; i < base.n_regions; ++i) {
      auto& nb = lat.neighbors[off + i];
      nb.reserve(base.neighbors[i].size());
      for (int k : base.neighbors[i]) nb.push_back(off + k);
      lat.m[off + i] = base.m[i];
    }
  }
  return lat;
}

std::string write_adjacency(const Lattice& lattice) {
  std::ostringstream out;
  for (int i = 0; i < lattice.n_regions; ++i) {
    out << i << ':';
    for (int k : lattice.neighbors[i]) out << ' ' << k;
    out << '\n';
  }
  return out.str();
}

Lattice read_adjacency(const std::string& text) {
  Lattice lat;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("adjacency line " + std::to_string(lineno) + ": missing ':'");
    int id = 0;
    try {
      id = std::stoi(line.substr(0, colon));
    } catch (const std::exception&) {
      throw std::invalid_argument("adjacency line " + std::to_string(lineno) + ": bad region id");
    }
    if (id != static_cast<int>(lat.neighbors.size()))
      throw std::invalid_argument("adjacency line " + std::to_string(lineno) +
                                  ": region ids must be consecutive from 0");
    std::istringstream rest(line.substr(colon + 1));
    std::vector<int> nb;
    int k = 0;
    while (rest >> k) nb.push_back(k);
    std::sort(nb.begin(), nb.end());
    lat.neighbors.push_back(std::move(nb));
  }
  lat.n_regions = static_cast<int>(lat.neighbors.size());
  lat.m.resize(lat.n_regions);
  for (int i = 0; i < lat.n_regions; ++i) lat.m[i] = static_cast<int>(lat.neighbors[i].size());
  lat.validate();
  return lat;
}

Lattice read_adjacency_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open lattice file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return read_adjacency(ss.str());
}

void write_adjacency_file(const Lattice& lattice, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write lattice file: " + path);
  out << write_adjacency(lattice);
}

}  // namespace spcausal
