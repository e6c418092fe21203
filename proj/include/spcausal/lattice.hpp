#pragma once

#include <string>
#include <vector>

namespace spcausal {

// Region adjacency structure. Regions are zero-based and, for grids,
// indexed row-major. Every region must have at least one neighbor.
struct Lattice {
  int n_regions = 0;
  std::vector<std::vector<int>> neighbors;  // sorted neighbor lists
  std::vector<int> m;                       // neighbor counts m_i

  bool adjacent(int i, int k) const;

  // throws std::invalid_argument on asymmetry, self-neighbors or isolated regions
  void validate() const;
};

// Rook adjacency on an nrows x ncols grid, row-major indexing.
// A 1x1 grid is rejected (its single region would have no neighbors).
Lattice build_rook_grid(int nrows, int ncols);

// Disjoint union of `copies` copies of the base lattice (block-diagonal
// adjacency). Region (c, i) maps to index c * base.n_regions + i.
Lattice replicate_lattice(const Lattice& base, int copies);

// Adjacency-list text format: one line per region, "region_id: k1 k2 ...".
std::string write_adjacency(const Lattice& lattice);
Lattice read_adjacency(const std::string& text);
Lattice read_adjacency_file(const std::string& path);
void write_adjacency_file(const Lattice& lattice, const std::string& path);

}  // namespace spcausal
