#pragma once

#include "episteer/core.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace episteer {

using Edge = std::pair<std::string, std::string>;

// Undirected region graph. The national vertex is adjacent to every other
// region; other edges mark bordering regions.
struct RegionGraph {
  std::vector<std::string> vertices;
  std::vector<Edge> edges;
  Matrix adjacency;
  Vector degree;
  Matrix laplacian;  // I − D^{-1/2} A D^{-1/2}

  Index size() const { return static_cast<Index>(vertices.size()); }
  Index index_of(const std::string& v) const;
};

// `edges` may only reference non-national vertices; national edges are added
// here. Self-loops, duplicates and unknown names are rejected.
RegionGraph build_region_graph(const std::vector<std::string>& vertices, const std::vector<Edge>& edges);

// Border adjacency between the ten HHS regions.
const std::vector<Edge>& default_hhs_edges();

// One "u v" pair per line; blank lines and '#' comments are ignored.
std::vector<Edge> read_edge_list(const std::filesystem::path& path);
void write_edge_list(const std::vector<Edge>& edges, const std::filesystem::path& path);

// trace(Hᵀ L H) for H with one row per graph vertex.
template <typename DerivedH, typename DerivedL>
double laplacian_penalty(const Eigen::MatrixBase<DerivedH>& h, const Eigen::MatrixBase<DerivedL>& lap) {
  require(lap.rows() == lap.cols() && lap.rows() == h.rows(),
          "laplacian_penalty: H " + shape_str(h.rows(), h.cols()) + " vs L " + shape_str(lap.rows(), lap.cols()));
  return (h.transpose() * lap * h).trace();
}

}  // namespace episteer
