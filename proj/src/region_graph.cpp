#include "episteer/region_graph.hpp"

#include "episteer/panel.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace episteer {

Index RegionGraph::index_of(const std::string& v) const {
  auto it = std::find(vertices.begin(), vertices.end(), v);
  if (it == vertices.end()) throw ValidationError("unknown vertex '" + v + "'");
  return static_cast<Index>(it - vertices.begin());
}

RegionGraph build_region_graph(const std::vector<std::string>& vertices, const std::vector<Edge>& edges) {
  RegionGraph g;
  g.vertices = vertices;
  const Index n = g.size();
  require(n >= 2, "region graph needs at least two vertices");
  const Index nat = g.index_of(std::string(kNational));
  require(std::set<std::string>(vertices.begin(), vertices.end()).size() == vertices.size(),
          "duplicate vertex in region list");

  g.adjacency = Matrix::Zero(n, n);
  std::set<std::pair<Index, Index>> seen;
  for (const auto& [u, v] : edges) {
    if (u == kNational || v == kNational) {
      throw ValidationError("unknown vertex in edge '" + u + " " + v + "': national edges are implicit");
    }
    const Index a = g.index_of(u), b = g.index_of(v);
    if (a == b) throw ValidationError("self-loop on vertex " + u);
    if (!seen.insert({std::min(a, b), std::max(a, b)}).second) {
      throw ValidationError("duplicate edge " + u + " " + v);
    }
    g.adjacency(a, b) = g.adjacency(b, a) = 1.0;
    g.edges.push_back({u, v});
  }
  for (Index i = 0; i < n; ++i) {
    if (i == nat) continue;
    g.adjacency(nat, i) = g.adjacency(i, nat) = 1.0;
    g.edges.push_back({std::string(kNational), vertices[static_cast<std::size_t>(i)]});
  }
  g.degree = g.adjacency.rowwise().sum();
  const Vector inv_sqrt = g.degree.cwiseSqrt().cwiseInverse();
  g.laplacian = Matrix::Identity(n, n) - inv_sqrt.asDiagonal() * g.adjacency * inv_sqrt.asDiagonal();
  return g;
}

const std::vector<Edge>& default_hhs_edges() {
  static const std::vector<Edge> edges = {
      {"hhs1", "hhs2"}, {"hhs2", "hhs3"}, {"hhs3", "hhs4"}, {"hhs3", "hhs5"}, {"hhs4", "hhs5"}, {"hhs4", "hhs6"},
      {"hhs4", "hhs7"}, {"hhs5", "hhs7"}, {"hhs5", "hhs8"}, {"hhs6", "hhs7"}, {"hhs6", "hhs8"}, {"hhs6", "hhs9"},
      {"hhs7", "hhs8"}, {"hhs8", "hhs9"}, {"hhs8", "hhs10"}, {"hhs9", "hhs10"},
  };
  return edges;
}

std::vector<Edge> read_edge_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read edge list " + path.string());
  std::vector<Edge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string u, v, extra;
    if (!(ss >> u)) continue;
    if (!(ss >> v) || (ss >> extra)) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": expected 'u v'");
    }
    edges.emplace_back(u, v);
  }
  return edges;
}

void write_edge_list(const std::vector<Edge>& edges, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  for (const auto& [u, v] : edges) out << u << ' ' << v << '\n';
}

}  // namespace episteer
