#pragma once

#include <utility>
#include <vector>

#include "rapidmix/errors.hpp"

namespace rapidmix {

enum class GraphKind { chain, bary_tree, grid2d, custom };

// Finite interaction graph with a fixed local dimension on every site.
// Vertex ordering is deterministic per kind: chain left to right, tree
// breadth-first from the root, grid row-major.
struct SpinGraph {
  GraphKind kind = GraphKind::custom;
  int local_dim = 2;
  std::vector<std::pair<int, int>> edges;  // normalized a < b, sorted
  std::vector<std::vector<int>> adj;

  // generator parameters; which ones are meaningful depends on kind
  int chain_n = 0;
  int tree_b = 0;
  int tree_height = 0;
  int grid_w = 0;
  int grid_h = 0;

  int num_vertices() const { return static_cast<int>(adj.size()); }
  int num_edges() const { return static_cast<int>(edges.size()); }
  int degree(int v) const { return static_cast<int>(adj.at(v).size()); }
  int max_degree() const;
  bool has_edge(int a, int b) const;
};

SpinGraph build_chain(int n, int local_dim = 2);
SpinGraph build_bary_tree(int b, int height, int local_dim = 2);
SpinGraph build_grid2d(int w, int h, int local_dim = 2);
SpinGraph build_custom(int n, std::vector<std::pair<int, int>> edge_list, int local_dim = 2);

// Sorted, deduplicated vertex subset, validated against its graph at
// construction. Every operation re-receives the graph explicitly.
struct Region {
  std::vector<int> vertices;

  Region() = default;
  Region(const SpinGraph& g, std::vector<int> verts);

  bool empty() const { return vertices.empty(); }
  int size() const { return static_cast<int>(vertices.size()); }
  bool contains(int v) const;
};

Region full_region(const SpinGraph& g);
Region region_union(const Region& a, const Region& b);
Region region_intersection(const Region& a, const Region& b);
Region region_difference(const Region& a, const Region& b);
bool region_equal(const Region& a, const Region& b);

// Bipartition labels, one per vertex, adjacent vertices differing.
struct Coloring {
  std::vector<int> labels;
};

// BFS distances from a source set; unreachable = num_vertices() (graphs are
// connected, so this only shows up for empty sources).
std::vector<int> bfs_distances(const SpinGraph& g, const std::vector<int>& sources);

int distance(const SpinGraph& g, const Region& a, const Region& b);

// Exterior boundary at interaction range r: {x not in A : dist(x, A) < r}.
Region boundary(const SpinGraph& g, const Region& a, int r = 2);

// A together with its boundary.
Region closure(const SpinGraph& g, const Region& a, int r = 2);

Coloring two_coloring(const SpinGraph& g);

// True if distances measured inside A agree with graph distances for all
// pairs in A (exact convexity on chains and trees, where geodesics are
// unique).
bool is_convex(const SpinGraph& g, const Region& a);

// Number of connected edge subsets of size m that contain the given edge.
long connected_subset_count(const SpinGraph& g, std::pair<int, int> e, int m);

// One region per label-0 vertex; each region's boundary avoids the label-0
// sublattice. Chains use symmetric radius-l0 intervals, trees the height-l0
// subtree below each label-0 vertex, grids graph balls with the radius
// rounded down to even (the jagged-square reconstruction).
std::vector<Region> coarse_grain_sets(const SpinGraph& g, const Coloring& coloring, int l0);

// Maximum number of closures R_k u boundary(R_k) any single vertex lies in.
int cover_multiplicity(const SpinGraph& g, const std::vector<Region>& sets, int r = 2);

enum class CoveringCase { case1, case2 };

struct CoveringPair {
  Region c;
  Region d;
};

// Overlapping pairs (C_i, D_i) covering the target with a fixed separation l
// between C_i \ D_i and D_i \ C_i, overlaps pairwise disjoint across i.
struct CoveringSchedule {
  std::vector<CoveringPair> pairs;
  int overlap = 0;
  CoveringCase tag = CoveringCase::case1;
};

CoveringSchedule covering_schedule(const SpinGraph& g, const Region& target,
                                   CoveringCase schedule_case, int n_div = 2);

// Machine-check of the schedule invariants; throws numeric_error on failure.
void validate_schedule(const SpinGraph& g, const CoveringSchedule& s, const Region& target);

}  // namespace rapidmix
