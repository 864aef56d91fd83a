#include "rapidmix/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>

#include <fmt/format.h>

namespace rapidmix {

int SpinGraph::max_degree() const {
  int m = 0;
  for (const auto& a : adj) m = std::max(m, static_cast<int>(a.size()));
  return m;
}

bool SpinGraph::has_edge(int a, int b) const {
  if (a > b) std::swap(a, b);
  return std::binary_search(edges.begin(), edges.end(), std::make_pair(a, b));
}

namespace {

SpinGraph finalize(SpinGraph g) {
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
  for (auto [a, b] : g.edges) {
    if (a == b) throw config_error(fmt::format("self-loop at vertex {}", a));
    if (a < 0 || b >= g.num_vertices()) {
      throw config_error(fmt::format("edge ({},{}) out of range", a, b));
    }
    g.adj[a].push_back(b);
    g.adj[b].push_back(a);
  }
  for (auto& a : g.adj) std::sort(a.begin(), a.end());
  // connectivity
  if (g.num_vertices() > 0) {
    std::vector<int> dist = bfs_distances(g, {0});
    for (int v = 0; v < g.num_vertices(); ++v) {
      if (dist[v] >= g.num_vertices() + 1) {
        throw config_error(fmt::format("graph is disconnected: vertex {} unreachable", v));
      }
    }
  }
  if (g.local_dim < 2) {
    throw config_error(fmt::format("local dimension must be >= 2, got {}", g.local_dim));
  }
  return g;
}

}  // namespace

SpinGraph build_chain(int n, int local_dim) {
  if (n < 1) throw config_error(fmt::format("chain length must be >= 1, got {}", n));
  SpinGraph g;
  g.kind = GraphKind::chain;
  g.local_dim = local_dim;
  g.chain_n = n;
  g.adj.resize(n);
  for (int i = 0; i + 1 < n; ++i) g.edges.push_back({i, i + 1});
  return finalize(std::move(g));
}

SpinGraph build_bary_tree(int b, int height, int local_dim) {
  if (b < 2) throw config_error(fmt::format("tree branching must be >= 2, got {}", b));
  if (height < 1) throw config_error(fmt::format("tree height must be >= 1, got {}", height));
  long n = 1, level = 1;
  for (int k = 0; k < height; ++k) {
    level *= b;
    n += level;
    if (n > 100000) throw resource_error("tree too large");
  }
  SpinGraph g;
  g.kind = GraphKind::bary_tree;
  g.local_dim = local_dim;
  g.tree_b = b;
  g.tree_height = height;
  g.adj.resize(n);
  // breadth-first labels: children of v are b*v+1 .. b*v+b
  for (long v = 0; v < n; ++v) {
    for (int j = 1; j <= b; ++j) {
      long c = b * v + j;
      if (c < n) g.edges.push_back({static_cast<int>(v), static_cast<int>(c)});
    }
  }
  return finalize(std::move(g));
}

SpinGraph build_grid2d(int w, int h, int local_dim) {
  if (w < 1 || h < 1) throw config_error(fmt::format("grid sides must be >= 1, got {}x{}", w, h));
  SpinGraph g;
  g.kind = GraphKind::grid2d;
  g.local_dim = local_dim;
  g.grid_w = w;
  g.grid_h = h;
  g.adj.resize(static_cast<std::size_t>(w) * h);
  auto id = [&](int r, int c) { return r * w + c; };
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      if (c + 1 < w) g.edges.push_back({id(r, c), id(r, c + 1)});
      if (r + 1 < h) g.edges.push_back({id(r, c), id(r + 1, c)});
    }
  }
  return finalize(std::move(g));
}

SpinGraph build_custom(int n, std::vector<std::pair<int, int>> edge_list, int local_dim) {
  if (n < 1) throw config_error(fmt::format("vertex count must be >= 1, got {}", n));
  SpinGraph g;
  g.kind = GraphKind::custom;
  g.local_dim = local_dim;
  g.adj.resize(n);
  for (auto& [a, b] : edge_list) {
    if (a > b) std::swap(a, b);
  }
  g.edges = std::move(edge_list);
  return finalize(std::move(g));
}

Region::Region(const SpinGraph& g, std::vector<int> verts) : vertices(std::move(verts)) {
  std::sort(vertices.begin(), vertices.end());
  vertices.erase(std::unique(vertices.begin(), vertices.end()), vertices.end());
  if (!vertices.empty() && (vertices.front() < 0 || vertices.back() >= g.num_vertices())) {
    throw argument_error(fmt::format(
        "region vertex out of range for a graph with {} vertices", g.num_vertices()));
  }
}

bool Region::contains(int v) const {
  return std::binary_search(vertices.begin(), vertices.end(), v);
}

Region full_region(const SpinGraph& g) {
  Region r;
  r.vertices.resize(g.num_vertices());
  for (int v = 0; v < g.num_vertices(); ++v) r.vertices[v] = v;
  return r;
}

Region region_union(const Region& a, const Region& b) {
  Region out;
  std::set_union(a.vertices.begin(), a.vertices.end(), b.vertices.begin(), b.vertices.end(),
                 std::back_inserter(out.vertices));
  return out;
}

Region region_intersection(const Region& a, const Region& b) {
  Region out;
  std::set_intersection(a.vertices.begin(), a.vertices.end(), b.vertices.begin(),
                        b.vertices.end(), std::back_inserter(out.vertices));
  return out;
}

Region region_difference(const Region& a, const Region& b) {
  Region out;
  std::set_difference(a.vertices.begin(), a.vertices.end(), b.vertices.begin(),
                      b.vertices.end(), std::back_inserter(out.vertices));
  return out;
}

bool region_equal(const Region& a, const Region& b) { return a.vertices == b.vertices; }

std::vector<int> bfs_distances(const SpinGraph& g, const std::vector<int>& sources) {
  const int unreachable = g.num_vertices() + 1;
  std::vector<int> dist(g.num_vertices(), unreachable);
  std::queue<int> q;
  for (int s : sources) {
    if (s < 0 || s >= g.num_vertices()) throw argument_error("source vertex out of range");
    dist[s] = 0;
    q.push(s);
  }
  while (!q.empty()) {
    int v = q.front();
    q.pop();
    for (int w : g.adj[v]) {
      if (dist[w] > dist[v] + 1) {
        dist[w] = dist[v] + 1;
        q.push(w);
      }
    }
  }
  return dist;
}

int distance(const SpinGraph& g, const Region& a, const Region& b) {
  if (a.empty() || b.empty()) throw argument_error("distance between empty regions is undefined");
  std::vector<int> dist = bfs_distances(g, a.vertices);
  int best = g.num_vertices() + 1;
  for (int v : b.vertices) best = std::min(best, dist[v]);
  return best;
}

Region boundary(const SpinGraph& g, const Region& a, int r) {
  if (r < 2) throw argument_error(fmt::format("interaction range r = {} must be >= 2", r));
  if (a.empty()) return Region{};
  std::vector<int> dist = bfs_distances(g, a.vertices);
  Region out;
  for (int v = 0; v < g.num_vertices(); ++v) {
    if (!a.contains(v) && dist[v] < r) out.vertices.push_back(v);
  }
  return out;
}

Region closure(const SpinGraph& g, const Region& a, int r) {
  return region_union(a, boundary(g, a, r));
}

Coloring two_coloring(const SpinGraph& g) {
  Coloring c;
  c.labels.assign(g.num_vertices(), -1);
  if (g.num_vertices() == 0) return c;
  std::queue<int> q;
  c.labels[0] = 0;
  q.push(0);
  while (!q.empty()) {
    int v = q.front();
    q.pop();
    for (int w : g.adj[v]) {
      if (c.labels[w] == -1) {
        c.labels[w] = 1 - c.labels[v];
        q.push(w);
      } else if (c.labels[w] == c.labels[v]) {
        throw geometry_error(
            fmt::format("graph is not 2-colorable: odd cycle through edge ({},{})", v, w));
      }
    }
  }
  return c;
}

namespace {

void check_coloring(const SpinGraph& g, const Coloring& c) {
  if (static_cast<int>(c.labels.size()) != g.num_vertices()) {
    throw argument_error("coloring size does not match graph");
  }
  for (int label : c.labels) {
    if (label != 0 && label != 1) throw argument_error("coloring labels must be 0 or 1");
  }
  for (auto [a, b] : g.edges) {
    if (c.labels[a] == c.labels[b]) {
      throw argument_error(fmt::format("coloring violates edge ({},{})", a, b));
    }
  }
}

}  // namespace

bool is_convex(const SpinGraph& g, const Region& a) {
  if (a.empty()) return true;
  // distances within the induced subgraph vs the full graph
  std::vector<int> pos(g.num_vertices(), -1);
  for (std::size_t i = 0; i < a.vertices.size(); ++i) pos[a.vertices[i]] = static_cast<int>(i);
  for (int src : a.vertices) {
    std::vector<int> din(g.num_vertices(), g.num_vertices() + 1);
    std::queue<int> q;
    din[src] = 0;
    q.push(src);
    while (!q.empty()) {
      int v = q.front();
      q.pop();
      for (int w : g.adj[v]) {
        if (pos[w] >= 0 && din[w] > din[v] + 1) {
          din[w] = din[v] + 1;
          q.push(w);
        }
      }
    }
    std::vector<int> dg = bfs_distances(g, {src});
    for (int v : a.vertices) {
      if (din[v] != dg[v]) return false;
    }
  }
  return true;
}

long connected_subset_count(const SpinGraph& g, std::pair<int, int> e, int m) {
  if (m < 1) throw argument_error(fmt::format("subset size m = {} must be >= 1", m));
  if (m > 8) {
    throw resource_error(fmt::format("subset size m = {} exceeds the enumeration cap 8", m));
  }
  if (e.first > e.second) std::swap(e.first, e.second);
  auto it = std::lower_bound(g.edges.begin(), g.edges.end(), e);
  if (it == g.edges.end() || *it != e) {
    throw argument_error(fmt::format("({},{}) is not an edge of the graph", e.first, e.second));
  }
  int e_idx = static_cast<int>(it - g.edges.begin());

  // adjacency between edges (shared endpoint)
  std::vector<std::vector<int>> edge_adj(g.edges.size());
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    for (std::size_t j = i + 1; j < g.edges.size(); ++j) {
      auto [a, b] = g.edges[i];
      auto [c, d] = g.edges[j];
      if (a == c || a == d || b == c || b == d) {
        edge_adj[i].push_back(static_cast<int>(j));
        edge_adj[j].push_back(static_cast<int>(i));
      }
    }
  }

  std::set<std::vector<int>> current = {{e_idx}};
  for (int size = 1; size < m; ++size) {
    std::set<std::vector<int>> next;
    for (const auto& cur : current) {
      for (int f : cur) {
        for (int n : edge_adj[f]) {
          if (std::binary_search(cur.begin(), cur.end(), n)) continue;
          std::vector<int> grown = cur;
          grown.insert(std::upper_bound(grown.begin(), grown.end(), n), n);
          next.insert(std::move(grown));
        }
      }
    }
    current = std::move(next);
  }
  return static_cast<long>(current.size());
}

std::vector<Region> coarse_grain_sets(const SpinGraph& g, const Coloring& coloring, int l0) {
  check_coloring(g, coloring);
  bool tree_like = g.kind == GraphKind::chain || g.kind == GraphKind::bary_tree;
  if (tree_like) {
    if (l0 < 2 || l0 % 2 != 0) {
      throw argument_error(fmt::format("radius l0 = {} must be even and >= 2", l0));
    }
  } else if (l0 < 1) {
    throw argument_error(fmt::format("radius l0 = {} must be >= 1", l0));
  }

  std::vector<Region> out;
  for (int x = 0; x < g.num_vertices(); ++x) {
    if (coloring.labels[x] != 0) continue;
    std::vector<int> members;
    if (g.kind == GraphKind::chain) {
      for (int v = std::max(0, x - l0); v <= std::min(g.num_vertices() - 1, x + l0); ++v) {
        members.push_back(v);
      }
    } else if (g.kind == GraphKind::bary_tree) {
      // subtree of height l0 below x  (children of v are b*v+1 .. b*v+b)
      std::vector<std::pair<int, int>> stack = {{x, 0}};
      while (!stack.empty()) {
        auto [v, depth] = stack.back();
        stack.pop_back();
        members.push_back(v);
        if (depth == l0) continue;
        for (int j = 1; j <= g.tree_b; ++j) {
          long c = static_cast<long>(g.tree_b) * v + j;
          if (c < g.num_vertices()) stack.push_back({static_cast<int>(c), depth + 1});
        }
      }
    } else {
      // jagged set: graph ball with radius rounded down to even
      int t = l0 - (l0 % 2);
      std::vector<int> dist = bfs_distances(g, {x});
      for (int v = 0; v < g.num_vertices(); ++v) {
        if (dist[v] <= t) members.push_back(v);
      }
    }
    out.emplace_back(g, std::move(members));
  }

  // the whole point of the construction: boundaries avoid the label-0 set
  for (const auto& r : out) {
    for (int v : boundary(g, r).vertices) {
      if (coloring.labels[v] == 0) {
        throw numeric_error(
            fmt::format("coarse region boundary touches label-0 vertex {}", v));
      }
    }
  }
  return out;
}

int cover_multiplicity(const SpinGraph& g, const std::vector<Region>& sets, int r) {
  std::vector<int> count(g.num_vertices(), 0);
  for (const auto& s : sets) {
    for (int v : closure(g, s, r).vertices) count[v] += 1;
  }
  int m = 0;
  for (int c : count) m = std::max(m, c);
  return m;
}

namespace {

// 1D coordinate per target vertex for the covering constructions; -1 outside.
struct AxisView {
  std::vector<int> coord;  // indexed by vertex
  int length = 0;          // number of edge-steps, i.e. max coordinate
};

AxisView axis_view(const SpinGraph& g, const Region& target) {
  AxisView view;
  view.coord.assign(g.num_vertices(), -1);
  if (target.empty()) throw argument_error("covering target must be nonempty");

  if (g.kind == GraphKind::chain) {
    int lo = target.vertices.front(), hi = target.vertices.back();
    if (target.size() != hi - lo + 1) {
      throw argument_error("covering target on a chain must be a contiguous interval");
    }
    for (int v : target.vertices) view.coord[v] = v - lo;
    view.length = hi - lo;
    return view;
  }
  if (g.kind == GraphKind::bary_tree) {
    // target must be the full subtree below its minimum vertex
    int root = target.vertices.front();
    std::vector<std::pair<int, int>> stack = {{root, 0}};
    std::size_t seen = 0;
    int height = 0;
    while (!stack.empty()) {
      auto [v, depth] = stack.back();
      stack.pop_back();
      if (!target.contains(v)) {
        throw argument_error("covering target on a tree must be a full subtree");
      }
      view.coord[v] = depth;
      height = std::max(height, depth);
      ++seen;
      for (int j = 1; j <= g.tree_b; ++j) {
        long c = static_cast<long>(g.tree_b) * v + j;
        if (c < g.num_vertices()) stack.push_back({static_cast<int>(c), depth + 1});
      }
    }
    if (seen != target.vertices.size()) {
      throw argument_error("covering target on a tree must be a full subtree");
    }
    view.length = height;
    return view;
  }
  if (g.kind == GraphKind::grid2d) {
    int rmin = g.grid_h, rmax = -1, cmin = g.grid_w, cmax = -1;
    for (int v : target.vertices) {
      int r = v / g.grid_w, c = v % g.grid_w;
      rmin = std::min(rmin, r);
      rmax = std::max(rmax, r);
      cmin = std::min(cmin, c);
      cmax = std::max(cmax, c);
    }
    if (target.size() != (rmax - rmin + 1) * (cmax - cmin + 1)) {
      throw argument_error("covering target on a grid must be a full sub-box");
    }
    bool along_cols = (cmax - cmin) >= (rmax - rmin);
    for (int v : target.vertices) {
      view.coord[v] = along_cols ? (v % g.grid_w - cmin) : (v / g.grid_w - rmin);
    }
    view.length = along_cols ? cmax - cmin : rmax - rmin;
    return view;
  }
  throw argument_error("covering schedules need a chain, tree, or grid target");
}

}  // namespace

CoveringSchedule covering_schedule(const SpinGraph& g, const Region& target,
                                   CoveringCase schedule_case, int n_div) {
  AxisView view = axis_view(g, target);
  int big_l = view.length;

  int l = 0, min_l = 0;
  if (schedule_case == CoveringCase::case1) {
    l = static_cast<int>(std::floor(std::sqrt(static_cast<double>(big_l))));
    min_l = 4;
  } else {
    if (n_div < 1) throw argument_error(fmt::format("divisor N = {} must be >= 1", n_div));
    l = big_l / n_div;
    min_l = 2 * n_div;
  }
  if (l < 2 || big_l < min_l) {
    throw schedule_error(
        fmt::format("target length {} admits no covering at this setting; need length >= {}",
                    big_l, min_l),
        min_l);
  }

  CoveringSchedule sched;
  sched.overlap = l;
  sched.tag = schedule_case;
  for (int s = 1; s + l - 1 <= big_l; s += l) {
    int e = s + l - 2;  // dist(C \ D, D \ C) = e - s + 2 = l
    std::vector<int> cm, dm;
    for (int v : target.vertices) {
      if (view.coord[v] <= e) cm.push_back(v);
      if (view.coord[v] >= s) dm.push_back(v);
    }
    sched.pairs.push_back({Region(g, std::move(cm)), Region(g, std::move(dm))});
  }
  if (schedule_case == CoveringCase::case2) {
    if (static_cast<int>(sched.pairs.size()) < n_div) {
      throw schedule_error(
          fmt::format("target length {} yields only {} partitions, need {}", big_l,
                      sched.pairs.size(), n_div),
          2 * n_div);
    }
    sched.pairs.resize(n_div);
  }
  validate_schedule(g, sched, target);
  return sched;
}

void validate_schedule(const SpinGraph& g, const CoveringSchedule& s, const Region& target) {
  std::vector<int> overlap_count(g.num_vertices(), 0);
  for (const auto& [c, d] : s.pairs) {
    if (!region_equal(region_union(c, d), target)) {
      throw numeric_error("covering pair does not cover the target");
    }
    Region c_only = region_difference(c, d);
    Region d_only = region_difference(d, c);
    if (c_only.empty() || d_only.empty() || region_intersection(c, d).empty()) {
      throw numeric_error("degenerate covering pair");
    }
    if (distance(g, c_only, d_only) != s.overlap) {
      throw numeric_error(fmt::format("covering pair separation {} differs from overlap {}",
                                      distance(g, c_only, d_only), s.overlap));
    }
    for (int v : region_intersection(c, d).vertices) overlap_count[v] += 1;
  }
  for (int v = 0; v < g.num_vertices(); ++v) {
    if (overlap_count[v] > 1) {
      throw numeric_error(fmt::format("overlaps are not pairwise disjoint at vertex {}", v));
    }
  }
}

}  // namespace rapidmix
