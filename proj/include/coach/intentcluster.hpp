#pragma once

// Intent mining: HDBSCAN over dialogue embeddings, then representative
// dialogue scripts per cluster.
//
// HDBSCAN stages:
//   core distance    distance to the min_samples-th nearest neighbour, the
//                    point itself counted as the first neighbour
//   mutual reach.    d_mr(a, b) = max(core_a, core_b, d(a, b))
//   spanning tree    Prim over d_mr, O(n^2) time, O(n) memory
//   hierarchy        edges of equal weight merge simultaneously, so a level
//                    can split into more than two parts
//   condensed tree   lambda = 1 / d_mr; parts smaller than min_cluster_size
//                    fall out of their parent as points
//   extraction       excess of mass; the root is only selected when it has
//                    no child clusters

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "coach/corpus.hpp"
#include "coach/error.hpp"
#include "coach/textenc/embedding.hpp"
#include "json.hpp"

namespace coach::intentcluster {

using Point = std::vector<double>;

struct ClusterParams {
  std::size_t min_cluster_size = 5;
  std::optional<std::size_t> min_samples;  // defaults to min_cluster_size

  std::size_t effective_min_samples() const { return min_samples.value_or(min_cluster_size); }

  void validate() const {
    if (min_cluster_size < 2) throw ConfigError("min_cluster_size must be >= 2");
    if (effective_min_samples() < 1) throw ConfigError("min_samples must be >= 1");
  }
};

// One row of the condensed tree: `child` left cluster `parent` at `lambda`.
// For a point row child is the point index and size is 1.
struct CondensedRow {
  std::size_t parent = 0;
  std::size_t child = 0;
  bool child_is_point = false;
  double lambda = 0.0;
  std::size_t size = 0;
};

struct ClusterResult {
  std::vector<int> labels;          // -1 = noise
  std::vector<double> stabilities;  // per output label
  std::vector<CondensedRow> condensed_tree;
  std::size_t cluster_count = 0;
};

struct MstEdge {
  std::size_t a = 0;
  std::size_t b = 0;
  double weight = 0.0;
};

// Distances below this are treated as this when converted to lambda.
inline constexpr double kMinDistance = 1e-12;

inline double euclidean(const Point& a, const Point& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline void check_points(const std::vector<Point>& points) {
  if (points.empty()) throw ContractViolation("hdbscan: no points");
  for (const auto& p : points)
    if (p.size() != points.front().size()) throw ContractViolation("hdbscan: mixed dimensions");
}

inline std::vector<double> core_distances(const std::vector<Point>& points, std::size_t min_samples) {
  check_points(points);
  const std::size_t n = points.size();
  const std::size_t kth = std::min(min_samples, n) - 1;
  std::vector<double> core(n);
  std::vector<double> row(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[j] = i == j ? 0.0 : euclidean(points[i], points[j]);
    std::nth_element(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(kth), row.end());
    core[i] = row[kth];
  }
  return core;
}

inline double mutual_reachability(const std::vector<Point>& points, const std::vector<double>& core, std::size_t a,
                                  std::size_t b) {
  return std::max({core[a], core[b], euclidean(points[a], points[b])});
}

// Prim over the implicit complete graph of mutual reachability distances.
inline std::vector<MstEdge> mst_prim(const std::vector<Point>& points, const std::vector<double>& core) {
  const std::size_t n = points.size();
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  edges.reserve(n - 1);
  std::vector<char> in_tree(n, 0);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::size_t current = 0;
  in_tree[0] = 1;
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    double next_w = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double w = mutual_reachability(points, core, current, j);
      if (w < best[j]) {
        best[j] = w;
        from[j] = current;
      }
      if (next == n || best[j] < next_w) {
        next_w = best[j];
        next = j;
      }
    }
    in_tree[next] = 1;
    edges.push_back({from[next], next, next_w});
    current = next;
  }
  return edges;
}

namespace detail {

struct DisjointSet {
  explicit DisjointSet(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  std::vector<std::size_t> parent;
};

// Hierarchy node: leaves are 0..n-1, internal nodes follow.
struct Node {
  std::vector<std::size_t> children;
  double distance = 0.0;
  std::size_t size = 1;
};

inline std::vector<Node> build_hierarchy(std::size_t n, std::vector<MstEdge> edges) {
  std::sort(edges.begin(), edges.end(), [](const MstEdge& x, const MstEdge& y) { return x.weight < y.weight; });
  std::vector<Node> nodes(n);
  DisjointSet dsu(n);
  std::vector<std::size_t> node_of(n);  // dsu root -> hierarchy node
  std::iota(node_of.begin(), node_of.end(), 0);
  std::size_t i = 0;
  while (i < edges.size()) {
    std::size_t j = i;
    while (j < edges.size() && edges[j].weight == edges[i].weight) ++j;
    const double w = edges[i].weight;
    // Components touched by this weight level, grouped by their merged root.
    std::vector<std::pair<std::size_t, std::size_t>> touched;  // (old root, old node)
    for (std::size_t e = i; e < j; ++e)
      for (auto v : {edges[e].a, edges[e].b}) {
        const auto r = dsu.find(v);
        touched.emplace_back(r, node_of[r]);
      }
    std::sort(touched.begin(), touched.end());
    touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
    for (std::size_t e = i; e < j; ++e) {
      const auto ra = dsu.find(edges[e].a);
      const auto rb = dsu.find(edges[e].b);
      if (ra != rb) dsu.parent[std::max(ra, rb)] = std::min(ra, rb);
    }
    std::map<std::size_t, std::vector<std::size_t>> groups;  // new root -> old nodes
    for (const auto& [old_root, old_node] : touched) groups[dsu.find(old_root)].push_back(old_node);
    for (auto& [root, kids] : groups) {
      Node node;
      node.distance = w;
      node.size = 0;
      for (auto k : kids) node.size += nodes[k].size;
      node.children = std::move(kids);
      node_of[root] = nodes.size();
      nodes.push_back(std::move(node));
    }
    i = j;
  }
  return nodes;
}

inline void collect_leaves(const std::vector<Node>& nodes, std::size_t node, std::size_t n, std::vector<std::size_t>& out) {
  std::vector<std::size_t> stack{node};
  while (!stack.empty()) {
    const auto x = stack.back();
    stack.pop_back();
    if (x < n)
      out.push_back(x);
    else
      for (auto c : nodes[x].children) stack.push_back(c);
  }
}

}  // namespace detail

inline double mst_weight(const std::vector<MstEdge>& edges) {
  double s = 0.0;
  for (const auto& e : edges) s += e.weight;
  return s;
}

inline ClusterResult hdbscan(const std::vector<Point>& points, const ClusterParams& params) {
  params.validate();
  check_points(points);
  const std::size_t n = points.size();
  const std::size_t mcs = params.min_cluster_size;
  ClusterResult result;
  result.labels.assign(n, -1);
  if (n < mcs) return result;

  const auto core = core_distances(points, params.effective_min_samples());
  const auto nodes = detail::build_hierarchy(n, mst_prim(points, core));
  const std::size_t root = nodes.size() - 1;

  // Condense top-down. Internal cluster 0 is the root.
  std::vector<double> birth{0.0};
  std::vector<std::size_t> cluster_parent{0};
  std::vector<std::vector<std::size_t>> cluster_children(1);
  std::vector<std::pair<std::size_t, std::size_t>> work{{root, 0}};  // (node, cluster)
  while (!work.empty()) {
    const auto [node, cluster] = work.back();
    work.pop_back();
    if (node < n) {
      // A lone leaf still attached to a cluster: it never falls out, so it
      // leaves at the largest lambda (distance zero).
      result.condensed_tree.push_back({cluster, node, true, 1.0 / kMinDistance, 1});
      continue;
    }
    const auto& nd = nodes[node];
    const double lambda = 1.0 / std::max(nd.distance, kMinDistance);
    std::vector<std::size_t> big;
    for (auto c : nd.children)
      if (nodes[c].size >= mcs) big.push_back(c);
    for (auto c : nd.children) {
      if (nodes[c].size >= mcs) continue;
      std::vector<std::size_t> leaves;
      detail::collect_leaves(nodes, c, n, leaves);
      for (auto p : leaves) result.condensed_tree.push_back({cluster, p, true, lambda, 1});
    }
    if (big.size() == 1) {
      work.emplace_back(big.front(), cluster);
    } else {
      for (auto c : big) {
        const std::size_t id = birth.size();
        birth.push_back(lambda);
        cluster_parent.push_back(cluster);
        cluster_children.emplace_back();
        cluster_children[cluster].push_back(id);
        result.condensed_tree.push_back({cluster, id, false, lambda, nodes[c].size});
        work.emplace_back(c, id);
      }
    }
  }

  const std::size_t clusters = birth.size();
  std::vector<double> stability(clusters, 0.0);
  for (const auto& row : result.condensed_tree)
    stability[row.parent] += (row.lambda - birth[row.parent]) * static_cast<double>(row.size);

  // Excess of mass. Children always have larger ids than their parent.
  std::vector<char> selected(clusters, 0);
  std::vector<double> subtree(stability);
  for (std::size_t c = clusters; c-- > 1;) {
    double child_sum = 0.0;
    for (auto k : cluster_children[c]) child_sum += subtree[k];
    if (!cluster_children[c].empty() && child_sum > stability[c]) {
      subtree[c] = child_sum;
    } else {
      selected[c] = 1;
      std::vector<std::size_t> stack(cluster_children[c]);
      while (!stack.empty()) {
        const auto k = stack.back();
        stack.pop_back();
        selected[k] = 0;
        for (auto kk : cluster_children[k]) stack.push_back(kk);
      }
    }
  }
  if (cluster_children[0].empty()) selected[0] = 1;

  // Each point's nearest selected ancestor (or itself) decides its label.
  std::vector<std::size_t> home(n, 0);
  for (const auto& row : result.condensed_tree)
    if (row.child_is_point) home[row.child] = row.parent;
  std::vector<long> owner(n, -1);
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t c = home[p];
    while (true) {
      if (selected[c]) {
        owner[p] = static_cast<long>(c);
        break;
      }
      if (c == 0) break;
      c = cluster_parent[c];
    }
  }
  // Output labels ordered by each cluster's smallest member index.
  std::map<long, int> relabel;
  for (std::size_t p = 0; p < n; ++p) {
    if (owner[p] < 0 || relabel.count(owner[p])) continue;
    const int label = static_cast<int>(relabel.size());
    relabel[owner[p]] = label;
    result.stabilities.push_back(stability[owner[p]]);
  }
  for (std::size_t p = 0; p < n; ++p)
    if (owner[p] >= 0) result.labels[p] = relabel[owner[p]];
  result.cluster_count = relabel.size();
  return result;
}

// ---------------------------------------------------------------------------
// Representatives

struct Scene {
  std::string scene_id;
  int cluster = -1;
  double stability = 0.0;
  std::vector<DialogueScript> representative_scripts;
  std::vector<std::string> member_ids;
};

inline std::string scene_name(int cluster) { return "scene-" + std::to_string(cluster); }

// Leading agent turns are dropped and consecutive same-role turns are joined
// with a space. Empty when the result is not a valid script.
inline std::optional<DialogueScript> normalize_to_script(const Dialogue& d, const std::string& scene) {
  std::vector<std::pair<Role, std::string>> merged;
  for (const auto& t : d.turns) {
    if (merged.empty() && t.role == Role::Agent) continue;
    if (!merged.empty() && merged.back().first == t.role)
      merged.back().second += " " + t.text;
    else
      merged.emplace_back(t.role, t.text);
  }
  DialogueScript s{d.id, scene, make_turns(merged)};
  if (!validate_script(s).empty()) return std::nullopt;
  return s;
}

// Clustering feature: embedding of the first two customer turns joined.
inline textenc::TextEmbedding dialogue_feature(const Dialogue& d, const textenc::Encoder& enc) {
  std::string text;
  int used = 0;
  for (const auto& t : d.turns) {
    if (t.role != Role::Customer) continue;
    if (used++) text += ' ';
    text += t.text;
    if (used == 2) break;
  }
  return textenc::embed_text(text, enc);
}

inline std::vector<Scene> select_representatives(const ClusterResult& result, const std::vector<Dialogue>& dialogues,
                                                 const std::vector<Point>& embeddings, std::size_t per_cluster) {
  if (result.labels.size() != dialogues.size() || embeddings.size() != dialogues.size())
    throw ContractViolation("select_representatives: labels, dialogues and embeddings must align");
  std::vector<Scene> scenes;
  for (std::size_t c = 0; c < result.cluster_count; ++c) {
    const int label = static_cast<int>(c);
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < dialogues.size(); ++i)
      if (result.labels[i] == label) members.push_back(i);
    if (members.empty()) continue;
    Point centroid(embeddings[members.front()].size(), 0.0);
    for (auto i : members)
      for (std::size_t k = 0; k < centroid.size(); ++k) centroid[k] += embeddings[i][k];
    for (auto& x : centroid) x /= static_cast<double>(members.size());
    std::vector<std::pair<double, std::size_t>> order;
    for (auto i : members) order.emplace_back(euclidean(embeddings[i], centroid), i);
    std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return dialogues[a.second].id < dialogues[b.second].id;
    });
    Scene scene;
    scene.scene_id = scene_name(label);
    scene.cluster = label;
    scene.stability = c < result.stabilities.size() ? result.stabilities[c] : 0.0;
    for (auto i : members) scene.member_ids.push_back(dialogues[i].id);
    for (const auto& [dist, i] : order) {
      if (scene.representative_scripts.size() >= per_cluster) break;
      if (auto s = normalize_to_script(dialogues[i], scene.scene_id)) scene.representative_scripts.push_back(std::move(*s));
    }
    if (!scene.representative_scripts.empty()) scenes.push_back(std::move(scene));
  }
  return scenes;
}

inline nlohmann::json cluster_report_line(const Scene& s) {
  auto reps = nlohmann::json::array();
  for (const auto& r : s.representative_scripts) reps.push_back(r.id);
  return {{"cluster", s.cluster},
          {"scene_id", s.scene_id},
          {"size", s.member_ids.size()},
          {"stability", s.stability},
          {"representatives", reps}};
}

}  // namespace coach::intentcluster
