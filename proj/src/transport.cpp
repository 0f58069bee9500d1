#include "simtraffic/transport.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <queue>

#include "simtraffic/errors.hpp"
#include "simtraffic/io.hpp"

namespace simtraffic {

double GroundMetric::operator()(const Atom& a, const Atom& b) const {
  return std::hypot(a.x - b.x, velocity_weight * (a.v - b.v));
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Primal network simplex for the transportation problem
//
//   sources i (supply m_i) + dummy Z (supply |b|)
//   targets j (demand n_j) + dummy Y (demand |a|)
//   arcs i->j (transport, given cost), i->Y and Z->j (cost `dummy_cost`),
//   Z->Y (cost 0); all arcs uncapacitated.
//
// Flow on i->Y is destroyed mass, flow on Z->j created mass. The starting
// tree destroys and creates everything, is rooted at Z and is strongly
// feasible, so no artificial arcs are needed. Leaving arcs follow the
// strongly feasible (last blocking arc) rule, which prevents cycling on
// degenerate pivots.
class TransportSimplex {
 public:
  TransportSimplex(std::span<const double> supply, std::span<const double> demand, double dummy_cost)
      : n_src_(supply.size()), n_dst_(demand.size()) {
    const int z = dummy_source();
    const int y = dummy_sink();
    double total_supply = 0.0, total_demand = 0.0;
    for (double m : supply) total_supply += m;
    for (double m : demand) total_demand += m;
    for (std::size_t i = 0; i < n_src_; ++i) add_arc(static_cast<int>(i), y, dummy_cost, supply[i], true);
    for (std::size_t j = 0; j < n_dst_; ++j) add_arc(z, dst_node(j), dummy_cost, demand[j], true);
    add_arc(z, y, 0.0, 0.0, true);
    (void)total_supply;
    (void)total_demand;
    tol_ = 1e-12 * std::max(1.0, std::abs(dummy_cost));
  }

  void add_transport_arc(std::size_t i, std::size_t j, double cost) {
    transport_begin_ = std::min(transport_begin_, from_.size());
    add_arc(static_cast<int>(i), dst_node(j), cost, 0.0, false);
    tol_ = std::max(tol_, 1e-12 * std::abs(cost));
  }

  void solve() {
    rebuild_tree();
    const std::size_t arcs = from_.size();
    const std::size_t block = std::max<std::size_t>(16, static_cast<std::size_t>(std::sqrt(static_cast<double>(arcs))));
    std::size_t next = 0;
    for (;;) {
      // Block search pricing: scan blocks cyclically, pivot on the most
      // negative reduced cost found in the first block that has one.
      int entering = -1;
      double best = -tol_;
      std::size_t scanned = 0;
      while (scanned < arcs) {
        const std::size_t stop = std::min(arcs, scanned + block);
        for (; scanned < stop; ++scanned) {
          const std::size_t e = next;
          next = (next + 1 == arcs) ? 0 : next + 1;
          if (in_tree_[e]) continue;
          const double rc = cost_[e] + potential_[static_cast<std::size_t>(from_[e])] -
                            potential_[static_cast<std::size_t>(to_[e])];
          if (rc < best) {
            best = rc;
            entering = static_cast<int>(e);
          }
        }
        if (entering >= 0) break;
      }
      if (entering < 0) return;
      pivot(static_cast<std::size_t>(entering));
    }
  }

  double flow(std::size_t arc) const { return flow_[arc]; }
  std::size_t transport_begin() const { return transport_begin_; }
  std::size_t arc_count() const { return from_.size(); }
  std::size_t arc_src(std::size_t e) const { return static_cast<std::size_t>(from_[e]); }
  std::size_t arc_dst(std::size_t e) const { return static_cast<std::size_t>(to_[e]) - n_src_; }

 private:
  int dst_node(std::size_t j) const { return static_cast<int>(n_src_ + j); }
  int dummy_source() const { return static_cast<int>(n_src_ + n_dst_); }
  int dummy_sink() const { return static_cast<int>(n_src_ + n_dst_ + 1); }
  std::size_t node_count() const { return n_src_ + n_dst_ + 2; }

  void add_arc(int from, int to, double cost, double flow, bool tree) {
    from_.push_back(from);
    to_.push_back(to);
    cost_.push_back(cost);
    flow_.push_back(flow);
    in_tree_.push_back(tree ? 1 : 0);
  }

  // Parent pointers, depths and potentials from the current tree arcs,
  // rooted at the dummy source.
  void rebuild_tree() {
    const std::size_t nn = node_count();
    tree_adj_.assign(nn, {});
    for (std::size_t e = 0; e < from_.size(); ++e) {
      if (!in_tree_[e]) continue;
      tree_adj_[static_cast<std::size_t>(from_[e])].push_back(static_cast<int>(e));
      tree_adj_[static_cast<std::size_t>(to_[e])].push_back(static_cast<int>(e));
    }
    parent_.assign(nn, -1);
    parent_arc_.assign(nn, -1);
    depth_.assign(nn, 0);
    potential_.assign(nn, 0.0);
    hang_subtree(static_cast<std::size_t>(dummy_source()));
  }

  // Recomputes parent, depth and potential for every node below `top`
  // (whose own fields are already correct).
  void hang_subtree(std::size_t top) {
    stack_.clear();
    stack_.push_back(top);
    while (!stack_.empty()) {
      const std::size_t u = stack_.back();
      stack_.pop_back();
      for (int ei : tree_adj_[u]) {
        if (ei == parent_arc_[u]) continue;
        const auto e = static_cast<std::size_t>(ei);
        const auto a = static_cast<std::size_t>(from_[e]);
        const std::size_t w = (a == u) ? static_cast<std::size_t>(to_[e]) : a;
        parent_[w] = static_cast<int>(u);
        parent_arc_[w] = ei;
        depth_[w] = depth_[u] + 1;
        // Reduced cost c + pi(from) - pi(to) vanishes on tree arcs.
        potential_[w] = (a == u) ? potential_[u] + cost_[e] : potential_[u] - cost_[e];
        stack_.push_back(w);
      }
    }
  }

  void erase_adj(std::size_t node, int arc) {
    auto& list = tree_adj_[node];
    list.erase(std::find(list.begin(), list.end(), arc));
  }

  void pivot(std::size_t entering) {
    const auto u = static_cast<std::size_t>(from_[entering]);
    const auto v = static_cast<std::size_t>(to_[entering]);

    // Cycle: apex -> ... -> u (down), u -> v (entering), v -> ... -> apex (up).
    // Record each tree arc with the sign of its flow change.
    down_.clear();
    up_.clear();
    std::size_t a = u, b = v;
    while (a != b) {
      if (depth_[a] >= depth_[b]) {
        down_.push_back(a);
        a = static_cast<std::size_t>(parent_[a]);
      } else {
        up_.push_back(b);
        b = static_cast<std::size_t>(parent_[b]);
      }
    }
    std::reverse(down_.begin(), down_.end());

    // Down segment: traversal parent(x) -> x; forward iff the arc is parent -> x.
    // Up segment: traversal x -> parent(x); forward iff the arc is x -> parent.
    auto decreasing = [&](std::size_t x, bool downward) {
      const auto e = static_cast<std::size_t>(parent_arc_[x]);
      const bool arc_points_down = static_cast<std::size_t>(to_[e]) == x;
      return downward ? !arc_points_down : arc_points_down;
    };

    double theta = std::numeric_limits<double>::infinity();
    for (std::size_t x : down_) {
      if (decreasing(x, true)) theta = std::min(theta, flow_[static_cast<std::size_t>(parent_arc_[x])]);
    }
    for (std::size_t x : up_) {
      if (decreasing(x, false)) theta = std::min(theta, flow_[static_cast<std::size_t>(parent_arc_[x])]);
    }
    if (!std::isfinite(theta)) throw NumericalError("transport: unbounded pivot");

    // Last blocking arc in cycle order; `cut` is the child endpoint of the
    // leaving arc, whose subtree is re-hung below the entering arc.
    int leaving = -1;
    std::size_t cut = 0;
    bool cut_on_u_side = true;
    for (std::size_t x : down_) {
      const auto e = static_cast<std::size_t>(parent_arc_[x]);
      if (decreasing(x, true) && flow_[e] <= theta) {
        leaving = static_cast<int>(e);
        cut = x;
        cut_on_u_side = true;
      }
    }
    for (std::size_t x : up_) {
      const auto e = static_cast<std::size_t>(parent_arc_[x]);
      if (decreasing(x, false) && flow_[e] <= theta) {
        leaving = static_cast<int>(e);
        cut = x;
        cut_on_u_side = false;
      }
    }

    if (theta > 0.0) {
      for (std::size_t x : down_) {
        const auto e = static_cast<std::size_t>(parent_arc_[x]);
        flow_[e] = decreasing(x, true) ? std::max(0.0, flow_[e] - theta) : flow_[e] + theta;
      }
      for (std::size_t x : up_) {
        const auto e = static_cast<std::size_t>(parent_arc_[x]);
        flow_[e] = decreasing(x, false) ? std::max(0.0, flow_[e] - theta) : flow_[e] + theta;
      }
      flow_[entering] += theta;
    }
    flow_[static_cast<std::size_t>(leaving)] = 0.0;
    in_tree_[static_cast<std::size_t>(leaving)] = 0;
    in_tree_[entering] = 1;

    erase_adj(cut, leaving);
    erase_adj(static_cast<std::size_t>(parent_[cut]), leaving);
    tree_adj_[u].push_back(static_cast<int>(entering));
    tree_adj_[v].push_back(static_cast<int>(entering));
    // The endpoint of the entering arc inside the detached subtree becomes
    // its new top, hanging from the other endpoint.
    const std::size_t inner = cut_on_u_side ? u : v;
    const std::size_t outer = cut_on_u_side ? v : u;
    parent_[inner] = static_cast<int>(outer);
    parent_arc_[inner] = static_cast<int>(entering);
    depth_[inner] = depth_[outer] + 1;
    potential_[inner] = (inner == u) ? potential_[outer] - cost_[entering] : potential_[outer] + cost_[entering];
    hang_subtree(inner);
  }

  std::size_t n_src_;
  std::size_t n_dst_;
  std::size_t transport_begin_ = std::numeric_limits<std::size_t>::max();
  std::vector<int> from_, to_;
  std::vector<double> cost_, flow_;
  std::vector<char> in_tree_;
  std::vector<int> parent_, parent_arc_;
  std::vector<int> depth_;
  std::vector<double> potential_;
  std::vector<std::vector<int>> tree_adj_;
  std::vector<std::size_t> stack_, down_, up_;
  double tol_ = 0.0;
};

std::vector<double> masses_of(const ParticleCloud& c) {
  std::vector<double> m;
  m.reserve(c.size());
  for (const auto& a : c.atoms()) m.push_back(a.mass);
  return m;
}

TransportPlan plan_from_matches(std::vector<Match> matches, const ParticleCloud& a,
                                const ParticleCloud& b) {
  TransportPlan plan;
  plan.destroyed = masses_of(a);
  plan.created = masses_of(b);
  for (const auto& m : matches) {
    plan.destroyed[m.src] -= m.mass;
    plan.created[m.dst] -= m.mass;
  }
  for (auto& d : plan.destroyed) d = std::max(0.0, d);
  for (auto& c : plan.created) c = std::max(0.0, c);
  plan.matches = std::move(matches);
  return plan;
}

double diameter(const ParticleCloud& a, const ParticleCloud& b, GroundMetric metric) {
  std::vector<Atom> all(a.atoms().begin(), a.atoms().end());
  all.insert(all.end(), b.atoms().begin(), b.atoms().end());
  double d = 0.0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) d = std::max(d, metric(all[i], all[j]));
  }
  return d;
}

}  // namespace

double plan_cost(const TransportPlan& plan, const ParticleCloud& a, const ParticleCloud& b,
                 double cost_a, double cost_b, GroundMetric metric) {
  std::vector<double> terms;
  terms.reserve(plan.matches.size() + plan.destroyed.size() + plan.created.size());
  for (const auto& m : plan.matches) terms.push_back(cost_b * m.mass * metric(a[m.src], b[m.dst]));
  for (double d : plan.destroyed) terms.push_back(cost_a * d);
  for (double c : plan.created) terms.push_back(cost_a * c);
  return compensated_sum(terms);
}

namespace {

// Optimal matches for the transportation formulation with the given arcs.
std::vector<Match> solve_transport(const ParticleCloud& a, const ParticleCloud& b, double dummy_cost,
                                   const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                                   const std::vector<double>& costs) {
  const auto sa = masses_of(a);
  const auto sb = masses_of(b);
  TransportSimplex simplex(sa, sb, dummy_cost);
  for (std::size_t k = 0; k < pairs.size(); ++k) simplex.add_transport_arc(pairs[k].first, pairs[k].second, costs[k]);
  simplex.solve();
  std::vector<Match> out;
  if (pairs.empty()) return out;
  for (std::size_t e = simplex.transport_begin(); e < simplex.arc_count(); ++e) {
    const double f = simplex.flow(e);
    if (f > 0.0) out.push_back({simplex.arc_src(e), simplex.arc_dst(e), f});
  }
  std::sort(out.begin(), out.end(), [](const Match& x, const Match& y) {
    return std::tie(x.src, x.dst) < std::tie(y.src, y.dst);
  });
  return out;
}

}  // namespace

TransportResult w1(const ParticleCloud& a, const ParticleCloud& b, GroundMetric metric) {
  if (a.empty() || b.empty()) throw ValidationError("w1: both clouds must be nonempty");
  const double ma = a.total_mass();
  const double mb = b.total_mass();
  if (std::abs(ma - mb) > 1e-9 * std::max(ma, mb)) {
    throw ValidationError("w1: total masses differ (" + format_real(ma) + " vs " + format_real(mb) +
                          "); use gw11 for unequal masses");
  }
  // With the destroy/create cost above half the diameter every unit of mass
  // is cheaper to move than to discard, so the optimum is a full matching;
  // only the tolerated mass residual goes unmatched.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<double> costs;
  pairs.reserve(a.size() * b.size());
  costs.reserve(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      pairs.emplace_back(i, j);
      costs.push_back(metric(a[i], b[j]));
    }
  }
  const double dummy = 1.0 + diameter(a, b, metric);
  TransportResult r;
  r.plan = plan_from_matches(solve_transport(a, b, dummy, pairs, costs), a, b);
  std::fill(r.plan.destroyed.begin(), r.plan.destroyed.end(), 0.0);
  std::fill(r.plan.created.begin(), r.plan.created.end(), 0.0);
  r.plan.cost = plan_cost(r.plan, a, b, 0.0, 1.0, metric);
  r.distance = r.plan.cost;
  return r;
}

namespace {

bool canonical_first(const ParticleCloud& a, const ParticleCloud& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].x != b[i].x) return a[i].x < b[i].x;
    if (a[i].v != b[i].v) return a[i].v < b[i].v;
    if (a[i].mass != b[i].mass) return a[i].mass < b[i].mass;
  }
  return true;
}

TransportPlan transposed(TransportPlan plan) {
  for (auto& m : plan.matches) std::swap(m.src, m.dst);
  std::sort(plan.matches.begin(), plan.matches.end(), [](const Match& x, const Match& y) {
    return std::tie(x.src, x.dst) < std::tie(y.src, y.dst);
  });
  std::swap(plan.destroyed, plan.created);
  return plan;
}

}  // namespace

TransportResult gw11(const ParticleCloud& a, const ParticleCloud& b, double cost_a, double cost_b,
                     GroundMetric metric) {
  if (!(cost_a > 0.0) || !(cost_b > 0.0)) throw ValidationError("gw11: a and b must be > 0");
  // Solving in a canonical argument order makes the distance exactly symmetric.
  if (!canonical_first(a, b)) {
    TransportResult r = gw11(b, a, cost_a, cost_b, metric);
    r.plan = transposed(std::move(r.plan));
    return r;
  }

  // Moving mass across distance d pays cost_b d instead of 2 cost_a; only
  // pairs closer than 2 cost_a / cost_b can lower the objective.
  const double reach = 2.0 * cost_a / cost_b;
  std::vector<std::size_t> order(b.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return b[i].x < b[j].x; });
  std::vector<double> bx(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) bx[k] = b[order[k]].x;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<double> costs;
  std::vector<std::size_t> near;
  for (std::size_t i = 0; i < a.size(); ++i) {
    near.clear();
    auto lo = std::lower_bound(bx.begin(), bx.end(), a[i].x - reach);
    for (auto it = lo; it != bx.end() && *it <= a[i].x + reach; ++it) {
      near.push_back(order[static_cast<std::size_t>(it - bx.begin())]);
    }
    std::sort(near.begin(), near.end());
    for (std::size_t j : near) {
      const double c = cost_b * metric(a[i], b[j]);
      if (c < 2.0 * cost_a) {
        pairs.emplace_back(i, j);
        costs.push_back(c);
      }
    }
  }
  TransportResult r;
  r.plan = plan_from_matches(solve_transport(a, b, cost_a, pairs, costs), a, b);
  r.plan.cost = plan_cost(r.plan, a, b, cost_a, cost_b, metric);
  r.distance = r.plan.cost;
  return r;
}

double gw_brute(const ParticleCloud& a, const ParticleCloud& b, double cost_a, double cost_b,
                int resolution, GroundMetric metric) {
  if (a.size() > 3 || b.size() > 3) throw ValidationError("gw_brute: at most 3 atoms per cloud");
  if (resolution < 16) throw ValidationError("gw_brute: resolution must be >= 16");
  if (!(cost_a > 0.0) || !(cost_b > 0.0)) throw ValidationError("gw_brute: a and b must be > 0");

  const std::size_t na = a.size();
  const std::size_t nb = b.size();
  const double base = cost_a * (a.total_mass() + b.total_mass());
  if (na == 0 || nb == 0) return base;
  const double step = std::max(a.total_mass(), b.total_mass()) / resolution;
  if (step == 0.0) return 0.0;

  std::vector<double> row = masses_of(a);
  std::vector<double> col = masses_of(b);
  std::vector<double> dist(na * nb);
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) dist[i * nb + j] = metric(a[i], b[j]);
  }

  // Objective: base + sum_ij f_ij (b d_ij - 2a).
  double best = base;
  const std::size_t arcs = na * nb;
  std::function<void(std::size_t, double)> visit = [&](std::size_t arc, double partial) {
    if (arc == arcs) {
      best = std::min(best, base + partial);
      return;
    }
    const std::size_t i = arc / nb;
    const std::size_t j = arc % nb;
    const double cap = std::max(0.0, std::min(row[i], col[j]));
    const double unit = cost_b * dist[arc] - 2.0 * cost_a;
    auto take = [&](double f) {
      row[i] -= f;
      col[j] -= f;
      visit(arc + 1, partial + f * unit);
      row[i] += f;
      col[j] += f;
    };
    for (int k = 0; k * step < cap; ++k) take(k * step);
    take(cap);
  };
  visit(0, 0.0);
  return best;
}

double gw_brute_tolerance(const ParticleCloud& a, const ParticleCloud& b, double cost_a,
                          double cost_b, int resolution, GroundMetric metric) {
  const double atoms = static_cast<double>(std::max(a.size(), b.size()));
  const double total = std::max(a.total_mass(), b.total_mass());
  return (cost_a + cost_b * diameter(a, b, metric)) * atoms * atoms * total / resolution;
}

std::string plan_to_csv(const TransportPlan& plan) {
  std::string s = "src,dst,mass\n";
  for (const auto& m : plan.matches) {
    s += std::to_string(m.src) + "," + std::to_string(m.dst) + "," + format_real(m.mass) + "\n";
  }
  for (std::size_t i = 0; i < plan.destroyed.size(); ++i) {
    if (plan.destroyed[i] > 0.0) s += std::to_string(i) + ",-1," + format_real(plan.destroyed[i]) + "\n";
  }
  for (std::size_t j = 0; j < plan.created.size(); ++j) {
    if (plan.created[j] > 0.0) s += "-1," + std::to_string(j) + "," + format_real(plan.created[j]) + "\n";
  }
  return s;
}

}  // namespace simtraffic
