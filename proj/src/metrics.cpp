#include "mimicd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mimicd/errors.hpp"
#include "mimicd/kernels.hpp"

namespace mimicd {

double discrete_frechet(std::span<const Vec2> p, std::span<const Vec2> q) {
  if (p.empty() || q.empty()) throw ValidationError("discrete_frechet: empty sequence");
  // rolling row of the coupling table
  std::vector<double> prev(q.size()), cur(q.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t j = 0; j < q.size(); ++j) {
      const double d = distance(p[i], q[j]);
      double best;
      if (i == 0 && j == 0)
        best = d;
      else if (i == 0)
        best = std::max(d, cur[j - 1]);
      else if (j == 0)
        best = std::max(d, prev[j]);
      else
        best = std::max(d, std::min({prev[j], cur[j - 1], prev[j - 1]}));
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  return prev.back();
}

std::vector<double> frechet_cost_matrix_reference(std::span<const Path> a,
                                                  std::span<const Path> b) {
  std::vector<double> c(a.size() * b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) c[i * b.size() + j] = discrete_frechet(a[i], b[j]);
  return c;
}

std::vector<double> frechet_cost_matrix(std::span<const Path> a, std::span<const Path> b) {
  std::vector<double> c(a.size() * b.size());
  const std::size_t n = a.size() * b.size();
  const int threads = kernels::threads();
#pragma omp parallel for schedule(dynamic, 16) num_threads(threads)
  for (std::size_t k = 0; k < n; ++k) c[k] = discrete_frechet(a[k / b.size()], b[k % b.size()]);
  return c;
}

Assignment solve_assignment(std::span<const double> cost, std::size_t n) {
  if (cost.size() != n * n) throw ValidationError("solve_assignment: cost matrix is not n x n");
  Assignment out;
  if (n == 0) return out;
  const double inf = std::numeric_limits<double>::infinity();
  // potentials u (rows), v (cols); p[j] = row matched to column j (1-based)
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  out.row_to_col.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) out.row_to_col[p[j] - 1] = j - 1;
  // recompute the cost from the matching rather than the potentials
  for (std::size_t i = 0; i < n; ++i) out.cost += cost[i * n + out.row_to_col[i]];
  return out;
}

double emd_uniform(std::span<const Path> a, std::span<const Path> b) {
  if (a.empty() || a.size() != b.size())
    throw ValidationError("emd_uniform: sets must be nonempty and equal-sized (" +
                          std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  const std::vector<double> c = frechet_cost_matrix(a, b);
  return solve_assignment(c, a.size()).cost / static_cast<double>(a.size());
}

EmdReport emd_report(std::span<const Episode> sampled, std::span<const Episode> reference) {
  if (sampled.empty() || sampled.size() != reference.size())
    throw ValidationError("emd_report: episode sets must be nonempty and equal-sized");
  EmdReport r;
  r.set_size = sampled.size();
  const std::size_t n_agents = sampled.front().actions.size();
  for (std::size_t i = 0; i < n_agents; ++i) {
    std::vector<Path> a, b;
    for (const auto& e : sampled) a.push_back(e.path(i));
    for (const auto& e : reference) b.push_back(e.path(i));
    r.per_agent.push_back(emd_uniform(a, b));
  }
  return r;
}

CollisionTable collision_table(std::span<const Episode> episodes,
                               std::span<const double> agent_thresholds,
                               std::optional<double> obstacle_threshold,
                               std::span<const Obstacle> obstacles) {
  if (episodes.empty()) throw ValidationError("collision_table: no episodes");
  CollisionTable t;
  t.thresholds.assign(agent_thresholds.begin(), agent_thresholds.end());
  t.n_episodes = static_cast<int>(episodes.size());
  t.has_obstacle_column = obstacle_threshold.has_value();
  t.agent_counts.assign(t.thresholds.size(), 0);
  t.obstacle_counts.assign(t.thresholds.size(), 0);
  t.total_counts.assign(t.thresholds.size(), 0);
  for (const Episode& e : episodes) {
    const double pair_min = min_pairwise_distances(e.states).overall_min();
    bool obstacle_hit = false;
    if (obstacle_threshold)
      for (double d : min_obstacle_distances(e.states, obstacles))
        obstacle_hit = obstacle_hit || d < *obstacle_threshold;
    for (std::size_t k = 0; k < t.thresholds.size(); ++k) {
      const bool agent_hit = pair_min < t.thresholds[k];
      t.agent_counts[k] += agent_hit;
      t.obstacle_counts[k] += obstacle_hit;
      t.total_counts[k] += agent_hit || obstacle_hit;
    }
  }
  return t;
}

namespace {

double swept_angle(std::span<const JointState> states, std::size_t agent, Vec2 center) {
  double total = 0.0;
  for (std::size_t t = 1; t < states.size(); ++t) {
    const Vec2 a = states[t - 1].agents[agent].position - center;
    const Vec2 b = states[t].agents[agent].position - center;
    total += std::atan2(a.x * b.y - a.y * b.x, a.x * b.x + a.y * b.y);
  }
  return total;
}

double progress(std::span<const JointState> states, std::size_t agent, std::size_t t) {
  const AgentState& s0 = states.front().agents[agent];
  const double d0 = distance(s0.position, s0.goal);
  const AgentState& st = states[t].agents[agent];
  return d0 > 0.0 ? 1.0 - distance(st.position, st.goal) / d0 : 1.0;
}

std::optional<ModeId> classify_swap(std::span<const JointState> states, const EnvSpec& spec) {
  const Obstacle& ob = spec.obstacles.at(0);
  for (double d : min_obstacle_distances(states, spec.obstacles))
    if (d < ob.radius) return std::nullopt;
  const double w0 = swept_angle(states, 0, ob.center);
  const double w1 = swept_angle(states, 1, ob.center);
  if (std::abs(w0) < M_PI / 2 || std::abs(w1) < M_PI / 2) return std::nullopt;
  // counter-clockwise: agent 0 (heading +x) passes below, agent 1 passes above
  const int side0 = w0 > 0.0 ? -1 : +1;
  const int side1 = w1 > 0.0 ? +1 : -1;
  if (side0 != side1) return ModeId{EnvKind::Swap, side0 < 0 ? 0 : 1};
  std::size_t t_min = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < states.size(); ++t) {
    const double d = distance(states[t].agents[0].position, states[t].agents[1].position);
    if (d < best) {
      best = d;
      t_min = t;
    }
  }
  const int yielder = progress(states, 0, t_min) <= progress(states, 1, t_min) ? 0 : 1;
  const int base = side0 > 0 ? 2 : 4;
  return ModeId{EnvKind::Swap, base + yielder};
}

std::optional<ModeId> classify_road(std::span<const JointState> states) {
  for (const JointState& s : states) {
    const Vec2 cross = s.agents[2].position;
    const Vec2 first = s.agents[0].position;
    if (cross.y >= first.y) {
      // agent 0 travels toward -x, so "in front" is the smaller-x side
      const bool in_front = cross.x < first.x;
      return ModeId{EnvKind::RoadCrossing, in_front ? 0 : 1};
    }
  }
  return std::nullopt;
}

}  // namespace

std::optional<ModeId> classify_mode(std::span<const JointState> states, const EnvSpec& spec) {
  if (states.empty()) return std::nullopt;
  if (states.front().agents.size() != static_cast<std::size_t>(spec.n_agents))
    throw BindingError("classify_mode: state agent count does not match the environment");
  return spec.kind == EnvKind::Swap ? classify_swap(states, spec) : classify_road(states);
}

std::optional<ModeId> classify_mode(const Episode& episode, const EnvSpec& spec) {
  if (!episode.env_digest.empty() && episode.env_digest != spec.digest())
    throw BindingError("classify_mode: episode belongs to a different environment");
  return classify_mode(std::span<const JointState>(episode.states), spec);
}

int ModeHistogram::total() const {
  int n = unclassified;
  for (int c : counts) n += c;
  return n;
}

int ModeHistogram::distinct_modes() const {
  return static_cast<int>(std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }));
}

ModeHistogram mode_histogram(std::span<const Episode> episodes, const EnvSpec& spec) {
  ModeHistogram h;
  h.counts.assign(mode_count(spec.kind), 0);
  for (const Episode& e : episodes) {
    const auto m = classify_mode(e, spec);
    if (m)
      ++h.counts[m->label];
    else
      ++h.unclassified;
  }
  return h;
}

double success_rate(std::span<const Episode> episodes, double agent_threshold,
                    std::optional<double> obstacle_threshold, std::span<const Obstacle> obstacles) {
  if (episodes.empty()) throw ValidationError("success_rate: no episodes");
  if (!(agent_threshold > 0.0)) throw ValidationError("success_rate: threshold must be > 0");
  int ok = 0;
  for (const Episode& e : episodes) {
    if (e.termination != Termination::AllGoalsReached) continue;
    const bool agent_hit = min_pairwise_distances(e.states).overall_min() < agent_threshold;
    bool obstacle_hit = false;
    if (obstacle_threshold)
      for (double d : min_obstacle_distances(e.states, obstacles))
        obstacle_hit = obstacle_hit || d < *obstacle_threshold;
    if (!agent_hit && !obstacle_hit) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(episodes.size());
}

std::vector<double> default_agent_thresholds(EnvKind kind) {
  if (kind == EnvKind::Swap) return {2.7};
  return {0.75, 0.675, 0.5625, 0.375};
}

std::optional<double> default_obstacle_threshold(EnvKind kind) {
  if (kind == EnvKind::Swap) return 3.9;
  return std::nullopt;
}

}  // namespace mimicd
