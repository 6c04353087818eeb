#include "mimicd/report.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "mimicd/errors.hpp"
#include "mimicd/serialize.hpp"

namespace mimicd {

Episode demo_to_episode(const Demonstration& demo, const EnvSpec& spec) {
  Episode e;
  e.env_digest = spec.digest();
  e.states = demo.states;
  e.seed = demo.seed;
  for (const auto& a : demo.per_agent) e.actions.push_back(a.actions);
  e.termination = Termination::AllGoalsReached;
  return e;
}

std::vector<Episode> held_out_expert_set(const EnvSpec& spec, std::size_t n, std::uint64_t seed,
                                         const ExpertParams& params) {
  std::mt19937_64 rng(seed);
  const std::vector<double> weights(mode_count(spec.kind), 1.0);
  std::vector<ModeId> modes;
  for (std::size_t k = 0; k < n; ++k) modes.push_back(sample_mode(spec, weights, rng));
  std::vector<Episode> out(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t k = 0; k < n; ++k)
    out[k] = demo_to_episode(generate_demo(spec, modes[k], derive_seed(seed, k), params), spec);
  return out;
}

EvaluationResult evaluate(const std::string& method, std::span<const Episode> episodes,
                          std::span<const Episode> expert, std::span<const Episode> expert_split,
                          const EnvSpec& spec, const EvalSettings& eval) {
  EvaluationResult r;
  r.method = method;
  r.collisions =
      collision_table(episodes, eval.agent_thresholds, eval.obstacle_threshold, spec.obstacles);
  // EMD compares equal-sized sets: the first |expert| sampled episodes.
  if (episodes.size() < expert.size())
    throw ValidationError("evaluate: fewer sampled episodes than the EMD reference set");
  r.emd = emd_report(episodes.first(expert.size()), expert);
  r.emd_noise_floor = emd_report(expert_split, expert);
  r.modes = mode_histogram(episodes, spec);
  // success is judged at the first (most conservative) agent threshold
  r.success_rate = success_rate(episodes, eval.agent_thresholds.front(),
                                eval.obstacle_threshold, spec.obstacles);
  for (const auto& e : episodes) {
    r.goals_reached += e.termination == Termination::AllGoalsReached;
    r.diverged += e.termination == Termination::Diverged;
  }
  return r;
}

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

}  // namespace

std::string collision_csv(std::span<const std::pair<std::string, CollisionTable>> rows) {
  if (rows.empty()) throw ValidationError("collision_csv: no rows");
  const auto& first = rows.front().second;
  const bool swap_layout = first.thresholds.size() == 1 && first.has_obstacle_column;
  std::ostringstream os;
  if (swap_layout) {
    os << "Method,Agent,Obstacle,Total\n";
    for (const auto& [m, t] : rows)
      os << m << ',' << t.agent_counts[0] << ',' << t.obstacle_counts[0] << ',' << t.total_counts[0]
         << '\n';
  } else {
    os << "Method";
    for (double th : first.thresholds) os << ',' << fmt(th);
    os << '\n';
    for (const auto& [m, t] : rows) {
      if (t.thresholds != first.thresholds)
        throw ValidationError("collision_csv: rows use different thresholds");
      os << m;
      for (int c : t.total_counts) os << ',' << c;
      os << '\n';
    }
  }
  return os.str();
}

std::string emd_csv(std::span<const std::pair<std::string, EmdReport>> rows) {
  if (rows.empty()) throw ValidationError("emd_csv: no rows");
  std::ostringstream os;
  os << "Method";
  for (std::size_t i = 0; i < rows.front().second.per_agent.size(); ++i) os << ",Agent " << i + 1;
  os << '\n';
  os.precision(6);
  for (const auto& [m, r] : rows) {
    os << m;
    for (double v : r.per_agent) os << ',' << fmt(v);
    os << '\n';
  }
  return os.str();
}

std::string mode_histogram_csv(const ModeHistogram& hist, EnvKind kind) {
  std::ostringstream os;
  os << "Mode,Name,Count\n";
  for (std::size_t m = 0; m < hist.counts.size(); ++m)
    os << m << ',' << mode_name({kind, static_cast<int>(m)}) << ',' << hist.counts[m] << '\n';
  os << "-1,unclassified," << hist.unclassified << '\n';
  return os.str();
}

nlohmann::json summary_json(const EvaluationResult& r, const EnvSpec& spec) {
  nlohmann::json j;
  j["method"] = r.method;
  j["env"] = to_string(spec.kind);
  j["env_digest"] = spec.digest();
  j["n_episodes"] = r.collisions.n_episodes;
  auto& c = j["collisions"];
  c["thresholds"] = r.collisions.thresholds;
  c["agent"] = r.collisions.agent_counts;
  c["obstacle"] = r.collisions.obstacle_counts;
  c["total"] = r.collisions.total_counts;
  j["emd"] = {{"metric", r.emd.metric},
              {"set_size", r.emd.set_size},
              {"per_agent", r.emd.per_agent},
              {"expert_noise_floor", r.emd_noise_floor.per_agent}};
  nlohmann::json modes = nlohmann::json::object();
  for (std::size_t m = 0; m < r.modes.counts.size(); ++m)
    modes[mode_name({spec.kind, static_cast<int>(m)})] = r.modes.counts[m];
  modes["unclassified"] = r.modes.unclassified;
  j["modes"] = modes;
  j["distinct_modes"] = r.modes.distinct_modes();
  j["success_rate"] = r.success_rate;
  j["goals_reached"] = r.goals_reached;
  j["diverged"] = r.diverged;
  return j;
}

std::string paths_svg(const EnvSpec& spec, std::span<const Episode> sampled,
                      std::span<const Episode> expert) {
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  constexpr double kHalf = 12.5, kPx = 600.0;
  auto px = [&](double x) { return (x + kHalf) / (2 * kHalf) * kPx; };
  auto py = [&](double y) { return (kHalf - y) / (2 * kHalf) * kPx; };
  std::ostringstream os;
  os.precision(5);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kPx << "\" height=\"" << kPx
     << "\" viewBox=\"0 0 " << kPx << ' ' << kPx << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (spec.kind == EnvKind::RoadCrossing)
    for (double y : {-spec.corridor_half_width, spec.corridor_half_width})
      os << "<line x1=\"0\" x2=\"" << kPx << "\" y1=\"" << py(y) << "\" y2=\"" << py(y)
         << "\" stroke=\"#999\" stroke-dasharray=\"6 4\"/>\n";
  for (const auto& o : spec.obstacles)
    os << "<circle cx=\"" << px(o.center.x) << "\" cy=\"" << py(o.center.y) << "\" r=\""
       << o.radius / (2 * kHalf) * kPx << "\" fill=\"#ddd\" stroke=\"#555\"/>\n";
  auto polyline = [&](const Episode& e, std::size_t agent, const std::string& style) {
    os << "<polyline fill=\"none\" " << style << " points=\"";
    for (const auto& s : e.states)
      os << px(s.agents[agent].position.x) << ',' << py(s.agents[agent].position.y) << ' ';
    os << "\"/>\n";
  };
  os << "<g id=\"expert\">\n";
  for (const auto& e : expert)
    for (std::size_t i = 0; i < e.actions.size(); ++i)
      polyline(e, i, "stroke=\"#aaa\" stroke-width=\"0.8\" stroke-opacity=\"0.6\"");
  os << "</g>\n<g id=\"sampled\">\n";
  for (const auto& e : sampled) {
    const auto mode = classify_mode(e, spec);
    const std::string color = mode ? palette[mode->label % 6] : "black";
    const std::string dash = mode ? "" : " stroke-dasharray=\"3 2\"";
    for (std::size_t i = 0; i < e.actions.size(); ++i)
      polyline(e, i, "stroke=\"" + color + "\" stroke-width=\"1.2\" stroke-opacity=\"0.7\"" + dash);
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

}  // namespace mimicd
