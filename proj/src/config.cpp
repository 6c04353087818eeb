#include "mimicd/config.hpp"

#include <map>
#include <set>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "mimicd/errors.hpp"
#include "mimicd/metrics.hpp"
#include "mimicd/serialize.hpp"

namespace mimicd {

namespace pt = boost::property_tree;

namespace {

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"env", {"kind", "max_steps", "dt", "start_jitter_radius"}},
      {"expert", {"v_max", "noise_sigma", "gain", "retry_budget"}},
      {"dataset", {"demos_per_mode", "T", "stride", "seed"}},
      {"train",
       {"method", "steps", "batch_size", "lr", "beta1", "beta2", "eps", "weight_decay", "seed",
        "checkpoint_every", "log_every", "hidden_width", "n_blocks", "noise_embed_dim", "p_mean",
        "p_std", "loss_weighting"}},
      {"rollout",
       {"h", "max_steps", "goal_tolerance", "seed", "n_episodes", "K", "sigma_min", "sigma_max",
        "rho"}},
      {"eval", {"agent_thresholds", "obstacle_threshold", "emd_set_size", "emd_seed"}},
      {"output", {"dir"}},
  };
  return keys;
}

template <class V>
V as(const std::string& key, const std::string& text) {
  try {
    if constexpr (std::is_same_v<V, bool>) {
      const std::string t = boost::algorithm::to_lower_copy(boost::algorithm::trim_copy(text));
      if (t == "true" || t == "1" || t == "yes") return true;
      if (t == "false" || t == "0" || t == "no") return false;
      throw boost::bad_lexical_cast();
    } else {
      return boost::lexical_cast<V>(boost::algorithm::trim_copy(text));
    }
  } catch (const boost::bad_lexical_cast&) {
    throw ValidationError("config key " + key + ": cannot parse '" + text + "'");
  }
}

template <class V>
std::vector<V> as_list(const std::string& key, const std::string& text) {
  std::vector<std::string> parts;
  boost::algorithm::split(parts, text, boost::algorithm::is_any_of(","));
  std::vector<V> out;
  for (const auto& p : parts) out.push_back(as<V>(key, p));
  return out;
}

// Flattened "section.key" -> value, validated against the known key set.
std::map<std::string, std::string> collect(const std::string& ini_text,
                                           const std::vector<std::string>& overrides) {
  pt::ptree tree;
  std::istringstream is(ini_text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  std::map<std::string, std::string> flat;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ValidationError("config: key '" + section + "' appears outside any section");
    for (const auto& [key, value] : body) flat[section + "." + key] = value.data();
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos)
      throw ValidationError("override '" + o + "' is not of the form section.key=value");
    flat[boost::algorithm::trim_copy(o.substr(0, eq))] = o.substr(eq + 1);
  }
  for (const auto& [full, value] : flat) {
    const auto dot = full.find('.');
    const std::string section = full.substr(0, dot);
    const std::string key = dot == std::string::npos ? "" : full.substr(dot + 1);
    const auto it = known_keys().find(section);
    if (it == known_keys().end() || it->second.count(key) == 0)
      throw ValidationError("config: unknown key '" + full + "'");
  }
  return flat;
}

std::string join(const std::vector<double>& v) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void ExperimentConfig::validate() const {
  env.validate();
  if (static_cast<int>(dataset.demos_per_mode.size()) != mode_count(env.kind))
    throw ValidationError("config dataset.demos_per_mode: expected " +
                          std::to_string(mode_count(env.kind)) + " entries for " +
                          to_string(env.kind));
  for (int m : dataset.demos_per_mode)
    if (m < 0) throw ValidationError("config dataset.demos_per_mode: counts must be >= 0");
  if (dataset.T == 0 || dataset.stride == 0)
    throw ValidationError("config dataset: T and stride must be positive");
  train.validate();
  if (train.execute_horizon != rollout.h)
    throw ValidationError("config: training execute horizon and rollout.h differ");
  rollout.validate();
  if (rollout.T != dataset.T) throw ValidationError("config: rollout T differs from dataset.T");
  if (n_episodes == 0) throw ValidationError("config rollout.n_episodes must be >= 1");
  if (eval.agent_thresholds.empty())
    throw ValidationError("config eval.agent_thresholds must not be empty");
  for (double t : eval.agent_thresholds)
    if (!(t > 0.0)) throw ValidationError("config eval.agent_thresholds must be > 0");
  if (eval.obstacle_threshold && !(*eval.obstacle_threshold > 0.0))
    throw ValidationError("config eval.obstacle_threshold must be > 0");
  if (eval.obstacle_threshold && env.obstacles.empty())
    throw ValidationError("config eval.obstacle_threshold set for an environment without obstacles");
  if (eval.emd_set_size == 0) throw ValidationError("config eval.emd_set_size must be >= 1");
  if (!(expert.v_max > 0.0) || !(expert.noise_sigma >= 0.0) || !(expert.gain > 0.0) ||
      expert.retry_budget < 1)
    throw ValidationError("config expert: v_max, gain > 0, noise_sigma >= 0, retry_budget >= 1");
  if (output_dir.empty()) throw ValidationError("config output.dir must not be empty");
}

ExperimentConfig default_experiment(EnvKind kind) {
  ExperimentConfig c;
  c.env = EnvSpec::defaults(kind);
  c.dataset.demos_per_mode.assign(mode_count(kind), kind == EnvKind::Swap ? 100 : 150);
  c.train.execute_horizon = c.rollout.h;
  c.rollout.T = c.dataset.T;
  c.rollout.seed = 5000;
  c.eval.agent_thresholds = default_agent_thresholds(kind);
  c.eval.obstacle_threshold = default_obstacle_threshold(kind);
  return c;
}

ExperimentConfig parse_experiment(const std::string& ini_text,
                                  const std::vector<std::string>& overrides) {
  const auto flat = collect(ini_text, overrides);
  auto get = [&](const std::string& key) -> const std::string* {
    const auto it = flat.find(key);
    return it == flat.end() ? nullptr : &it->second;
  };
  EnvKind kind = EnvKind::Swap;
  if (const auto* v = get("env.kind")) {
    try {
      kind = env_kind_from_string(boost::algorithm::trim_copy(*v));
    } catch (const std::exception&) {
      throw ValidationError("config key env.kind: unknown environment '" + *v + "'");
    }
  }
  ExperimentConfig c = default_experiment(kind);

  auto set = [&](const std::string& key, auto& field) {
    if (const auto* v = get(key)) field = as<std::decay_t<decltype(field)>>(key, *v);
  };
  set("env.max_steps", c.env.max_steps);
  set("env.dt", c.env.dt);
  set("env.start_jitter_radius", c.env.start_jitter_radius);

  set("expert.v_max", c.expert.v_max);
  set("expert.noise_sigma", c.expert.noise_sigma);
  set("expert.gain", c.expert.gain);
  set("expert.retry_budget", c.expert.retry_budget);

  if (const auto* v = get("dataset.demos_per_mode")) {
    auto counts = as_list<int>("dataset.demos_per_mode", *v);
    if (counts.size() == 1) counts.assign(mode_count(kind), counts.front());
    c.dataset.demos_per_mode = counts;
  }
  set("dataset.T", c.dataset.T);
  set("dataset.stride", c.dataset.stride);
  set("dataset.seed", c.dataset.seed);

  if (const auto* v = get("train.method")) c.train.method = method_from_string(boost::algorithm::trim_copy(*v));
  set("train.steps", c.train.steps);
  set("train.batch_size", c.train.batch_size);
  set("train.lr", c.train.optimizer.lr);
  set("train.beta1", c.train.optimizer.beta1);
  set("train.beta2", c.train.optimizer.beta2);
  set("train.eps", c.train.optimizer.eps);
  set("train.weight_decay", c.train.optimizer.weight_decay);
  set("train.seed", c.train.seed);
  set("train.checkpoint_every", c.train.checkpoint_every);
  set("train.log_every", c.train.log_every);
  set("train.hidden_width", c.train.hidden_width);
  set("train.n_blocks", c.train.n_blocks);
  set("train.noise_embed_dim", c.train.noise_embed_dim);
  set("train.p_mean", c.train.noise.p_mean);
  set("train.p_std", c.train.noise.p_std);
  set("train.loss_weighting", c.train.loss_weighting);

  set("rollout.h", c.rollout.h);
  set("rollout.max_steps", c.rollout.max_steps);
  set("rollout.goal_tolerance", c.rollout.goal_tolerance);
  set("rollout.seed", c.rollout.seed);
  set("rollout.n_episodes", c.n_episodes);
  set("rollout.K", c.rollout.schedule.K);
  set("rollout.sigma_min", c.rollout.schedule.sigma_min);
  set("rollout.sigma_max", c.rollout.schedule.sigma_max);
  set("rollout.rho", c.rollout.schedule.rho);
  c.rollout.T = c.dataset.T;
  c.train.execute_horizon = c.rollout.h;

  if (const auto* v = get("eval.agent_thresholds"))
    c.eval.agent_thresholds = as_list<double>("eval.agent_thresholds", *v);
  if (const auto* v = get("eval.obstacle_threshold")) {
    if (boost::algorithm::trim_copy(*v) == "none")
      c.eval.obstacle_threshold.reset();
    else
      c.eval.obstacle_threshold = as<double>("eval.obstacle_threshold", *v);
  }
  set("eval.emd_set_size", c.eval.emd_set_size);
  set("eval.emd_seed", c.eval.emd_seed);

  if (const auto* v = get("output.dir")) c.output_dir = boost::algorithm::trim_copy(*v);
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::string& path,
                                 const std::vector<std::string>& overrides) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const std::exception&) {
    throw ValidationError("cannot read config file " + path);
  }
  return parse_experiment(text, overrides);
}

std::string experiment_to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  os << "[env]\nkind = " << to_string(c.env.kind) << "\nmax_steps = " << c.env.max_steps
     << "\ndt = " << num(c.env.dt) << "\nstart_jitter_radius = " << num(c.env.start_jitter_radius)
     << "\n\n[expert]\nv_max = " << num(c.expert.v_max)
     << "\nnoise_sigma = " << num(c.expert.noise_sigma) << "\ngain = " << num(c.expert.gain)
     << "\nretry_budget = " << c.expert.retry_budget << "\n\n[dataset]\ndemos_per_mode = ";
  for (std::size_t i = 0; i < c.dataset.demos_per_mode.size(); ++i)
    os << (i ? "," : "") << c.dataset.demos_per_mode[i];
  os << "\nT = " << c.dataset.T << "\nstride = " << c.dataset.stride
     << "\nseed = " << c.dataset.seed << "\n\n[train]\nmethod = " << to_string(c.train.method)
     << "\nsteps = " << c.train.steps << "\nbatch_size = " << c.train.batch_size
     << "\nlr = " << num(c.train.optimizer.lr) << "\nbeta1 = " << num(c.train.optimizer.beta1)
     << "\nbeta2 = " << num(c.train.optimizer.beta2) << "\neps = " << num(c.train.optimizer.eps)
     << "\nweight_decay = " << num(c.train.optimizer.weight_decay) << "\nseed = " << c.train.seed
     << "\ncheckpoint_every = " << c.train.checkpoint_every << "\nlog_every = " << c.train.log_every
     << "\nhidden_width = " << c.train.hidden_width << "\nn_blocks = " << c.train.n_blocks
     << "\nnoise_embed_dim = " << c.train.noise_embed_dim << "\np_mean = " << num(c.train.noise.p_mean)
     << "\np_std = " << num(c.train.noise.p_std)
     << "\nloss_weighting = " << (c.train.loss_weighting ? "true" : "false")
     << "\n\n[rollout]\nh = " << c.rollout.h << "\nmax_steps = " << c.rollout.max_steps
     << "\ngoal_tolerance = " << num(c.rollout.goal_tolerance) << "\nseed = " << c.rollout.seed
     << "\nn_episodes = " << c.n_episodes << "\nK = " << c.rollout.schedule.K
     << "\nsigma_min = " << num(c.rollout.schedule.sigma_min)
     << "\nsigma_max = " << num(c.rollout.schedule.sigma_max)
     << "\nrho = " << num(c.rollout.schedule.rho) << "\n\n[eval]\nagent_thresholds = "
     << join(c.eval.agent_thresholds) << "\nobstacle_threshold = "
     << (c.eval.obstacle_threshold ? num(*c.eval.obstacle_threshold) : std::string("none"))
     << "\nemd_set_size = " << c.eval.emd_set_size << "\nemd_seed = " << c.eval.emd_seed
     << "\n\n[output]\ndir = " << c.output_dir << "\n";
  return os.str();
}

}  // namespace mimicd
