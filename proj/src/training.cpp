#include "mimicd/training.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mimicd/errors.hpp"
#include "mimicd/serialize.hpp"

namespace mimicd {

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'I', 'M', 'I', 'C', 'D', 'C', 'K'};
constexpr double kSmoothing = 0.99;

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void rng_from_string(std::mt19937_64& rng, const std::string& s) {
  std::istringstream is(s);
  is >> rng;
  if (!is) throw ParseError("checkpoint: trainer RNG state is malformed");
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::MimicD: return "mimic-d";
    case Method::VanillaCTDE: return "vanilla";
    case Method::BC: return "bc";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  if (s == "mimic-d") return Method::MimicD;
  if (s == "vanilla") return Method::VanillaCTDE;
  if (s == "bc") return Method::BC;
  throw ValidationError("unknown method '" + s + "' (expected mimic-d, vanilla or bc)");
}

ObsMode obs_mode_for(Method m) { return m == Method::VanillaCTDE ? ObsMode::EgoOnly : ObsMode::Full; }

PolicyKind policy_kind_for(Method m) {
  return m == Method::BC ? PolicyKind::Regressor : PolicyKind::Diffusion;
}

void TrainConfig::validate() const {
  if (steps == 0 || batch_size == 0 || log_every == 0 || hidden_width == 0 || n_blocks == 0 ||
      noise_embed_dim == 0 || execute_horizon == 0)
    throw ValidationError("train config: counts and sizes must be positive");
  if (!(optimizer.lr > 0.0) || optimizer.beta1 < 0.0 || optimizer.beta1 >= 1.0 ||
      optimizer.beta2 < 0.0 || optimizer.beta2 >= 1.0 || optimizer.eps < 0.0 ||
      optimizer.weight_decay < 0.0)
    throw ValidationError("train config: optimizer hyperparameters out of range");
  noise.validate();
}

double estimate_sigma_data(const Dataset& dataset) {
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& agent : dataset.windows)
    for (const auto& w : agent)
      for (double v : w.actions.values) {
        sum += v;
        sq += v * v;
        ++n;
      }
  if (n == 0) throw ValidationError("estimate_sigma_data: dataset has no actions");
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  const double sd = std::sqrt(var);
  if (!(sd > 0.0)) throw ValidationError("estimate_sigma_data: actions have zero spread");
  return sd;
}

std::vector<double> policy_observation(const Policy& policy, std::span<const double> full,
                                       const EnvSpec& spec) {
  if (policy.obs_mode == ObsMode::EgoOnly) return project_ego_only(full, spec);
  if (full.size() != obs_dim(spec, ObsMode::Full))
    throw ValidationError("policy_observation: full observation has the wrong length");
  return {full.begin(), full.end()};
}

JointPolicySet init_policy_set(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.windows.empty()) throw ValidationError("init_policy_set: dataset has no agents");
  JointPolicySet set;
  set.method = config.method;
  set.env = dataset.env;
  set.T = dataset.horizon;
  set.h = config.execute_horizon;
  set.seed = config.seed;
  if (set.h > set.T)
    throw ValidationError("execute horizon h = " + std::to_string(set.h) +
                          " exceeds plan horizon T = " + std::to_string(set.T));
  const ObsMode mode = obs_mode_for(config.method);
  const PolicyKind kind = policy_kind_for(config.method);
  DenoiserConfig dc;
  dc.T = dataset.horizon;
  dc.m = kActionDim;
  dc.obs_dim = obs_dim(dataset.env, mode);
  dc.hidden_width = config.hidden_width;
  dc.n_blocks = config.n_blocks;
  dc.noise_embed_dim = config.noise_embed_dim;
  dc.sigma_data = estimate_sigma_data(dataset);
  for (std::size_t i = 0; i < dataset.windows.size(); ++i) {
    Policy p = init_policy(dc, derive_seed(config.seed, 1000 + i), kind, mode);
    std::vector<double> obs;
    for (const auto& w : dataset.windows[i]) {
      const auto o = policy_observation(p, w.observation, dataset.env);
      obs.insert(obs.end(), o.begin(), o.end());
    }
    if (obs.empty())
      throw ValidationError("init_policy_set: agent " + std::to_string(i) + " has no windows");
    fit_observation_normalizer(p, obs);
    set.policies.push_back(std::move(p));
  }
  return set;
}

Trainer::Trainer(const Dataset& dataset, const TrainConfig& config)
    : data_(dataset), config_(config), rng_(config.seed) {
  config_.validate();
  check_dataset();
  set_ = init_policy_set(dataset, config_);
  set_.rng_state = rng_to_string(rng_);
}

Trainer::Trainer(const Dataset& dataset, const TrainConfig& config, JointPolicySet resume)
    : data_(dataset), config_(config), set_(std::move(resume)) {
  config_.validate();
  check_dataset();
  if (set_.method != config_.method)
    throw BindingError("resume: checkpoint was trained with method " + to_string(set_.method));
  require_binding(set_, dataset.env);
  if (set_.T != dataset.horizon || set_.n_agents() != dataset.n_agents())
    throw BindingError("resume: checkpoint horizon or agent count differs from the dataset");
  rng_from_string(rng_, set_.rng_state);
  have_smoothed_ = set_.steps_done > 0;
}

void Trainer::check_dataset() const {
  if (data_.n_agents() == 0) throw ValidationError("training: dataset has no agents");
  const std::size_t full = obs_dim(data_.env, ObsMode::Full);
  for (std::size_t i = 0; i < data_.n_agents(); ++i) {
    if (data_.windows[i].empty())
      throw ValidationError("training: agent " + std::to_string(i) + " has no windows");
    for (const auto& w : data_.windows[i])
      if (w.observation.size() != full || w.actions.horizon != data_.horizon)
        throw ValidationError("training: window shapes disagree with the dataset header");
  }
  if (static_cast<int>(data_.n_agents()) != data_.env.n_agents)
    throw ValidationError("training: dataset agent count differs from its environment");
}

LossRecord Trainer::step() {
  const std::size_t B = config_.batch_size;
  const std::size_t N = set_.n_agents();
  for (auto& p : set_.policies) p.params.zero_grad();

  ad::Graph g(true);
  std::vector<ad::Var> losses;
  for (std::size_t i = 0; i < N; ++i) {
    Policy& pol = set_.policies[i];
    const auto& windows = data_.windows[i];
    const std::size_t d = pol.config.obs_dim, A = pol.config.action_len();
    LossBatch batch{ad::Tensor::matrix(B, A), ad::Tensor::matrix(B, d)};
    std::uniform_int_distribution<std::size_t> pick(0, windows.size() - 1);
    for (std::size_t r = 0; r < B; ++r) {
      const TrainingWindow& w = windows[pick(rng_)];
      const auto o = policy_observation(pol, w.observation, data_.env);
      std::copy(o.begin(), o.end(), batch.obs.data() + r * d);
      std::copy(w.actions.values.begin(), w.actions.values.end(), batch.xi.data() + r * A);
    }
    if (pol.kind == PolicyKind::Diffusion) {
      const LossNoise noise = draw_loss_noise(config_.noise, B, A, rng_);
      losses.push_back(diffusion_loss(g, pol, batch, noise, config_.loss_weighting));
    } else {
      losses.push_back(g.mean_square(g.sub(regress_graph(g, pol, batch.obs), g.constant(batch.xi))));
    }
  }
  ad::Var total = losses.front();
  for (std::size_t i = 1; i < N; ++i) total = g.add(total, losses[i]);

  LossRecord rec;
  rec.step = set_.steps_done + 1;
  for (const auto& l : losses) rec.per_agent.push_back(g.value(l)[0]);
  rec.total = g.value(total)[0];
  for (std::size_t i = 0; i < N; ++i)
    if (!std::isfinite(rec.per_agent[i]))
      throw NumericError("non-finite loss at step " + std::to_string(rec.step) + ", agent " +
                         std::to_string(i) + " (" + to_string(set_.method) + ")");

  g.backward(total);
  for (std::size_t i = 0; i < N; ++i)
    for (const auto& p : set_.policies[i].params.params())
      if (!p.grad.all_finite())
        throw NumericError("non-finite gradient at step " + std::to_string(rec.step) +
                           ", agent " + std::to_string(i) + ", parameter " + p.name);

  std::vector<ad::ParamStore*> stores;
  for (auto& p : set_.policies) stores.push_back(&p.params);
  ad::adamw_step(stores, config_.optimizer);

  set_.smoothed_loss = have_smoothed_
                           ? kSmoothing * set_.smoothed_loss + (1.0 - kSmoothing) * rec.total
                           : rec.total;
  have_smoothed_ = true;
  rec.smoothed = set_.smoothed_loss;
  set_.final_loss = rec.total;
  set_.steps_done = rec.step;
  return rec;
}

std::vector<double> fit_policy(Policy& policy, const ad::Tensor& targets, const ad::Tensor& obs,
                               std::size_t steps, std::size_t batch_size,
                               const ad::AdamWConfig& optimizer, const TrainNoiseDist& noise,
                               std::mt19937_64& rng) {
  const std::size_t A = policy.config.action_len(), d = policy.config.obs_dim;
  if (targets.cols() != A || obs.cols() != d || targets.rows() != obs.rows() || targets.rows() == 0)
    throw ValidationError("fit_policy: targets " + ad::shape_str(targets.shape()) +
                          " and observations " + ad::shape_str(obs.shape()) +
                          " do not match the policy");
  if (batch_size == 0) throw ValidationError("fit_policy: batch_size must be >= 1");
  std::uniform_int_distribution<std::size_t> pick(0, targets.rows() - 1);
  std::vector<double> losses;
  losses.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    LossBatch batch{ad::Tensor::matrix(batch_size, A), ad::Tensor::matrix(batch_size, d)};
    for (std::size_t r = 0; r < batch_size; ++r) {
      const std::size_t k = pick(rng);
      std::copy(targets.data() + k * A, targets.data() + (k + 1) * A, batch.xi.data() + r * A);
      std::copy(obs.data() + k * d, obs.data() + (k + 1) * d, batch.obs.data() + r * d);
    }
    policy.params.zero_grad();
    ad::Graph g(true);
    ad::Var loss;
    if (policy.kind == PolicyKind::Diffusion) {
      const LossNoise n = draw_loss_noise(noise, batch_size, A, rng);
      loss = diffusion_loss(g, policy, batch, n, false);
    } else {
      loss = g.mean_square(g.sub(regress_graph(g, policy, batch.obs), g.constant(batch.xi)));
    }
    const double v = g.value(loss)[0];
    if (!std::isfinite(v)) throw NumericError("fit_policy: non-finite loss at step " + std::to_string(s + 1));
    g.backward(loss);
    ad::adamw_step(policy.params, optimizer);
    losses.push_back(v);
  }
  return losses;
}

void Trainer::run(const std::function<void(const LossRecord&)>& on_log,
                  const std::function<void(const JointPolicySet&)>& on_checkpoint) {
  while (set_.steps_done < config_.steps) {
    const LossRecord rec = step();
    if (rec.step == 1 || rec.step % config_.log_every == 0 || rec.step == config_.steps) {
      log_.push_back(rec);
      if (on_log) on_log(rec);
    }
    if (on_checkpoint && config_.checkpoint_every > 0 && rec.step % config_.checkpoint_every == 0)
      on_checkpoint(snapshot());
  }
}

JointPolicySet Trainer::snapshot() const {
  JointPolicySet s = set_;
  s.rng_state = rng_to_string(rng_);
  return s;
}

namespace {

TrainResult run_method(const Dataset& dataset, TrainConfig config, Method method) {
  if (config.method != method)
    throw ValidationError("trainer for " + to_string(method) + " called with method " +
                          to_string(config.method));
  Trainer t(dataset, config);
  t.run();
  return {t.snapshot(), t.log()};
}

}  // namespace

TrainResult train_mimicd(const Dataset& d, const TrainConfig& c) {
  return run_method(d, c, Method::MimicD);
}
TrainResult train_vanilla(const Dataset& d, const TrainConfig& c) {
  return run_method(d, c, Method::VanillaCTDE);
}
TrainResult train_bc(const Dataset& d, const TrainConfig& c) { return run_method(d, c, Method::BC); }

TrainResult train(const Dataset& d, const TrainConfig& c) { return run_method(d, c, c.method); }

std::string loss_log_csv(const std::vector<LossRecord>& log, std::size_t n_agents) {
  std::ostringstream os;
  os.precision(17);
  os << "step";
  for (std::size_t i = 0; i < n_agents; ++i) os << ",loss_agent" << i;
  os << ",total,total_smoothed\n";
  for (const auto& r : log) {
    os << r.step;
    for (double v : r.per_agent) os << ',' << v;
    os << ',' << r.total << ',' << r.smoothed << '\n';
  }
  return os.str();
}

void save_checkpoint(const JointPolicySet& set, const std::string& path) {
  nlohmann::json h;
  h["format"] = "mimicd-checkpoint";
  h["format_version"] = JointPolicySet::kFormatVersion;
  h["method"] = to_string(set.method);
  h["sampling_free"] = set.sampling_free();
  h["env"] = set.env.to_json();
  h["env_digest"] = set.env.digest();
  h["T"] = set.T;
  h["h"] = set.h;
  h["seed"] = set.seed;
  h["steps_done"] = set.steps_done;
  h["final_loss"] = hexfloat(set.final_loss);
  h["smoothed_loss"] = hexfloat(set.smoothed_loss);
  h["rng_state"] = set.rng_state;
  auto& pols = h["policies"] = nlohmann::json::array();
  for (const auto& p : set.policies)
    pols.push_back({{"kind", to_string(p.kind)},
                    {"obs_mode", to_string(p.obs_mode)},
                    {"config", to_json(p.config)},
                    {"sigma_data", hexfloat(p.config.sigma_data)},
                    {"obs_mean", hex_array(p.obs_mean)},
                    {"obs_scale", hex_array(p.obs_scale)}});
  std::ostringstream out(std::ios::binary);
  const std::string text = h.dump();
  const std::uint64_t len = text.size();
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(len));
  for (const auto& p : set.policies) ad::write_store(out, p.params);
  write_text_file(path, out.str());
}

JointPolicySet load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path);
  char magic[sizeof(kCheckpointMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw ParseError(path + ": not a checkpoint (bad magic)");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1u << 26)) throw ParseError(path + ": checkpoint header length invalid");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ParseError(path + ": checkpoint header truncated");
  JointPolicySet set;
  try {
    const auto h = nlohmann::json::parse(text);
    if (h.at("format") != "mimicd-checkpoint") throw ParseError(path + ": wrong format tag");
    const int version = h.at("format_version").get<int>();
    if (version != JointPolicySet::kFormatVersion)
      throw VersionError(path + ": checkpoint format version " + std::to_string(version) +
                         " unsupported (expected " +
                         std::to_string(JointPolicySet::kFormatVersion) + ")");
    set.method = method_from_string(h.at("method").get<std::string>());
    set.env = EnvSpec::from_json(h.at("env"));
    if (set.env.digest() != h.at("env_digest").get<std::string>())
      throw ParseError(path + ": environment digest does not match the embedded environment");
    set.T = h.at("T").get<std::size_t>();
    set.h = h.at("h").get<std::size_t>();
    set.seed = h.at("seed").get<std::uint64_t>();
    set.steps_done = h.at("steps_done").get<std::size_t>();
    set.final_loss = parse_hexfloat(h.at("final_loss").get<std::string>());
    set.smoothed_loss = parse_hexfloat(h.at("smoothed_loss").get<std::string>());
    set.rng_state = h.at("rng_state").get<std::string>();
    for (const auto& pj : h.at("policies")) {
      Policy p;
      p.kind = policy_kind_from_string(pj.at("kind").get<std::string>());
      p.obs_mode = obs_mode_from_string(pj.at("obs_mode").get<std::string>());
      p.config = denoiser_config_from_json(pj.at("config"));
      p.config.sigma_data = parse_hexfloat(pj.at("sigma_data").get<std::string>());
      p.obs_mean = parse_hex_array(pj.at("obs_mean"));
      p.obs_scale = parse_hex_array(pj.at("obs_scale"));
      if (p.obs_mean.size() != p.config.obs_dim || p.obs_scale.size() != p.config.obs_dim)
        throw ParseError(path + ": observation normalizer length differs from obs_dim");
      set.policies.push_back(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": malformed checkpoint header: " + e.what());
  }
  for (auto& p : set.policies) {
    p.params = ad::read_store(in);
    const Policy ref = init_policy(p.config, 0, p.kind, p.obs_mode);
    if (ref.params.size() != p.params.size())
      throw ParseError(path + ": parameter count does not match the architecture");
    for (std::size_t k = 0; k < ref.params.size(); ++k) {
      const auto& a = ref.params.params()[k];
      const auto& b = p.params.params()[k];
      if (a.name != b.name || a.value.shape() != b.value.shape())
        throw ParseError(path + ": parameter " + b.name + " does not match the architecture");
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(path + ": trailing bytes");
  if (set.policies.empty() || set.h == 0 || set.h > set.T)
    throw ParseError(path + ": inconsistent policy set header");
  return set;
}

void require_binding(const JointPolicySet& set, const EnvSpec& spec) {
  if (set.env.digest() != spec.digest())
    throw BindingError("policy set was trained on " + to_string(set.env.kind) + " (digest " +
                       set.env.digest() + "), not on " + to_string(spec.kind) + " (digest " +
                       spec.digest() + ")");
  if (static_cast<int>(set.n_agents()) != spec.n_agents)
    throw BindingError("policy set has " + std::to_string(set.n_agents()) + " agents, environment " +
                       std::to_string(spec.n_agents));
  for (const auto& p : set.policies)
    if (p.config.obs_dim != obs_dim(spec, p.obs_mode))
      throw BindingError("policy obs_dim does not match the environment's layout");
}

}  // namespace mimicd
