#include "mimicd/commands.hpp"

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "mimicd/errors.hpp"
#include "mimicd/kernels.hpp"
#include "mimicd/metrics.hpp"
#include "mimicd/report.hpp"
#include "mimicd/serialize.hpp"

namespace mimicd::cli {

namespace {

void log(const std::string& msg) { std::cerr << "[mimicd] " << msg << '\n'; }

void write_resolved_config(const ExperimentConfig& c, const std::string& name) {
  write_text_file(c.output_dir + "/" + name, experiment_to_ini(c));
}

// Merges one method's summary into metrics/summary.json.
void update_summary(const Layout& out, const std::string& method, const nlohmann::json& entry) {
  nlohmann::json all = nlohmann::json::object();
  const std::string path = out.metrics("summary.json");
  if (std::filesystem::exists(path)) {
    try {
      all = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception&) {
      all = nlohmann::json::object();
    }
  }
  all[method] = entry;
  write_text_file(path, all.dump(2) + "\n");
}

}  // namespace

void gen_data(const ExperimentConfig& c, int workers) {
  const Layout out{c.output_dir};
  CorpusRequest req{c.dataset.demos_per_mode, c.dataset.seed};
  const auto demos = generate_corpus(c.env, req, c.expert, workers);
  const Dataset ds = window_dataset(c.env, demos, c.dataset.T, c.dataset.stride);
  save_dataset(ds, out.dataset());

  ModeHistogram hist;
  hist.counts.assign(mode_count(c.env.kind), 0);
  double min_pair = std::numeric_limits<double>::infinity();
  double min_obstacle = std::numeric_limits<double>::infinity();
  std::size_t max_horizon = 0;
  for (const auto& d : demos) {
    const auto m = classify_mode(std::span<const JointState>(d.states), c.env);
    if (m)
      ++hist.counts[m->label];
    else
      ++hist.unclassified;
    min_pair = std::min(min_pair, min_pairwise_distances(d.states).overall_min());
    for (double v : min_obstacle_distances(d.states, c.env.obstacles))
      min_obstacle = std::min(min_obstacle, v);
    max_horizon = std::max(max_horizon, d.horizon);
  }
  nlohmann::json s;
  s["env"] = to_string(c.env.kind);
  s["env_digest"] = c.env.digest();
  s["demos"] = demos.size();
  nlohmann::json modes = nlohmann::json::object();
  for (std::size_t m = 0; m < hist.counts.size(); ++m)
    modes[mode_name({c.env.kind, static_cast<int>(m)})] = hist.counts[m];
  modes["unclassified"] = hist.unclassified;
  s["modes"] = modes;
  s["modes_present"] = hist.distinct_modes();
  s["min_pairwise_clearance"] = min_pair;
  if (!c.env.obstacles.empty()) s["min_obstacle_center_distance"] = min_obstacle;
  s["max_demo_horizon"] = max_horizon;
  s["windows_per_agent"] = ds.windows.empty() ? 0 : ds.windows.front().size();
  s["total_windows"] = ds.total_windows();
  s["T"] = ds.horizon;
  s["stride"] = ds.stride;
  write_text_file(out.dataset_summary(), s.dump(2) + "\n");
  write_resolved_config(c, "config.gen-data.ini");
  log("dataset: " + std::to_string(demos.size()) + " demos, " + std::to_string(ds.total_windows()) +
      " windows, " + std::to_string(hist.distinct_modes()) + " modes present");
}

void train(const ExperimentConfig& c, int, const std::string& resume) {
  const Layout out{c.output_dir};
  if (!std::filesystem::exists(out.dataset()))
    throw ValidationError("dataset " + out.dataset() + " not found; run gen-data first");
  const Dataset ds = load_dataset(out.dataset());
  if (ds.env.digest() != c.env.digest())
    throw BindingError("dataset was generated for a different environment configuration");
  const std::string method = to_string(c.train.method);
  std::unique_ptr<Trainer> trainer;
  if (resume.empty())
    trainer = std::make_unique<Trainer>(ds, c.train);
  else
    trainer = std::make_unique<Trainer>(ds, c.train, load_checkpoint(resume));
  trainer->run(
      [&](const LossRecord& r) {
        if (r.step % (c.train.log_every * 10) == 0 || r.step == 1)
          log(method + " step " + std::to_string(r.step) + " loss " + std::to_string(r.total) +
              " smoothed " + std::to_string(r.smoothed));
      },
      [&](const JointPolicySet& snap) {
        save_checkpoint(snap, out.root + "/checkpoints/" + method + "_step" +
                                  std::to_string(snap.steps_done) + ".ckpt");
      });
  save_checkpoint(trainer->snapshot(), out.checkpoint(method));
  write_text_file(out.loss_csv(method), loss_log_csv(trainer->log(), ds.n_agents()));
  write_resolved_config(c, "config.train-" + method + ".ini");
  log(method + ": checkpoint " + out.checkpoint(method));
}

void eval(const ExperimentConfig& c, const std::string& checkpoint, int workers) {
  const Layout out{c.output_dir};
  const JointPolicySet set = load_checkpoint(checkpoint);
  require_binding(set, c.env);
  const std::string method = to_string(set.method);
  RolloutConfig rc = c.rollout;
  rc.T = set.T;
  const auto episodes = batch_rollout(set, c.env, rc, c.n_episodes, rc.seed, workers);
  save_episodes(episodes, rc, out.episodes(method));

  const std::size_t n_ref = c.eval.emd_set_size;
  const auto expert = held_out_expert_set(c.env, n_ref, c.eval.emd_seed, c.expert);
  const auto split = held_out_expert_set(c.env, n_ref, derive_seed(c.eval.emd_seed, 1), c.expert);
  const EvaluationResult r = evaluate(method, episodes, expert, split, c.env, c.eval);

  const std::pair<std::string, CollisionTable> crow[] = {{method, r.collisions}};
  write_text_file(out.metrics("collisions_" + method + ".csv"), collision_csv(crow));
  const std::pair<std::string, EmdReport> erow[] = {{method, r.emd}, {"expert-split", r.emd_noise_floor}};
  write_text_file(out.metrics("emd_" + method + ".csv"), emd_csv(erow));
  write_text_file(out.metrics("modes_" + method + ".csv"), mode_histogram_csv(r.modes, c.env.kind));
  update_summary(out, method, summary_json(r, c.env));
  write_text_file(out.report("paths_" + method + ".svg"), paths_svg(c.env, episodes, expert));
  write_resolved_config(c, "config.eval-" + method + ".ini");
  log(method + ": " + std::to_string(r.goals_reached) + "/" + std::to_string(episodes.size()) +
      " reached goals, total collisions at first threshold " +
      std::to_string(r.collisions.total_counts.front()));
}

int run(int argc, char** argv) {
  CLI::App app{"Decentralized multi-agent diffusion policies: data, training, evaluation"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  int workers = 1;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "experiment INI file")->required();
    sub->add_option("--set", overrides, "override a key, section.key=value (repeatable)");
    sub->add_option("--workers", workers, "parallel workers")->check(CLI::PositiveNumber);
  };
  auto* gen = app.add_subcommand("gen-data", "generate the expert corpus and training windows");
  common(gen);
  std::string method;
  std::string resume;
  auto* tr = app.add_subcommand("train", "train one method on the generated dataset");
  common(tr);
  tr->add_option("--method", method, "mimic-d, vanilla or bc (default: train.method)");
  tr->add_option("--resume", resume, "continue from a mid-training checkpoint");
  std::string checkpoint;
  auto* ev = app.add_subcommand("eval", "roll out a checkpoint and compute metrics");
  common(ev);
  ev->add_option("--checkpoint", checkpoint, "policy checkpoint")->required();
  std::vector<std::string> methods{"mimic-d", "vanilla", "bc"};
  auto* all = app.add_subcommand("run", "gen-data, train and eval for each method");
  common(all);
  all->add_option("--methods", methods, "methods to run")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kOk : kValidation;
  }

  try {
    if (!method.empty()) overrides.push_back("train.method=" + method);
    ExperimentConfig c = load_experiment(config_path, overrides);
    kernels::set_threads(workers);
    if (gen->parsed()) {
      gen_data(c, workers);
    } else if (tr->parsed()) {
      train(c, workers, resume);
    } else if (ev->parsed()) {
      eval(c, checkpoint, workers);
    } else {
      gen_data(c, workers);
      for (const auto& m : methods) {
        ExperimentConfig cm = c;
        cm.train.method = method_from_string(m);
        train(cm, workers);
        eval(cm, Layout{c.output_dir}.checkpoint(m), workers);
      }
    }
    return kOk;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const BindingError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const VersionError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kValidation;
  } catch (const GenerationError& e) {
    std::cerr << "error: constraint " << e.constraint() << " violated: " << e.what() << '\n';
    return kRuntime;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

}  // namespace mimicd::cli
