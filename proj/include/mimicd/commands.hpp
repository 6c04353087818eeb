#pragma once

#include <string>
#include <vector>

#include "mimicd/config.hpp"

namespace mimicd::cli {

enum ExitCode { kOk = 0, kValidation = 1, kRuntime = 2 };

// Output layout under the configured directory.
struct Layout {
  std::string root;
  std::string dataset() const { return root + "/dataset/dataset.jsonl"; }
  std::string dataset_summary() const { return root + "/dataset/summary.json"; }
  std::string checkpoint(const std::string& method) const {
    return root + "/checkpoints/" + method + ".ckpt";
  }
  std::string loss_csv(const std::string& method) const {
    return root + "/metrics/loss_" + method + ".csv";
  }
  std::string episodes(const std::string& method) const {
    return root + "/episodes/" + method + ".jsonl";
  }
  std::string metrics(const std::string& name) const { return root + "/metrics/" + name; }
  std::string report(const std::string& name) const { return root + "/report/" + name; }
};

void gen_data(const ExperimentConfig& config, int workers);
void train(const ExperimentConfig& config, int workers, const std::string& resume = "");
void eval(const ExperimentConfig& config, const std::string& checkpoint, int workers);

// Parses argv and runs one subcommand; returns the process exit code.
int run(int argc, char** argv);

}  // namespace mimicd::cli
