#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mimicd/errors.hpp"
#include "mimicd/expert.hpp"
#include "mimicd/serialize.hpp"

namespace mimicd {

namespace {
constexpr const char* kDatasetTag = "mimicd-dataset";
}

std::string dataset_to_text(const Dataset& ds) {
  nlohmann::json header;
  header["format"] = kDatasetTag;
  header["format_version"] = Dataset::kFormatVersion;
  header["env"] = ds.env.to_json();
  header["T"] = ds.horizon;
  header["N"] = ds.n_agents();
  header["stride"] = ds.stride;
  header["seed"] = ds.seed;
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [mode, count] : ds.demos_per_mode) m[std::to_string(mode)] = count;
  header["M"] = m;
  auto counts = nlohmann::json::array();
  for (const auto& w : ds.windows) counts.push_back(w.size());
  header["windows"] = counts;

  std::string out = header.dump() + "\n";
  for (const auto& per_agent : ds.windows)
    for (const TrainingWindow& w : per_agent) {
      nlohmann::json rec;
      rec["agent"] = w.agent_index;
      rec["obs"] = hex_array(w.observation);
      rec["actions"] = hex_array(w.actions.values);
      out += rec.dump();
      out += '\n';
    }
  return out;
}

Dataset dataset_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto parse_line = [&](const char* what) {
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dataset line " + std::to_string(line_no) + " (" + what +
                       "): " + e.what());
    }
  };
  if (!std::getline(in, line)) throw ParseError("dataset: empty file");
  ++line_no;
  const nlohmann::json header = parse_line("header");
  if (header.value("format", std::string()) != kDatasetTag)
    throw ParseError("dataset line 1: not a dataset file");
  const int version = header.value("format_version", -1);
  if (version != Dataset::kFormatVersion)
    throw VersionError("dataset format_version " + std::to_string(version) +
                       " unsupported (expected " + std::to_string(Dataset::kFormatVersion) +
                       ")");
  Dataset ds;
  std::vector<std::size_t> expected;
  try {
    ds.env = EnvSpec::from_json(header.at("env"));
    ds.horizon = header.at("T").get<std::size_t>();
    ds.stride = header.at("stride").get<std::size_t>();
    ds.seed = header.at("seed").get<std::uint64_t>();
    for (const auto& [k, v] : header.at("M").items()) ds.demos_per_mode[std::stoi(k)] = v.get<int>();
    expected = header.at("windows").get<std::vector<std::size_t>>();
    if (expected.size() != header.at("N").get<std::size_t>())
      throw ParseError("dataset header: N disagrees with window counts");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("dataset line 1 (header): ") + e.what());
  }
  ds.windows.resize(expected.size());
  std::size_t total = 0;
  for (std::size_t n : expected) total += n;
  const std::size_t obs_len_full = obs_dim(ds.env, ObsMode::Full);
  for (std::size_t r = 0; r < total; ++r) {
    if (!std::getline(in, line))
      throw ParseError("dataset truncated: expected " + std::to_string(total) +
                       " window records, found " + std::to_string(r));
    ++line_no;
    const nlohmann::json rec = parse_line("window");
    try {
      TrainingWindow w;
      w.agent_index = rec.at("agent").get<std::size_t>();
      if (w.agent_index >= ds.windows.size())
        throw ParseError("dataset line " + std::to_string(line_no) + ": agent index out of range");
      w.observation = parse_hex_array(rec.at("obs"));
      w.actions = ActionTrajectory(ds.horizon, parse_hex_array(rec.at("actions")));
      if (w.observation.size() != obs_len_full)
        throw ParseError("dataset line " + std::to_string(line_no) + ": observation length " +
                         std::to_string(w.observation.size()));
      ds.windows[w.agent_index].push_back(std::move(w));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("dataset line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ParseError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  for (std::size_t i = 0; i < expected.size(); ++i)
    if (ds.windows[i].size() != expected[i])
      throw ParseError("dataset: agent " + std::to_string(i) + " has " +
                       std::to_string(ds.windows[i].size()) + " windows, header says " +
                       std::to_string(expected[i]));
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty())
      throw ParseError("dataset line " + std::to_string(line_no) + ": trailing record");
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) {
  write_text_file(path, dataset_to_text(dataset));
}

Dataset load_dataset(const std::string& path) { return dataset_from_text(read_text_file(path)); }

}  // namespace mimicd
