#pragma once

// Command-line front end: synth, analyze, preprocess, train, evaluate.
//
// Settings resolve as defaults < config file (--config, INI sections) <
// command-line flags. Every command writes the resolved settings next to its
// outputs so a run can be repeated from them alone.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "etd/dataio.hpp"
#include "etd/train.hpp"

namespace etd::cli {

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "out";
  std::size_t threads = 1;

  std::filesystem::path input;  // CSV; empty means generate from synth
  SynthConfig synth;

  train::TrainConfig train;
  std::optional<train::MaskMode> compare_mask_mode;

  std::filesystem::path checkpoint;  // prefix of <prefix>.json / <prefix>.bin
  std::filesystem::path quantile;    // defaults to quantile.json beside the checkpoint
  double threshold = 0.5;
};

// Sets "section.key" from its text form; unknown keys and unparsable values
// raise usage errors naming the key.
void set_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_value(const RunConfig& cfg, const std::string& key);
std::vector<std::string> known_keys();

// INI text with [section] headers; keys outside any section are rejected.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& origin);
// Every key in known_keys() order, grouped by section.
std::string to_config_text(const RunConfig& cfg);

// The dataset named by cfg.input, or the synthetic one cfg.synth describes
// (seeded with cfg.seed).
Dataset load_dataset(const RunConfig& cfg);

// Runs one command. Returns the process exit status; errors are printed to
// err as "error[E_TAG]: message".
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace etd::cli
