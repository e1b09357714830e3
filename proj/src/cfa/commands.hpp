#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace cfa {

// Command-line overrides applied to the config document before parsing, so
// derived defaults (seeds, paths) resolve against the effective values.
struct RunOptions {
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> ranges;  // grid only, "lo:hi,lo:hi,..."
  int jobs = 1;
  bool overwrite = false;
  bool dump_keys = false;
};

// Each command reads one JSON config, runs end to end and writes its
// artifacts under out_dir. Progress goes to stderr. Errors are thrown:
// ConfigError, DataError and IoError mean a bad input, TrainingFault a
// diverged run, EvalError an undefined metric or a missing model artifact.
void cmd_synth(const std::string& config_path, const RunOptions& opt);
void cmd_train(const std::string& config_path, const RunOptions& opt);
void cmd_eval(const std::string& config_path, const RunOptions& opt);
void cmd_grid(const std::string& config_path, const RunOptions& opt);
void cmd_probe(const std::string& config_path, const RunOptions& opt);

}  // namespace cfa
