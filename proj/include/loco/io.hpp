#pragma once

#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "loco/optim.hpp"
#include "loco/policy.hpp"

namespace loco {

// Binary checkpoint ("LCKP" v1): named f64 arrays for every parameter, the
// Adam moments, and run counters. Loading restores training bit-exactly.
struct CheckpointMeta {
  std::uint64_t config_hash = 0;
  std::uint64_t master_seed = 0;
  long long update_idx = 0;  // completed updates
  long long env_steps = 0;
  long long adam_step = 0;
};

void save_checkpoint(const std::string& path, const GaussianPolicy& policy,
                     const Adam& opt, const CheckpointMeta& meta);

// The policy/optimizer must already be built with matching shapes.
CheckpointMeta load_checkpoint(const std::string& path, GaussianPolicy& policy,
                               Adam& opt);

// Action recording ("LRPL" v1): full config text, the episode seed, and the
// flat action sequence. Enough to reproduce an episode exactly.
struct ReplayFile {
  std::string config_text;
  std::uint64_t seed = 0;
  int action_dim = 12;
  std::vector<double> actions;  // steps * action_dim

  int steps() const {
    return action_dim > 0 ? static_cast<int>(actions.size()) / action_dim : 0;
  }
};

void save_replay(const std::string& path, const ReplayFile& replay);
ReplayFile load_replay(const std::string& path);

// 8-bit binary PGM; values are clamped to [0, 1] then scaled to 0..255.
void write_pgm(const std::string& path, std::span<const double> vals, int width,
               int height);

// Comma-separated output with a schema comment line; doubles use %.17g.
class CsvWriter {
 public:
  // append = true continues an existing file without repeating the header
  CsvWriter(const std::string& path, const std::vector<std::string>& columns,
            int schema_version, bool append = false);
  void row(std::span<const double> vals);
  void flush();

 private:
  std::ofstream out_;
  size_t columns_ = 0;
};

// Reads back numeric CSV written by CsvWriter (comment lines skipped).
std::vector<std::vector<double>> read_csv(const std::string& path,
                                          std::vector<std::string>* header = nullptr);

}  // namespace loco
