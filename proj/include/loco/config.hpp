#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "loco/encoders.hpp"
#include "loco/env.hpp"
#include "loco/ppo.hpp"

namespace loco {

// Flat "section.key -> value" store for INI-style text:
//   [section]
//   key = value   # comment
class KVConfig {
 public:
  static KVConfig parse_text(const std::string& text);
  static KVConfig parse_file(const std::string& path);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  void set(const std::string& key, const std::string& value);
  void erase(const std::string& key) { kv_.erase(key); }

  // keys sorted, one "key = value" per line, grouped into sections
  std::string canonical_text() const;
  std::uint64_t hash() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

struct RunConfig {
  std::string profile = "mini";
  std::string net_variant = "locotransformer";
  std::string env_variant = "thin_obs";
  long long total_steps = 1000000;
  int checkpoint_every = 25;  // updates
  NetConfig net;
  EnvConfig env;
  PPOConfig ppo;

  void validate() const;
};

// Profile presets; CLI flags and config files override on top of these.
RunConfig make_run_config(const std::string& profile, const std::string& env_variant,
                          const std::string& net_variant);

RunConfig run_config_from_kv(const KVConfig& kv);
KVConfig run_config_to_kv(const RunConfig& rc);

inline std::string serialize_run_config(const RunConfig& rc) {
  return run_config_to_kv(rc).canonical_text();
}

// Identity hash used to gate checkpoint resumes: the step budget and
// checkpoint cadence are runtime knobs, not part of the run's identity.
inline std::uint64_t run_config_hash(const RunConfig& rc) {
  KVConfig kv = run_config_to_kv(rc);
  kv.erase("run.steps");
  kv.erase("run.checkpoint_every");
  return kv.hash();
}

// "8x8s4p2,16x4s2p1" <-> conv plan (out_ch x kernel s stride p padding)
std::string conv_plan_to_string(const std::vector<ConvSpec>& plan);
std::vector<ConvSpec> conv_plan_from_string(const std::string& text);

std::string int_list_to_string(const std::vector<int>& v);
std::vector<int> int_list_from_string(const std::string& text);

}  // namespace loco
