#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "rollsim/types.hpp"

namespace rollsim {

enum class LengthFamily { Lognormal, Pareto };

// Per-group target length model. `location` is the median for the lognormal
// family and the minimum for Pareto; `scale` is sigma / alpha respectively.
// Within a group, request i gets round(L_g * (1 + eps_i)) with eps_i drawn
// at spread (1 - group_correlation) * noise_base. The multiplicative noise
// law is a stand-in; noise_base is exposed for sensitivity sweeps.
struct LengthModel {
  LengthFamily family = LengthFamily::Lognormal;
  double location = 1000.0;
  double scale = 1.0;
  double group_correlation = 0.9;  // rho_len in [0, 1]
  double noise_base = 0.5;
};

struct PromptLenModel {
  double mean = 512.0;
  double spread = 128.0;
};

struct WorkloadConfig {
  int num_groups = 16;
  int group_size = 8;
  LengthModel length_model;
  double pattern_similarity = 0.5;  // rho_pat in [0, 1]
  int vocab_size = 50000;
  int max_tokens = 8192;
  PromptLenModel prompt_len_model;
  std::uint64_t seed = 0;
};

// G responses sharing one prompt. Outputs are the ground-truth token
// sequences the simulator reveals during decoding.
struct PromptGroup {
  std::string group_id;
  int prompt_len = 0;
  int group_size = 0;
  int max_tokens = 0;
  std::vector<TokenSeq> outputs;
};

struct GroupRewards {
  std::vector<double> rewards;
};

// Deterministic synthetic trace: identical (config, seed) pairs produce
// byte-identical traces.
std::vector<PromptGroup> generate_workload(const WorkloadConfig& config);

// Line-delimited trace records, one request per line:
//   {"group_id":...,"request_index":...,"prompt_len":...,"max_tokens":...,
//    "output_tokens":[...]}
// Lines may appear in any order; loading validates all group invariants.
std::string trace_to_string(const std::vector<PromptGroup>& trace);
void save_trace(const std::vector<PromptGroup>& trace, const std::string& path);
std::vector<PromptGroup> load_trace(const std::string& path);
std::vector<PromptGroup> parse_trace(std::istream& in, const std::string& origin);

// Stable content hash used to guard against comparing runs of different
// traces.
std::uint64_t trace_fingerprint(const std::vector<PromptGroup>& trace);

// Group-normalized advantages: A_i = (r_i - mean) / max(population std, eps).
std::vector<double> compute_group_advantages(const GroupRewards& rewards, double eps = 1e-6);

struct LengthSummary {
  struct Bin {
    long long lo = 0;  // inclusive
    long long hi = 0;  // exclusive
    long long count = 0;
  };
  struct GroupStat {
    std::string group_id;
    double mean = 0.0;
    double stddev = 0.0;  // population
  };
  std::vector<Bin> bins;  // power-of-two spaced
  long long total_requests = 0;
  int p50 = 0;
  int p90 = 0;
  int p99 = 0;
  int max = 0;
  std::vector<GroupStat> groups;
};

// Output-length histogram and nearest-rank quantiles over a trace.
LengthSummary length_summary(const std::vector<PromptGroup>& trace);

}  // namespace rollsim
