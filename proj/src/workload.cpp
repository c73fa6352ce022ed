#include "rollsim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "rollsim/detail/bytes.hpp"
#include "rollsim/detail/rng.hpp"

namespace rollsim {

namespace {

void validate_config(const WorkloadConfig& c) {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("workload config: " + msg); };
  if (c.num_groups < 1) fail("num_groups must be >= 1");
  if (c.group_size < 1) fail("group_size must be >= 1");
  if (c.vocab_size < 2) fail("vocab_size must be >= 2");
  if (c.max_tokens < 1) fail("max_tokens must be >= 1");
  const auto& lm = c.length_model;
  if (!(lm.location > 0.0)) fail("length location must be positive");
  if (!(lm.scale >= 0.0)) fail("length scale must be nonnegative");
  if (lm.family == LengthFamily::Pareto && !(lm.scale > 0.0)) fail("pareto alpha must be positive");
  if (!(lm.group_correlation >= 0.0 && lm.group_correlation <= 1.0))
    fail("group_correlation must be in [0, 1]");
  if (!(lm.noise_base >= 0.0)) fail("noise_base must be nonnegative");
  if (!(c.pattern_similarity >= 0.0 && c.pattern_similarity <= 1.0))
    fail("pattern_similarity must be in [0, 1]");
  if (!(c.prompt_len_model.mean >= 1.0)) fail("prompt mean must be >= 1");
  if (!(c.prompt_len_model.spread >= 0.0)) fail("prompt spread must be nonnegative");
}

int clamp_len(double v, int max_tokens) {
  if (!(v > 0.5)) return 1;
  double r = std::floor(v + 0.5);
  if (r < 1.0) return 1;
  if (r > static_cast<double>(max_tokens)) return max_tokens;
  return static_cast<int>(r);
}

}  // namespace

std::vector<PromptGroup> generate_workload(const WorkloadConfig& config) {
  validate_config(config);
  const auto& lm = config.length_model;
  std::vector<PromptGroup> trace;
  trace.reserve(config.num_groups);

  for (int g = 0; g < config.num_groups; ++g) {
    detail::Rng rng(detail::mix_seed(config.seed, static_cast<std::uint64_t>(g)));

    PromptGroup group;
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "g%05d", g);
    group.group_id = idbuf;
    group.group_size = config.group_size;
    group.max_tokens = config.max_tokens;
    group.prompt_len = clamp_len(
        rng.normal(config.prompt_len_model.mean, config.prompt_len_model.spread),
        std::numeric_limits<int>::max());

    double target = lm.family == LengthFamily::Lognormal
                        ? rng.lognormal(std::log(lm.location), lm.scale)
                        : rng.pareto(lm.location, lm.scale);
    if (target > static_cast<double>(config.max_tokens)) target = config.max_tokens;

    double eps_spread = (1.0 - lm.group_correlation) * lm.noise_base;
    std::vector<int> lengths(config.group_size);
    int longest = 1;
    for (int i = 0; i < config.group_size; ++i) {
      double eps = rng.normal(0.0, eps_spread);
      lengths[i] = clamp_len(target * (1.0 + eps), config.max_tokens);
      longest = std::max(longest, lengths[i]);
    }

    TokenSeq tmpl(longest);
    for (int j = 0; j < longest; ++j)
      tmpl[j] = static_cast<Token>(rng.uniform_below(static_cast<std::uint64_t>(config.vocab_size)));

    group.outputs.resize(config.group_size);
    for (int i = 0; i < config.group_size; ++i) {
      TokenSeq& out = group.outputs[i];
      out.resize(lengths[i]);
      for (int j = 0; j < lengths[i]; ++j) {
        if (rng.uniform01() < config.pattern_similarity) {
          out[j] = tmpl[j];
        } else {
          out[j] = static_cast<Token>(rng.uniform_below(static_cast<std::uint64_t>(config.vocab_size)));
        }
      }
    }
    trace.push_back(std::move(group));
  }
  return trace;
}

std::string trace_to_string(const std::vector<PromptGroup>& trace) {
  std::string out;
  for (const auto& g : trace) {
    for (std::size_t i = 0; i < g.outputs.size(); ++i) {
      out += "{\"group_id\":\"";
      out += g.group_id;
      out += "\",\"request_index\":";
      out += std::to_string(i);
      out += ",\"prompt_len\":";
      out += std::to_string(g.prompt_len);
      out += ",\"max_tokens\":";
      out += std::to_string(g.max_tokens);
      out += ",\"output_tokens\":[";
      const TokenSeq& seq = g.outputs[i];
      for (std::size_t j = 0; j < seq.size(); ++j) {
        if (j) out += ',';
        out += std::to_string(seq[j]);
      }
      out += "]}\n";
    }
  }
  return out;
}

void save_trace(const std::vector<PromptGroup>& trace, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open trace file for writing: " + path);
  f << trace_to_string(trace);
  if (!f) throw std::runtime_error("short write to trace file: " + path);
}

std::vector<PromptGroup> parse_trace(std::istream& in, const std::string& origin) {
  struct Partial {
    int prompt_len = -1;
    int max_tokens = -1;
    std::map<int, TokenSeq> outputs;
    std::size_t order = 0;
  };
  std::unordered_map<std::string, Partial> partials;
  std::vector<std::string> order;

  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": " + msg);
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("malformed record: ") + e.what());
    }
    if (!j.is_object()) fail("record is not an object");
    for (const char* key : {"group_id", "request_index", "prompt_len", "max_tokens", "output_tokens"})
      if (!j.contains(key)) fail(std::string("missing field '") + key + "'");

    std::string gid = j["group_id"].get<std::string>();
    int idx = j["request_index"].get<int>();
    int prompt_len = j["prompt_len"].get<int>();
    int max_tokens = j["max_tokens"].get<int>();
    if (idx < 0) fail("request_index must be nonnegative");
    if (prompt_len < 0) fail("prompt_len must be nonnegative");
    if (max_tokens < 1) fail("max_tokens must be >= 1");

    TokenSeq toks;
    const auto& arr = j["output_tokens"];
    if (!arr.is_array()) fail("output_tokens must be an array");
    toks.reserve(arr.size());
    for (const auto& t : arr) {
      if (!t.is_number_integer()) fail("output token is not an integer");
      long long v = t.get<long long>();
      if (v < 0) fail("output token must be nonnegative");
      toks.push_back(static_cast<Token>(v));
    }
    if (toks.empty()) fail("output_tokens must be nonempty");
    if (static_cast<int>(toks.size()) > max_tokens) fail("output longer than max_tokens");

    auto it = partials.find(gid);
    if (it == partials.end()) {
      Partial p;
      p.prompt_len = prompt_len;
      p.max_tokens = max_tokens;
      p.order = order.size();
      order.push_back(gid);
      it = partials.emplace(gid, std::move(p)).first;
    } else {
      if (it->second.prompt_len != prompt_len) fail("inconsistent prompt_len for group " + gid);
      if (it->second.max_tokens != max_tokens) fail("inconsistent max_tokens for group " + gid);
    }
    if (!it->second.outputs.emplace(idx, std::move(toks)).second)
      fail("duplicate (group_id, request_index) = (" + gid + ", " + std::to_string(idx) + ")");
  }

  std::vector<PromptGroup> trace(order.size());
  for (const auto& gid : order) {
    const Partial& p = partials.at(gid);
    PromptGroup g;
    g.group_id = gid;
    g.prompt_len = p.prompt_len;
    g.max_tokens = p.max_tokens;
    g.group_size = static_cast<int>(p.outputs.size());
    int expect = 0;
    for (const auto& [idx, seq] : p.outputs) {
      if (idx != expect)
        throw std::runtime_error(origin + ": group " + gid + " request indexes are not contiguous (missing " +
                                 std::to_string(expect) + ")");
      ++expect;
      g.outputs.push_back(seq);
    }
    trace[partials.at(gid).order] = std::move(g);
  }
  return trace;
}

std::vector<PromptGroup> load_trace(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open trace file: " + path);
  return parse_trace(f, path);
}

std::uint64_t trace_fingerprint(const std::vector<PromptGroup>& trace) {
  std::string s = trace_to_string(trace);
  return detail::fnv1a64(s.data(), s.size());
}

std::vector<double> compute_group_advantages(const GroupRewards& rewards, double eps) {
  const auto& r = rewards.rewards;
  if (r.empty()) throw std::invalid_argument("compute_group_advantages: empty rewards");
  if (eps < 0.0) throw std::invalid_argument("compute_group_advantages: eps must be nonnegative");
  for (double v : r)
    if (!std::isfinite(v)) throw std::invalid_argument("compute_group_advantages: nonfinite reward");

  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= static_cast<double>(r.size());
  double var = 0.0;
  for (double v : r) var += (v - mean) * (v - mean);
  var /= static_cast<double>(r.size());
  double denom = std::max(std::sqrt(var), eps);

  std::vector<double> adv(r.size());
  for (std::size_t i = 0; i < r.size(); ++i)
    adv[i] = denom > 0.0 ? (r[i] - mean) / denom : 0.0;
  return adv;
}

LengthSummary length_summary(const std::vector<PromptGroup>& trace) {
  if (trace.empty()) throw std::invalid_argument("length_summary: empty trace");

  LengthSummary s;
  std::vector<int> lens;
  for (const auto& g : trace) {
    double mean = 0.0;
    for (const auto& seq : g.outputs) {
      lens.push_back(static_cast<int>(seq.size()));
      mean += static_cast<double>(seq.size());
    }
    mean /= static_cast<double>(g.outputs.size());
    double var = 0.0;
    for (const auto& seq : g.outputs) {
      double d = static_cast<double>(seq.size()) - mean;
      var += d * d;
    }
    var /= static_cast<double>(g.outputs.size());
    s.groups.push_back({g.group_id, mean, std::sqrt(var)});
  }

  std::sort(lens.begin(), lens.end());
  s.total_requests = static_cast<long long>(lens.size());
  auto nearest_rank = [&](double q) {
    std::size_t rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(lens.size())));
    if (rank < 1) rank = 1;
    return lens[rank - 1];
  };
  s.p50 = nearest_rank(0.50);
  s.p90 = nearest_rank(0.90);
  s.p99 = nearest_rank(0.99);
  s.max = lens.back();

  long long hi = 2;
  long long lo = 1;
  while (lo <= s.max) {
    LengthSummary::Bin bin;
    bin.lo = lo;
    bin.hi = hi;
    auto first = std::lower_bound(lens.begin(), lens.end(), lo);
    auto last = std::lower_bound(lens.begin(), lens.end(), hi);
    bin.count = static_cast<long long>(last - first);
    s.bins.push_back(bin);
    lo = hi;
    hi *= 2;
  }
  return s;
}

}  // namespace rollsim
