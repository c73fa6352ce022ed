#include "rollsim/cst.hpp"

#include <algorithm>
#include <cassert>
#include <stdexcept>

#include "rollsim/detail/bytes.hpp"
#include "rollsim/detail/rng.hpp"

namespace rollsim {

namespace {

constexpr std::uint8_t kBlobKindDelta = 1;
constexpr std::uint8_t kBlobKindFull = 2;
constexpr char kBlobMagic[4] = {'G', 'D', 'X', '1'};

void validate_args(const SpeculationArgs& a) {
  if (a.pattern_lookup_min < 1 || a.pattern_lookup_min > a.pattern_lookup_max)
    throw std::invalid_argument("speculation args: need 1 <= pattern_lookup_min <= pattern_lookup_max");
  if (a.max_spec_tokens < 0) throw std::invalid_argument("speculation args: max_spec_tokens must be >= 0");
  if (a.top_k < 1) throw std::invalid_argument("speculation args: top_k must be >= 1");
  if (a.min_step_freq < 0.0) throw std::invalid_argument("speculation args: min_step_freq must be >= 0");
  if (a.min_support < 0) throw std::invalid_argument("speculation args: min_support must be >= 0");
}

}  // namespace

bool candidate_before(const DraftCandidate& a, const DraftCandidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.support != b.support) return a.support > b.support;
  return a.tokens < b.tokens;
}

// ---------------------------------------------------------------------------
// EdgeMap

GroupDraftIndex::EdgeMap::EdgeMap() : keys_(64, ~0ull), vals_(64, 0), mask_(63) {}

std::uint32_t GroupDraftIndex::EdgeMap::find(std::uint64_t key) const {
  std::size_t i = detail::splitmix64(key) & mask_;
  while (true) {
    if (keys_[i] == key) return vals_[i];
    if (keys_[i] == ~0ull) return 0;
    i = (i + 1) & mask_;
  }
}

void GroupDraftIndex::EdgeMap::insert(std::uint64_t key, std::uint32_t value) {
  if ((size_ + 1) * 10 >= keys_.size() * 7) grow();
  std::size_t i = detail::splitmix64(key) & mask_;
  while (keys_[i] != ~0ull) {
    assert(keys_[i] != key);
    i = (i + 1) & mask_;
  }
  keys_[i] = key;
  vals_[i] = value;
  ++size_;
}

void GroupDraftIndex::EdgeMap::grow() {
  std::vector<std::uint64_t> old_keys(keys_.size() * 2, ~0ull);
  std::vector<std::uint32_t> old_vals(vals_.size() * 2, 0);
  old_keys.swap(keys_);
  old_vals.swap(vals_);
  mask_ = keys_.size() - 1;
  for (std::size_t j = 0; j < old_keys.size(); ++j) {
    if (old_keys[j] == ~0ull) continue;
    std::size_t i = detail::splitmix64(old_keys[j]) & mask_;
    while (keys_[i] != ~0ull) i = (i + 1) & mask_;
    keys_[i] = old_keys[j];
    vals_[i] = old_vals[j];
  }
}

// ---------------------------------------------------------------------------
// GroupDraftIndex

GroupDraftIndex::GroupDraftIndex(std::string group_id, Limits limits)
    : group_id_(std::move(group_id)), limits_(limits) {
  if (limits_.max_pattern_len < 1 || limits_.max_spec_len < 0)
    throw std::invalid_argument("draft index limits out of range");
  nodes_.push_back(Node{});  // node 0 = root (empty context)
}

std::uint32_t GroupDraftIndex::child_of(std::uint32_t node, Token t) const {
  return edges_.find((static_cast<std::uint64_t>(node) << 32) | static_cast<std::uint32_t>(t));
}

std::uint32_t GroupDraftIndex::ensure_child(std::uint32_t node, Token t) {
  std::uint64_t key = (static_cast<std::uint64_t>(node) << 32) | static_cast<std::uint32_t>(t);
  std::uint32_t child = edges_.find(key);
  if (child == 0) {
    child = static_cast<std::uint32_t>(nodes_.size());
    Node n;
    n.token = t;
    n.next_sibling = nodes_[node].first_child;
    nodes_.push_back(n);
    nodes_[node].first_child = child;
    edges_.insert(key, child);
  }
  return child;
}

void GroupDraftIndex::insert_token(Stream& s, Token t) {
  const std::size_t depth_cap =
      static_cast<std::size_t>(limits_.max_pattern_len) + static_cast<std::size_t>(limits_.max_spec_len);
  if (s.active.size() < depth_cap) s.active.push_back(0);
  for (std::size_t i = s.active.size() - 1; i >= 1; --i) {
    s.active[i] = ensure_child(s.active[i - 1], t);
    ++nodes_[s.active[i]].count;
  }
  s.active[0] = ensure_child(0, t);
  ++nodes_[s.active[0]].count;
  s.tokens.push_back(t);
}

GroupDraftIndex::AppendResult GroupDraftIndex::append(int request_id, std::uint64_t prev_token_count,
                                                      std::span<const Token> new_tokens) {
  if (request_id < 0) throw std::invalid_argument("request_id must be nonnegative");
  Stream& s = streams_[request_id];  // creates empty stream on first touch
  if (prev_token_count != s.tokens.size())
    return AppendResult{false, version_, s.tokens.size()};
  if (new_tokens.empty()) return AppendResult{true, version_, s.tokens.size()};

  for (Token t : new_tokens) {
    if (t < 0) throw std::invalid_argument("negative token");
    insert_token(s, t);
  }
  log_.push_back(LogEntry{request_id, prev_token_count, static_cast<std::uint32_t>(new_tokens.size())});
  ++version_;
  return AppendResult{true, version_, s.tokens.size()};
}

std::uint64_t GroupDraftIndex::stored_tokens(int request_id) const {
  auto it = streams_.find(request_id);
  return it == streams_.end() ? 0 : it->second.tokens.size();
}

std::vector<int> GroupDraftIndex::request_ids() const {
  std::vector<int> ids;
  ids.reserve(streams_.size());
  for (const auto& [id, s] : streams_) ids.push_back(id);
  return ids;
}

const TokenSeq& GroupDraftIndex::stream(int request_id) const {
  auto it = streams_.find(request_id);
  if (it == streams_.end()) throw std::out_of_range("unknown request stream");
  return it->second.tokens;
}

std::vector<DraftCandidate> GroupDraftIndex::speculate(std::span<const Token> pattern,
                                                       const SpeculationArgs& args) const {
  validate_args(args);
  const int eff_pmax = std::min(args.pattern_lookup_max, limits_.max_pattern_len);
  const int eff_smax = std::min(args.max_spec_tokens, limits_.max_spec_len);
  if (pattern.empty() || args.pattern_lookup_min > eff_pmax) return {};

  // Longest admissible suffix first.
  std::uint32_t locus = 0;
  int start = std::min<int>(eff_pmax, static_cast<int>(pattern.size()));
  for (int len = start; len >= args.pattern_lookup_min; --len) {
    std::uint32_t node = 0;
    bool ok = true;
    for (int i = static_cast<int>(pattern.size()) - len; i < static_cast<int>(pattern.size()); ++i) {
      node = child_of(node, pattern[i]);
      if (node == 0) {
        ok = false;
        break;
      }
    }
    if (ok) {
      locus = node;
      break;
    }
  }
  if (locus == 0) return {};

  struct Path {
    std::uint32_t node;
    double score;
    long long support;
    TokenSeq tokens;
  };
  auto path_before = [](const Path& a, const Path& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.support != b.support) return a.support > b.support;
    return a.tokens < b.tokens;
  };

  std::vector<Path> beam{Path{locus, 1.0, static_cast<long long>(nodes_[locus].count), {}}};
  std::vector<DraftCandidate> finals;
  std::vector<Path> pool;

  for (int depth = 0; depth < eff_smax && !beam.empty(); ++depth) {
    pool.clear();
    for (Path& p : beam) {
      bool extended = false;
      for (std::uint32_t c = nodes_[p.node].first_child; c != 0; c = nodes_[c].next_sibling) {
        long long cnt = static_cast<long long>(nodes_[c].count);
        double step = static_cast<double>(cnt) / static_cast<double>(nodes_[p.node].count);
        if (step < args.min_step_freq || cnt < args.min_support) continue;
        Path q;
        q.node = c;
        q.score = p.score * step;
        q.support = cnt;
        q.tokens = p.tokens;
        q.tokens.push_back(nodes_[c].token);
        pool.push_back(std::move(q));
        extended = true;
      }
      if (!extended && !p.tokens.empty())
        finals.push_back(DraftCandidate{std::move(p.tokens), p.score, p.support});
    }
    if (static_cast<int>(pool.size()) > args.top_k) {
      std::sort(pool.begin(), pool.end(), path_before);
      pool.resize(static_cast<std::size_t>(args.top_k));
    }
    beam.swap(pool);
  }
  for (Path& p : beam)
    if (!p.tokens.empty()) finals.push_back(DraftCandidate{std::move(p.tokens), p.score, p.support});

  std::sort(finals.begin(), finals.end(), candidate_before);
  if (static_cast<int>(finals.size()) > args.top_k) finals.resize(static_cast<std::size_t>(args.top_k));
  return finals;
}

// ---------------------------------------------------------------------------
// Delta sync

std::optional<std::vector<std::uint8_t>> GroupDraftIndex::delta_since(std::uint64_t since_version) const {
  if (since_version > version_) throw std::invalid_argument("delta_since: version from the future");
  if (since_version < log_floor_) return std::nullopt;  // compacted; full snapshot needed

  detail::ByteWriter w;
  w.raw(reinterpret_cast<const std::uint8_t*>(kBlobMagic), 4);
  w.u8(kBlobKindDelta);
  w.str(group_id_);
  w.u64(since_version);
  w.u64(version_);
  std::size_t first = static_cast<std::size_t>(since_version - log_floor_);
  w.u32(static_cast<std::uint32_t>(log_.size() - first));
  for (std::size_t k = first; k < log_.size(); ++k) {
    const LogEntry& e = log_[k];
    w.u32(static_cast<std::uint32_t>(e.request_id));
    w.u64(e.start);
    w.u32(e.len);
    const TokenSeq& toks = streams_.at(e.request_id).tokens;
    for (std::uint32_t i = 0; i < e.len; ++i) w.i32(toks[e.start + i]);
  }
  return w.take();
}

std::vector<std::uint8_t> GroupDraftIndex::full_snapshot() const {
  detail::ByteWriter w;
  w.raw(reinterpret_cast<const std::uint8_t*>(kBlobMagic), 4);
  w.u8(kBlobKindFull);
  w.str(group_id_);
  w.u64(0);
  w.u64(version_);
  w.u32(static_cast<std::uint32_t>(streams_.size()));
  for (const auto& [id, s] : streams_) {
    w.u32(static_cast<std::uint32_t>(id));
    w.u64(s.tokens.size());
    for (Token t : s.tokens) w.i32(t);
  }
  return w.take();
}

std::uint64_t GroupDraftIndex::apply_blob(std::span<const std::uint8_t> blob) {
  detail::ByteReader r(blob.data(), blob.size());
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kBlobMagic, 4) != 0) throw std::runtime_error("bad draft blob magic");
  std::uint8_t kind = r.u8();
  std::string gid = r.str();
  if (gid != group_id_) throw std::runtime_error("draft blob for group " + gid + " applied to " + group_id_);
  std::uint64_t from = r.u64();
  std::uint64_t to = r.u64();

  if (kind == kBlobKindDelta) {
    if (from != version_)
      throw std::runtime_error("delta expects replica at version " + std::to_string(from) +
                               ", replica is at " + std::to_string(version_));
    std::uint32_t n = r.u32();
    for (std::uint32_t k = 0; k < n; ++k) {
      std::uint32_t request_id = r.u32();
      std::uint64_t start = r.u64();
      std::uint32_t len = r.u32();
      TokenSeq toks(len);
      for (std::uint32_t i = 0; i < len; ++i) toks[i] = r.i32();
      AppendResult res = append(static_cast<int>(request_id), start, toks);
      if (!res.ok) throw std::runtime_error("delta entry out of order during apply");
    }
    if (version_ != to) throw std::runtime_error("delta apply ended at unexpected version");
    return version_;
  }
  if (kind == kBlobKindFull) {
    nodes_.clear();
    nodes_.push_back(Node{});
    edges_ = EdgeMap();
    streams_.clear();
    log_.clear();
    version_ = 0;
    std::uint32_t n = r.u32();
    for (std::uint32_t k = 0; k < n; ++k) {
      std::uint32_t request_id = r.u32();
      std::uint64_t len = r.u64();
      Stream& s = streams_[static_cast<int>(request_id)];
      s.tokens.reserve(len);
      for (std::uint64_t i = 0; i < len; ++i) insert_token(s, r.i32());
    }
    // A restored replica owns no history older than the snapshot.
    version_ = to;
    log_floor_ = to;
    log_.clear();
    return version_;
  }
  throw std::runtime_error("unknown draft blob kind");
}

void GroupDraftIndex::compact_log(std::uint64_t before_version) {
  std::uint64_t new_floor = std::min(before_version, version_);
  if (new_floor <= log_floor_) return;
  log_.erase(log_.begin(), log_.begin() + static_cast<std::ptrdiff_t>(new_floor - log_floor_));
  log_floor_ = new_floor;
}

// ---------------------------------------------------------------------------
// Brute-force oracle

namespace {

long long scan_count(std::span<const TokenSeq> seqs, const TokenSeq& ctx) {
  long long n = 0;
  for (const TokenSeq& s : seqs) {
    if (s.size() < ctx.size()) continue;
    for (std::size_t i = 0; i + ctx.size() <= s.size(); ++i) {
      bool eq = true;
      for (std::size_t j = 0; j < ctx.size(); ++j) {
        if (s[i + j] != ctx[j]) {
          eq = false;
          break;
        }
      }
      if (eq) ++n;
    }
  }
  return n;
}

// Continuation counts of ctx, in first-seen scan order.
std::vector<std::pair<Token, long long>> scan_continuations(std::span<const TokenSeq> seqs,
                                                            const TokenSeq& ctx) {
  std::vector<std::pair<Token, long long>> out;
  for (const TokenSeq& s : seqs) {
    if (s.size() < ctx.size() + 1) continue;
    for (std::size_t i = 0; i + ctx.size() + 1 <= s.size(); ++i) {
      bool eq = true;
      for (std::size_t j = 0; j < ctx.size(); ++j) {
        if (s[i + j] != ctx[j]) {
          eq = false;
          break;
        }
      }
      if (!eq) continue;
      Token next = s[i + ctx.size()];
      bool found = false;
      for (auto& [t, c] : out) {
        if (t == next) {
          ++c;
          found = true;
          break;
        }
      }
      if (!found) out.emplace_back(next, 1);
    }
  }
  return out;
}

}  // namespace

std::vector<DraftCandidate> speculate_oracle(std::span<const TokenSeq> sequences,
                                             std::span<const Token> pattern,
                                             const SpeculationArgs& args) {
  validate_args(args);
  if (pattern.empty()) return {};

  TokenSeq match;
  long long match_count = 0;
  int start = std::min<int>(args.pattern_lookup_max, static_cast<int>(pattern.size()));
  for (int len = start; len >= args.pattern_lookup_min; --len) {
    TokenSeq suffix(pattern.end() - len, pattern.end());
    long long n = scan_count(sequences, suffix);
    if (n > 0) {
      match = std::move(suffix);
      match_count = n;
      break;
    }
  }
  if (match_count == 0) return {};

  struct Path {
    TokenSeq ctx;  // match + drafted tokens
    double score;
    long long support;
    TokenSeq tokens;
  };
  auto path_before = [](const Path& a, const Path& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.support != b.support) return a.support > b.support;
    return a.tokens < b.tokens;
  };

  std::vector<Path> beam{Path{match, 1.0, match_count, {}}};
  std::vector<DraftCandidate> finals;

  for (int depth = 0; depth < args.max_spec_tokens && !beam.empty(); ++depth) {
    std::vector<Path> pool;
    for (Path& p : beam) {
      bool extended = false;
      for (auto [t, cnt] : scan_continuations(sequences, p.ctx)) {
        double step = static_cast<double>(cnt) / static_cast<double>(p.support);
        if (step < args.min_step_freq || cnt < args.min_support) continue;
        Path q;
        q.ctx = p.ctx;
        q.ctx.push_back(t);
        q.score = p.score * step;
        q.support = cnt;
        q.tokens = p.tokens;
        q.tokens.push_back(t);
        pool.push_back(std::move(q));
        extended = true;
      }
      if (!extended && !p.tokens.empty())
        finals.push_back(DraftCandidate{std::move(p.tokens), p.score, p.support});
    }
    if (static_cast<int>(pool.size()) > args.top_k) {
      std::sort(pool.begin(), pool.end(), path_before);
      pool.resize(static_cast<std::size_t>(args.top_k));
    }
    beam.swap(pool);
  }
  for (Path& p : beam)
    if (!p.tokens.empty()) finals.push_back(DraftCandidate{std::move(p.tokens), p.score, p.support});

  std::sort(finals.begin(), finals.end(), candidate_before);
  if (static_cast<int>(finals.size()) > args.top_k) finals.resize(static_cast<std::size_t>(args.top_k));
  return finals;
}

}  // namespace rollsim
