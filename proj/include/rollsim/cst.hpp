#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rollsim/types.hpp"

namespace rollsim {

// Query parameters for draft generation, plus the confidence cutoffs that
// bound beam extension. min_support = 1 leaves the support cutoff disabled.
struct SpeculationArgs {
  int max_spec_tokens = 8;
  int pattern_lookup_max = 6;
  int pattern_lookup_min = 1;
  int top_k = 1;
  double min_step_freq = 0.25;
  long long min_support = 1;
};

struct DraftCandidate {
  TokenSeq tokens;
  double score = 0.0;      // product of per-step conditional frequencies, in (0, 1]
  long long support = 0;   // occurrence count of the full matched continuation
};

// Canonical candidate order: score desc, support desc, tokens lexicographic.
bool candidate_before(const DraftCandidate& a, const DraftCandidate& b);

// Per-group draft index over the emitted tokens of all member requests.
//
// Internally a depth-bounded suffix trie over sliding windows: every
// contiguous substring of a request stream up to max_pattern_len +
// max_spec_len tokens is a trie path carrying its occurrence count. Suffix
// lookup costs O(p) and each beam extension O(children); windows never span
// request boundaries, so streams stay isolated by construction. Queries are
// clamped to the construction-time limits.
class GroupDraftIndex {
 public:
  struct Limits {
    int max_pattern_len = 8;
    int max_spec_len = 16;
  };

  explicit GroupDraftIndex(std::string group_id, Limits limits = Limits{});

  struct AppendResult {
    bool ok = false;
    std::uint64_t version = 0;       // current version after the call
    std::uint64_t acked_tokens = 0;  // tokens stored for this request
  };

  // Append new_tokens for one request stream. prev_token_count must equal
  // the tokens already stored for that request; a mismatch leaves the index
  // unchanged and reports the acknowledged count so the caller can resend.
  AppendResult append(int request_id, std::uint64_t prev_token_count, std::span<const Token> new_tokens);

  // Multi-path draft query. Matches the longest suffix of `pattern` with
  // length in [pattern_lookup_min, pattern_lookup_max] present in the index,
  // then beam-walks width top_k ranked by occurrence counts. Empty result is
  // a valid outcome.
  std::vector<DraftCandidate> speculate(std::span<const Token> pattern, const SpeculationArgs& args) const;

  std::uint64_t version() const { return version_; }
  const std::string& group_id() const { return group_id_; }
  Limits limits() const { return limits_; }
  std::uint64_t stored_tokens(int request_id) const;
  std::vector<int> request_ids() const;
  const TokenSeq& stream(int request_id) const;
  std::size_t node_count() const { return nodes_.size(); }

  // Incremental sync. delta_since returns the append log from since_version
  // to the current version, or nullopt when that history was compacted and
  // the caller must fall back to a full snapshot. Blobs are self-describing
  // big-endian records (magic "GDX1") that round-trip across processes.
  std::optional<std::vector<std::uint8_t>> delta_since(std::uint64_t since_version) const;
  std::vector<std::uint8_t> full_snapshot() const;

  // Applies a delta or full-snapshot blob. Deltas require the replica to be
  // exactly at the blob's from_version. Returns the new version.
  std::uint64_t apply_blob(std::span<const std::uint8_t> blob);

  // Drops append-log history strictly before the given version. Replicas
  // older than the horizon will be told to fall back to a full snapshot.
  void compact_log(std::uint64_t before_version);

 private:
  struct Node {
    std::uint32_t count = 0;
    Token token = -1;
    std::uint32_t first_child = 0;  // 0 = none (node 0 is the root)
    std::uint32_t next_sibling = 0;
  };

  // Open-addressing (parent, token) -> child map; tombstone-free since the
  // trie is append-only.
  class EdgeMap {
   public:
    EdgeMap();
    std::uint32_t find(std::uint64_t key) const;  // 0 = absent
    void insert(std::uint64_t key, std::uint32_t value);

   private:
    void grow();
    std::vector<std::uint64_t> keys_;
    std::vector<std::uint32_t> vals_;
    std::size_t size_ = 0;
    std::size_t mask_ = 0;
  };

  struct Stream {
    TokenSeq tokens;
    std::vector<std::uint32_t> active;  // active[i] = node for the last (i+1)-token context
  };

  struct LogEntry {
    int request_id = 0;
    std::uint64_t start = 0;
    std::uint32_t len = 0;
  };

  std::uint32_t child_of(std::uint32_t node, Token t) const;
  std::uint32_t ensure_child(std::uint32_t node, Token t);
  void insert_token(Stream& s, Token t);

  std::string group_id_;
  Limits limits_;
  std::uint64_t version_ = 0;
  std::uint64_t log_floor_ = 0;  // version of the first retained log entry
  std::vector<Node> nodes_;
  EdgeMap edges_;
  std::map<int, Stream> streams_;
  std::vector<LogEntry> log_;
};

// Brute-force reference for speculate: scans every window of the given
// sequences for matches and continuation counts, then applies the same
// scoring and beam rules by exhaustive search. Kept independent of
// GroupDraftIndex internals; used as the testing oracle.
std::vector<DraftCandidate> speculate_oracle(std::span<const TokenSeq> sequences,
                                             std::span<const Token> pattern,
                                             const SpeculationArgs& args);

}  // namespace rollsim
