#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "rollsim/cst.hpp"
#include "rollsim/types.hpp"

namespace rollsim {

struct DgdsParams {
  int shard_count = 1;
  double fetch_period = 0.2;        // seconds of simulated time; 0 = always fresh
  int append_batch_tokens = 16;     // per-request batching threshold for update_cst
  double default_ttl_seconds = 600.0;
  GroupDraftIndex::Limits limits;
};

struct DraftCacheInfo {
  std::string group_id;
  std::uint64_t cached_version = 0;  // 0 = no local replica
};

enum class FetchKind : std::uint8_t { UpToDate = 0, Delta = 1, Full = 2, UnknownGroup = 3 };

struct FetchReply {
  FetchKind kind = FetchKind::UnknownGroup;
  std::uint64_t version = 0;
  std::vector<std::uint8_t> blob;
};

struct UpdateReply {
  bool ok = false;
  std::uint64_t version = 0;
  std::uint64_t acked_tokens = 0;  // on resync, resend from this count
};

// Stable group -> shard routing (FNV-1a over the group id).
int shard_of_group(const std::string& group_id, int shard_count);

// Grouped draft server: owns one GroupDraftIndex per registered group,
// sharded by group hash. Mutations are serialized per shard; distinct shards
// are independent.
class DraftServer {
 public:
  explicit DraftServer(DgdsParams params);

  UpdateReply update_cst(const std::string& group_id, int request_id, std::uint64_t prev_token_count,
                         std::span<const Token> new_tokens, SimTime now);
  std::vector<FetchReply> fetch_cst(std::span<const std::string> group_ids,
                                    std::span<const DraftCacheInfo> infos, SimTime now);
  void register_group(const std::string& group_id, double ttl_seconds, SimTime now);
  void drop_group(const std::string& group_id);
  void sweep_expired(SimTime now);

  // Server-side query; used by tests as the freshness oracle for clients.
  std::vector<DraftCandidate> speculate(const std::string& group_id, std::span<const Token> pattern,
                                        const SpeculationArgs& args) const;

  int shard_count() const { return params_.shard_count; }
  const DgdsParams& params() const { return params_; }
  bool has_group(const std::string& group_id) const;
  std::uint64_t group_version(const std::string& group_id) const;  // 0 if absent
  void compact_group(const std::string& group_id, std::uint64_t before_version);
  std::size_t shard_group_count(int shard) const;

 private:
  struct Entry {
    GroupDraftIndex index;
    double ttl = 0.0;
    SimTime expires_at = 0.0;
    explicit Entry(std::string gid, GroupDraftIndex::Limits limits, double ttl_s, SimTime now)
        : index(std::move(gid), limits), ttl(ttl_s), expires_at(now + ttl_s) {}
  };
  struct Shard {
    std::map<std::string, Entry> groups;
    mutable std::mutex mu;
  };

  Entry* find_entry(int shard, const std::string& gid, SimTime now);

  DgdsParams params_;
  std::vector<std::unique_ptr<Shard>> shards_;
};

// Transport seam between DraftClient and the server: in-process calls or the
// framed TCP protocol.
class DraftTransport {
 public:
  virtual ~DraftTransport() = default;
  virtual UpdateReply update_cst(const std::string& group_id, int request_id, std::uint64_t prev_token_count,
                                 std::span<const Token> new_tokens, SimTime now) = 0;
  virtual std::vector<FetchReply> fetch_cst(std::span<const std::string> group_ids,
                                            std::span<const DraftCacheInfo> infos, SimTime now) = 0;
  virtual void register_group(const std::string& group_id, double ttl_seconds, SimTime now) = 0;
};

class LocalTransport final : public DraftTransport {
 public:
  explicit LocalTransport(DraftServer& server) : server_(server) {}
  UpdateReply update_cst(const std::string& group_id, int request_id, std::uint64_t prev_token_count,
                         std::span<const Token> new_tokens, SimTime now) override;
  std::vector<FetchReply> fetch_cst(std::span<const std::string> group_ids,
                                    std::span<const DraftCacheInfo> infos, SimTime now) override;
  void register_group(const std::string& group_id, double ttl_seconds, SimTime now) override;

 private:
  DraftServer& server_;
};

struct SpecQuery {
  std::string group_id;
  TokenSeq pattern;
  SpeculationArgs args;
};

// Instance-embedded draft client: batches appends, periodically pulls
// incremental deltas for the groups it is working on, and answers
// batch_speculate from local replicas only, keeping the decode critical path
// free of round trips.
class DraftClient {
 public:
  DraftClient(DraftTransport& transport, DgdsParams params);

  void register_group(const std::string& group_id, double ttl_seconds, SimTime now);
  // Buffer tokens for (group, request); flushes automatically once the
  // pending run reaches append_batch_tokens.
  void note_tokens(const std::string& group_id, int request_id, std::span<const Token> tokens, SimTime now);
  void flush(SimTime now);  // push all pending appends
  void set_active_groups(std::vector<std::string> group_ids);
  bool fetch_due(SimTime now) const;
  void fetch_active(SimTime now);  // sync replicas of active groups
  void drop_replica(const std::string& group_id);

  std::vector<std::vector<DraftCandidate>> batch_speculate(std::span<const SpecQuery> queries, SimTime now);

  std::uint64_t cached_version(const std::string& group_id) const;
  const DgdsParams& params() const { return params_; }

 private:
  struct PendingStream {
    TokenSeq sent_and_pending;   // every token handed to note_tokens, in order
    std::uint64_t acked = 0;     // server-acknowledged token count
  };

  void push_stream(const std::string& group_id, int request_id, PendingStream& ps, SimTime now);
  void fetch_groups(const std::vector<std::string>& ids, SimTime now);

  DraftTransport& transport_;
  DgdsParams params_;
  std::map<std::pair<std::string, int>, PendingStream> pending_;
  std::map<std::string, GroupDraftIndex> replicas_;
  std::vector<std::string> active_groups_;
  SimTime last_fetch_ = -1.0;
};

}  // namespace rollsim
