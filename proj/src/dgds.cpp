#include "rollsim/dgds.hpp"

#include <algorithm>
#include <stdexcept>

#include "rollsim/detail/bytes.hpp"

namespace rollsim {

int shard_of_group(const std::string& group_id, int shard_count) {
  if (shard_count < 1) throw std::invalid_argument("shard_count must be >= 1");
  std::uint64_t h = detail::fnv1a64(group_id.data(), group_id.size());
  return static_cast<int>(h % static_cast<std::uint64_t>(shard_count));
}

// ---------------------------------------------------------------------------
// DraftServer

DraftServer::DraftServer(DgdsParams params) : params_(params) {
  if (params_.shard_count < 1) throw std::invalid_argument("shard_count must be >= 1");
  shards_.reserve(params_.shard_count);
  for (int i = 0; i < params_.shard_count; ++i) shards_.push_back(std::make_unique<Shard>());
}

DraftServer::Entry* DraftServer::find_entry(int shard, const std::string& gid, SimTime now) {
  auto& groups = shards_[shard]->groups;
  auto it = groups.find(gid);
  if (it == groups.end()) return nullptr;
  if (it->second.expires_at < now) {
    groups.erase(it);
    return nullptr;
  }
  return &it->second;
}

UpdateReply DraftServer::update_cst(const std::string& group_id, int request_id,
                                    std::uint64_t prev_token_count, std::span<const Token> new_tokens,
                                    SimTime now) {
  int shard = shard_of_group(group_id, params_.shard_count);
  std::lock_guard<std::mutex> lock(shards_[shard]->mu);
  Entry* e = find_entry(shard, group_id, now);
  if (e == nullptr) {
    // Auto-register on first append with the default TTL.
    auto [it, inserted] = shards_[shard]->groups.try_emplace(
        group_id, group_id, params_.limits, params_.default_ttl_seconds, now);
    e = &it->second;
  }
  e->expires_at = now + e->ttl;
  auto res = e->index.append(request_id, prev_token_count, new_tokens);
  return UpdateReply{res.ok, res.version, res.acked_tokens};
}

std::vector<FetchReply> DraftServer::fetch_cst(std::span<const std::string> group_ids,
                                               std::span<const DraftCacheInfo> infos, SimTime now) {
  if (group_ids.size() != infos.size())
    throw std::invalid_argument("fetch_cst: group_ids and draft_cache_infos must have equal length");
  std::vector<FetchReply> replies(group_ids.size());
  for (std::size_t i = 0; i < group_ids.size(); ++i) {
    const std::string& gid = group_ids[i];
    int shard = shard_of_group(gid, params_.shard_count);
    std::lock_guard<std::mutex> lock(shards_[shard]->mu);
    Entry* e = find_entry(shard, gid, now);
    FetchReply& rep = replies[i];
    if (e == nullptr) {
      rep.kind = FetchKind::UnknownGroup;
      continue;
    }
    e->expires_at = now + e->ttl;
    std::uint64_t cached = infos[i].cached_version;
    std::uint64_t current = e->index.version();
    rep.version = current;
    if (cached > current) {
      // Stale replica of a re-created group; resend everything.
      rep.kind = FetchKind::Full;
      rep.blob = e->index.full_snapshot();
      continue;
    }
    if (cached == current) {
      rep.kind = FetchKind::UpToDate;
      continue;
    }
    if (cached == 0) {
      rep.kind = FetchKind::Full;
      rep.blob = e->index.full_snapshot();
      continue;
    }
    auto delta = e->index.delta_since(cached);
    if (delta.has_value()) {
      rep.kind = FetchKind::Delta;
      rep.blob = std::move(*delta);
    } else {
      rep.kind = FetchKind::Full;
      rep.blob = e->index.full_snapshot();
    }
  }
  return replies;
}

void DraftServer::register_group(const std::string& group_id, double ttl_seconds, SimTime now) {
  if (!(ttl_seconds > 0.0)) throw std::invalid_argument("register_group: ttl_seconds must be > 0");
  int shard = shard_of_group(group_id, params_.shard_count);
  std::lock_guard<std::mutex> lock(shards_[shard]->mu);
  Entry* e = find_entry(shard, group_id, now);
  if (e == nullptr) {
    shards_[shard]->groups.try_emplace(group_id, group_id, params_.limits, ttl_seconds, now);
  } else {
    e->ttl = ttl_seconds;
    e->expires_at = now + ttl_seconds;
  }
}

void DraftServer::drop_group(const std::string& group_id) {
  int shard = shard_of_group(group_id, params_.shard_count);
  std::lock_guard<std::mutex> lock(shards_[shard]->mu);
  shards_[shard]->groups.erase(group_id);
}

void DraftServer::sweep_expired(SimTime now) {
  for (auto& shard : shards_) {
    std::lock_guard<std::mutex> lock(shard->mu);
    for (auto it = shard->groups.begin(); it != shard->groups.end();) {
      if (it->second.expires_at < now)
        it = shard->groups.erase(it);
      else
        ++it;
    }
  }
}

std::vector<DraftCandidate> DraftServer::speculate(const std::string& group_id,
                                                   std::span<const Token> pattern,
                                                   const SpeculationArgs& args) const {
  int shard = shard_of_group(group_id, params_.shard_count);
  std::lock_guard<std::mutex> lock(shards_[shard]->mu);
  auto it = shards_[shard]->groups.find(group_id);
  if (it == shards_[shard]->groups.end()) return {};
  return it->second.index.speculate(pattern, args);
}

bool DraftServer::has_group(const std::string& group_id) const {
  int shard = shard_of_group(group_id, params_.shard_count);
  std::lock_guard<std::mutex> lock(shards_[shard]->mu);
  return shards_[shard]->groups.count(group_id) > 0;
}

std::uint64_t DraftServer::group_version(const std::string& group_id) const {
  int shard = shard_of_group(group_id, params_.shard_count);
  std::lock_guard<std::mutex> lock(shards_[shard]->mu);
  auto it = shards_[shard]->groups.find(group_id);
  return it == shards_[shard]->groups.end() ? 0 : it->second.index.version();
}

void DraftServer::compact_group(const std::string& group_id, std::uint64_t before_version) {
  int shard = shard_of_group(group_id, params_.shard_count);
  std::lock_guard<std::mutex> lock(shards_[shard]->mu);
  auto it = shards_[shard]->groups.find(group_id);
  if (it != shards_[shard]->groups.end()) it->second.index.compact_log(before_version);
}

std::size_t DraftServer::shard_group_count(int shard) const {
  std::lock_guard<std::mutex> lock(shards_[shard]->mu);
  return shards_[shard]->groups.size();
}

// ---------------------------------------------------------------------------
// LocalTransport

UpdateReply LocalTransport::update_cst(const std::string& group_id, int request_id,
                                       std::uint64_t prev_token_count, std::span<const Token> new_tokens,
                                       SimTime now) {
  return server_.update_cst(group_id, request_id, prev_token_count, new_tokens, now);
}

std::vector<FetchReply> LocalTransport::fetch_cst(std::span<const std::string> group_ids,
                                                  std::span<const DraftCacheInfo> infos, SimTime now) {
  return server_.fetch_cst(group_ids, infos, now);
}

void LocalTransport::register_group(const std::string& group_id, double ttl_seconds, SimTime now) {
  server_.register_group(group_id, ttl_seconds, now);
}

// ---------------------------------------------------------------------------
// DraftClient

DraftClient::DraftClient(DraftTransport& transport, DgdsParams params)
    : transport_(transport), params_(params) {}

void DraftClient::register_group(const std::string& group_id, double ttl_seconds, SimTime now) {
  transport_.register_group(group_id, ttl_seconds, now);
}

void DraftClient::push_stream(const std::string& group_id, int request_id, PendingStream& ps, SimTime now) {
  while (ps.acked < ps.sent_and_pending.size()) {
    std::span<const Token> chunk(ps.sent_and_pending.data() + ps.acked,
                                 ps.sent_and_pending.size() - ps.acked);
    UpdateReply rep = transport_.update_cst(group_id, request_id, ps.acked, chunk, now);
    if (rep.ok) {
      ps.acked = rep.acked_tokens;
    } else if (rep.acked_tokens > ps.acked && rep.acked_tokens <= ps.sent_and_pending.size()) {
      ps.acked = rep.acked_tokens;  // server is ahead of us (duplicate resend); skip forward
    } else if (rep.acked_tokens < ps.acked) {
      ps.acked = rep.acked_tokens;  // server lost state (TTL expiry); resend from its count
    } else {
      throw std::runtime_error("draft append resync cannot make progress for group " + group_id);
    }
  }
}

void DraftClient::note_tokens(const std::string& group_id, int request_id, std::span<const Token> tokens,
                              SimTime now) {
  if (tokens.empty()) return;
  PendingStream& ps = pending_[{group_id, request_id}];
  ps.sent_and_pending.insert(ps.sent_and_pending.end(), tokens.begin(), tokens.end());
  if (ps.sent_and_pending.size() - ps.acked >= static_cast<std::size_t>(params_.append_batch_tokens))
    push_stream(group_id, request_id, ps, now);
}

void DraftClient::flush(SimTime now) {
  for (auto& [key, ps] : pending_)
    if (ps.acked < ps.sent_and_pending.size()) push_stream(key.first, key.second, ps, now);
}

void DraftClient::set_active_groups(std::vector<std::string> group_ids) {
  std::sort(group_ids.begin(), group_ids.end());
  group_ids.erase(std::unique(group_ids.begin(), group_ids.end()), group_ids.end());
  active_groups_ = std::move(group_ids);
}

bool DraftClient::fetch_due(SimTime now) const {
  if (active_groups_.empty()) return false;
  return last_fetch_ < 0.0 || now - last_fetch_ >= params_.fetch_period;
}

void DraftClient::fetch_groups(const std::vector<std::string>& ids, SimTime now) {
  if (ids.empty()) return;
  std::vector<DraftCacheInfo> infos(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    infos[i].group_id = ids[i];
    infos[i].cached_version = cached_version(ids[i]);
  }
  auto replies = transport_.fetch_cst(ids, infos, now);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    FetchReply& rep = replies[i];
    switch (rep.kind) {
      case FetchKind::UpToDate:
        break;
      case FetchKind::UnknownGroup:
        replicas_.erase(ids[i]);
        break;
      case FetchKind::Delta: {
        auto it = replicas_.find(ids[i]);
        if (it == replicas_.end())
          throw std::runtime_error("delta for group without replica: " + ids[i]);
        it->second.apply_blob(rep.blob);
        break;
      }
      case FetchKind::Full: {
        auto [it, inserted] = replicas_.try_emplace(ids[i], ids[i], params_.limits);
        it->second.apply_blob(rep.blob);
        break;
      }
    }
  }
}

void DraftClient::fetch_active(SimTime now) {
  fetch_groups(active_groups_, now);
  last_fetch_ = now;
}

void DraftClient::drop_replica(const std::string& group_id) { replicas_.erase(group_id); }

std::vector<std::vector<DraftCandidate>> DraftClient::batch_speculate(std::span<const SpecQuery> queries,
                                                                      SimTime now) {
  if (params_.fetch_period == 0.0) {
    // Always-fresh mode: sync the queried groups before answering.
    std::vector<std::string> ids;
    ids.reserve(queries.size());
    for (const auto& q : queries) ids.push_back(q.group_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    fetch_groups(ids, now);
  }
  std::vector<std::vector<DraftCandidate>> out(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto it = replicas_.find(queries[i].group_id);
    if (it == replicas_.end()) continue;  // no replica -> empty candidates
    out[i] = it->second.speculate(queries[i].pattern, queries[i].args);
  }
  return out;
}

std::uint64_t DraftClient::cached_version(const std::string& group_id) const {
  auto it = replicas_.find(group_id);
  return it == replicas_.end() ? 0 : it->second.version();
}

}  // namespace rollsim
