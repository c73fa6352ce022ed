#include "rollsim/kvpool.hpp"

#include <algorithm>

namespace rollsim {

KvPool::KvPool(KvParams params, int num_instances) : params_(params) {
  if (num_instances < 1) throw std::invalid_argument("kvpool: need at least one instance");
  if (params_.instance_capacity_tokens == 0 || params_.dram_capacity_tokens == 0 ||
      params_.ssd_capacity_tokens == 0)
    throw std::invalid_argument("kvpool: capacities must be positive");
  if (!(params_.dram_bandwidth > 0.0) || !(params_.ssd_bandwidth > 0.0))
    throw std::invalid_argument("kvpool: bandwidths must be positive");
  if (params_.ssd_bandwidth > params_.dram_bandwidth)
    throw std::invalid_argument("kvpool: ssd_bandwidth must not exceed dram_bandwidth");
  instance_used_.assign(static_cast<std::size_t>(num_instances), 0);
}

KvPool::Entry& KvPool::entry_of(const KvKey& key) {
  auto it = entries_.find(key);
  if (it == entries_.end())
    throw std::out_of_range("kvpool: unknown entry " + key.group_id + "#" + std::to_string(key.request_index));
  return it->second;
}

const KvPool::Entry& KvPool::entry_of(const KvKey& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end())
    throw std::out_of_range("kvpool: unknown entry " + key.group_id + "#" + std::to_string(key.request_index));
  return it->second;
}

void KvPool::emit(const KvKey& key, KvTier from, KvTier to, std::uint64_t tokens, double duration,
                  SimTime now) {
  if (telemetry_) telemetry_(KvTransferEvent{now, key, from, to, tokens, duration});
}

void KvPool::create_on_instance(const KvKey& key, int instance, std::uint64_t tokens, SimTime now) {
  if (entries_.count(key)) throw std::logic_error("kvpool: entry already exists");
  Entry e;
  e.tokens = tokens;
  e.tier = KvTier::Instance;
  e.instance = instance;
  e.last_touch = now;
  e.touch_seq = ++touch_counter_;
  instance_used_.at(instance) += tokens;
  entries_.emplace(key, e);
}

void KvPool::grow(const KvKey& key, std::uint64_t delta_tokens) {
  Entry& e = entry_of(key);
  if (e.tier != KvTier::Instance) throw std::logic_error("kvpool: grow on non-resident entry");
  e.tokens += delta_tokens;
  instance_used_.at(e.instance) += delta_tokens;
}

void KvPool::ensure_dram_space(std::uint64_t tokens, SimTime now) {
  while (dram_used_ + tokens > params_.dram_capacity_tokens) {
    // Demote the least recently touched DRAM entry to SSD.
    std::map<KvKey, Entry>::iterator victim = entries_.end();
    for (auto it = entries_.begin(); it != entries_.end(); ++it) {
      if (it->second.tier != KvTier::Dram || it->second.offloading) continue;
      if (victim == entries_.end() || it->second.last_touch < victim->second.last_touch ||
          (it->second.last_touch == victim->second.last_touch &&
           it->second.touch_seq < victim->second.touch_seq))
        victim = it;
    }
    if (victim == entries_.end())
      throw KvCapacityError("kv pool exhausted: DRAM over capacity with nothing left to demote (need " +
                            std::to_string(tokens) + " tokens)");
    if (ssd_used_ + victim->second.tokens > params_.ssd_capacity_tokens)
      throw KvCapacityError("kv pool exhausted: DRAM and SSD full while storing " + std::to_string(tokens) +
                            " tokens; increase pool sizing");
    dram_used_ -= victim->second.tokens;
    ssd_used_ += victim->second.tokens;
    victim->second.tier = KvTier::Ssd;
    emit(victim->first, KvTier::Dram, KvTier::Ssd, victim->second.tokens,
         static_cast<double>(victim->second.tokens) / params_.ssd_bandwidth, now);
  }
}

KvPool::Offload KvPool::begin_offload(const KvKey& key, SimTime now) {
  Entry& e = entry_of(key);
  if (e.tier != KvTier::Instance) throw std::logic_error("kvpool: offload of non-resident entry");
  if (e.offloading) throw std::logic_error("kvpool: offload already in flight");

  Offload result;
  if (e.tokens <= params_.dram_capacity_tokens) {
    ensure_dram_space(e.tokens, now);
    e.tier = KvTier::Dram;
    dram_used_ += e.tokens;
    result.dest = KvTier::Dram;
    result.duration = static_cast<double>(e.tokens) / params_.dram_bandwidth;
  } else {
    if (ssd_used_ + e.tokens > params_.ssd_capacity_tokens)
      throw KvCapacityError("kv pool exhausted: entry of " + std::to_string(e.tokens) +
                            " tokens does not fit in SSD");
    e.tier = KvTier::Ssd;
    ssd_used_ += e.tokens;
    result.dest = KvTier::Ssd;
    result.duration = static_cast<double>(e.tokens) / params_.ssd_bandwidth;
  }
  e.offloading = true;
  e.last_touch = now;
  e.touch_seq = ++touch_counter_;
  emit(key, KvTier::Instance, result.dest, e.tokens, result.duration, now);
  return result;
}

void KvPool::complete_offload(const KvKey& key) {
  Entry& e = entry_of(key);
  if (!e.offloading) throw std::logic_error("kvpool: no offload in flight");
  instance_used_.at(e.instance) -= e.tokens;
  e.instance = -1;
  e.offloading = false;
}

double KvPool::load(const KvKey& key, int instance, SimTime now) {
  Entry& e = entry_of(key);
  if (e.tier == KvTier::Instance) throw std::logic_error("kvpool: load of already-resident entry");
  if (e.offloading) throw std::logic_error("kvpool: load during offload");
  double bandwidth = e.tier == KvTier::Dram ? params_.dram_bandwidth : params_.ssd_bandwidth;
  double duration = static_cast<double>(e.tokens) / bandwidth;
  if (e.tier == KvTier::Dram)
    dram_used_ -= e.tokens;
  else
    ssd_used_ -= e.tokens;
  KvTier from = e.tier;
  e.tier = KvTier::Instance;
  e.instance = instance;
  instance_used_.at(instance) += e.tokens;
  e.last_touch = now;
  e.touch_seq = ++touch_counter_;
  emit(key, from, KvTier::Instance, e.tokens, duration, now);
  return duration;
}

std::uint64_t KvPool::release(const KvKey& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) {
    ++double_release_warnings_;
    return 0;
  }
  Entry& e = it->second;
  std::uint64_t freed = e.tokens;
  if (e.offloading) instance_used_.at(e.instance) -= e.tokens;
  switch (e.tier) {
    case KvTier::Instance: instance_used_.at(e.instance) -= e.tokens; break;
    case KvTier::Dram: dram_used_ -= e.tokens; break;
    case KvTier::Ssd: ssd_used_ -= e.tokens; break;
  }
  released_total_ += freed;
  entries_.erase(it);
  return freed;
}

void KvPool::drop(const KvKey& key) {
  auto it = entries_.find(key);
  if (it == entries_.end()) return;
  Entry& e = it->second;
  if (e.offloading) instance_used_.at(e.instance) -= e.tokens;
  switch (e.tier) {
    case KvTier::Instance: instance_used_.at(e.instance) -= e.tokens; break;
    case KvTier::Dram: dram_used_ -= e.tokens; break;
    case KvTier::Ssd: ssd_used_ -= e.tokens; break;
  }
  entries_.erase(it);
}

std::uint64_t KvPool::resident_tokens(const KvKey& key) const { return entry_of(key).tokens; }

KvTier KvPool::tier(const KvKey& key) const { return entry_of(key).tier; }

}  // namespace rollsim
