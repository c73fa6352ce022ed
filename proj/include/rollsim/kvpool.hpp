#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rollsim/types.hpp"

namespace rollsim {

// Capacities are denominated in tokens; bytes_per_token is accounting-only
// metadata so the model stays tokenizer-free.
struct KvParams {
  std::uint64_t bytes_per_token = 2048;
  std::uint64_t instance_capacity_tokens = 1 << 17;
  std::uint64_t dram_capacity_tokens = 1 << 20;
  std::uint64_t ssd_capacity_tokens = 1 << 24;
  double dram_bandwidth = 1e6;  // tokens / second
  double ssd_bandwidth = 2e5;
};

enum class KvTier : std::uint8_t { Instance, Dram, Ssd };

struct KvKey {
  std::string group_id;
  int request_index = 0;
  bool operator<(const KvKey& o) const {
    if (group_id != o.group_id) return group_id < o.group_id;
    return request_index < o.request_index;
  }
  bool operator==(const KvKey& o) const = default;
};

struct KvTransferEvent {
  SimTime time = 0.0;
  KvKey key;
  KvTier from = KvTier::Instance;
  KvTier to = KvTier::Instance;
  std::uint64_t tokens = 0;
  double duration = 0.0;
};

class KvCapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Global KVCache pool: per-instance residency plus DRAM/SSD backing tiers.
// Prices migrations so divided re-dispatch is never free but never needs a
// prefill recomputation. Mutated only by the simulator event loop.
class KvPool {
 public:
  KvPool(KvParams params, int num_instances);

  // Entry lifecycle -------------------------------------------------------
  void create_on_instance(const KvKey& key, int instance, std::uint64_t tokens, SimTime now);
  void grow(const KvKey& key, std::uint64_t delta_tokens);

  struct Offload {
    double duration = 0.0;
    KvTier dest = KvTier::Dram;
  };
  // Starts moving an instance-resident entry to DRAM (or SSD when DRAM is
  // full after LRU demotion). Duration = resident_tokens / destination-tier
  // bandwidth. Destination space is taken immediately; the instance side is
  // freed by complete_offload, so both buffers are held during the copy.
  Offload begin_offload(const KvKey& key, SimTime now);
  void complete_offload(const KvKey& key);

  // Moves a pooled entry back onto an instance. Duration priced at the
  // source tier's bandwidth; overlap with compute is the caller's business.
  double load(const KvKey& key, int instance, SimTime now);

  // Returns freed tokens; double release is an idempotent no-op counted in
  // double_release_warnings.
  std::uint64_t release(const KvKey& key);

  // Baseline preemption path: discard without pooling.
  void drop(const KvKey& key);

  // Introspection ---------------------------------------------------------
  bool contains(const KvKey& key) const { return entries_.count(key) > 0; }
  std::uint64_t resident_tokens(const KvKey& key) const;
  KvTier tier(const KvKey& key) const;
  std::uint64_t instance_used(int instance) const { return instance_used_.at(instance); }
  std::uint64_t dram_used() const { return dram_used_; }
  std::uint64_t ssd_used() const { return ssd_used_; }
  std::uint64_t released_total() const { return released_total_; }
  int double_release_warnings() const { return double_release_warnings_; }
  const KvParams& params() const { return params_; }

  void set_telemetry(std::function<void(const KvTransferEvent&)> sink) { telemetry_ = std::move(sink); }

 private:
  struct Entry {
    std::uint64_t tokens = 0;
    KvTier tier = KvTier::Instance;
    int instance = -1;
    bool offloading = false;  // copy in flight; instance side still charged
    SimTime last_touch = 0.0;
    std::uint64_t touch_seq = 0;
  };

  Entry& entry_of(const KvKey& key);
  const Entry& entry_of(const KvKey& key) const;
  void ensure_dram_space(std::uint64_t tokens, SimTime now);
  void emit(const KvKey& key, KvTier from, KvTier to, std::uint64_t tokens, double duration, SimTime now);

  KvParams params_;
  std::map<KvKey, Entry> entries_;
  std::vector<std::uint64_t> instance_used_;
  std::uint64_t dram_used_ = 0;
  std::uint64_t ssd_used_ = 0;
  std::uint64_t released_total_ = 0;
  std::uint64_t touch_counter_ = 0;
  int double_release_warnings_ = 0;
  std::function<void(const KvTransferEvent&)> telemetry_;
};

}  // namespace rollsim
