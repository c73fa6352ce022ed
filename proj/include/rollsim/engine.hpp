#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rollsim/cst.hpp"
#include "rollsim/dgds.hpp"
#include "rollsim/kvpool.hpp"
#include "rollsim/types.hpp"

namespace rollsim {

// Token-linear step latency model for a simulated inference instance.
struct StepTimeModel {
  double t_base = 0.030;        // seconds per decode step
  double t_tok = 40e-6;         // seconds per decoded/verified token
  double t_prefill_tok = 10e-6; // seconds per prefilled token
  int batch_cap = 256;
};

// Draft-budget policy: with `enabled`, each step gives every running request
// d_r = min(per_request_cap, batch_token_budget / batch_size) draft tokens;
// otherwise the fixed per_request_cap is used regardless of concurrency.
struct AdaptiveSpecPolicy {
  int batch_token_budget = 64;
  int per_request_cap = 8;
  bool enabled = true;
  int multi_path_k = 1;
};

struct SpecConfig {
  bool sd_enabled = false;
  bool group_context = true;  // false = drafts come from the request's own history only
  AdaptiveSpecPolicy adaptive;
  SpeculationArgs args;  // lookup bounds and cutoffs; max_spec_tokens/top_k set per step
};

// Runtime state of one trace request inside a run.
struct SimRequest {
  Request meta;
  const TokenSeq* truth = nullptr;
  int slot = -1;

  int chunk_budget = 0;
  int chunk_emitted = 0;
  int instance = -1;
  std::uint64_t admit_seq = 0;
  bool kv_dropped = false;  // baseline preemption discarded the KV
  SimTime completion_time = -1.0;
  std::uint64_t emitted_hash = 0xcbf29ce484222325ull;
  long long emitted_total = 0;

  int remaining_truth() const {
    return static_cast<int>(truth->size()) - meta.generated_tokens;
  }
  int remaining_chunk() const { return chunk_budget - chunk_emitted; }
  KvKey kv_key() const { return KvKey{meta.group_id, meta.request_index}; }
};

// Where decode steps get their draft candidates from, and where emitted
// tokens are reported. Implementations: DGDS client (grouped), per-request
// local history, or none.
class SpeculationSource {
 public:
  virtual ~SpeculationSource() = default;
  virtual std::vector<std::vector<DraftCandidate>> batch(std::span<const SpecQuery> queries,
                                                         SimTime now) = 0;
  virtual void on_emitted(const std::string& group_id, int request_id, std::span<const Token> tokens,
                          SimTime now) = 0;
};

struct StepReport {
  SimTime time = 0.0;
  double duration = 0.0;
  int instance = -1;
  int batch = 0;
  long long drafted = 0;
  long long accepted = 0;
  long long emitted = 0;
  std::uint64_t kv_used = 0;
  struct PerRequest {
    int slot = -1;
    int drafted = 0;
    int accepted = 0;  // draft tokens consumed (emitted - 1)
    int emitted = 0;
  };
  std::vector<PerRequest> per_request;
};

// Simulated inference instance: continuous batching with a token-linear step
// model. In divided mode admissions reserve the full chunk footprint, so
// kv_used can never exceed capacity; baseline mode admits optimistically and
// preempts when growth overruns capacity.
class Instance {
 public:
  Instance(int id, const StepTimeModel& step_model, std::uint64_t kv_capacity_tokens, KvPool& pool,
           bool divided_mode);

  enum class AdmitOutcome { Accept, Refuse };

  // On accept: reserves capacity, creates/loads the KV entry, prices the
  // ready delay (prefill, re-prefill, or pool load) and marks the request
  // running on this instance (it joins the batch via make_ready).
  AdmitOutcome admit(SimRequest& req, int chunk_budget, SimTime now, double* ready_delay);
  void make_ready(SimRequest& req);

  // One decode step over the current batch. Advances request counters,
  // reports drafted/accepted/emitted tokens, and returns the step duration.
  // Callers apply finish_or_requeue at the step-end event.
  StepReport decode_step(SpeculationSource* drafts, const SpecConfig& spec, SimTime now);

  enum class Outcome { Finished, Requeued };
  // Decides the fate of a request that exhausted its chunk or its ground
  // truth. On Finished the KV is released immediately; on Requeued the caller
  // owns scheduling the offload.
  Outcome finish_or_requeue(SimRequest& req, SimTime now);

  // Baseline-mode capacity repair: evicts the most recently admitted request
  // until the next step fits. Victims lose their KV and pay a full re-prefill
  // of prompt + generated on re-admission.
  std::vector<SimRequest*> preempt_until_fits(std::span<SimRequest* const> all, SimTime now);

  int id() const { return id_; }
  bool divided_mode() const { return divided_; }
  std::uint64_t kv_capacity() const { return kv_capacity_; }
  std::uint64_t kv_used_actual() const { return pool_.instance_used(id_); }
  std::uint64_t kv_used_effective() const { return pool_.instance_used(id_) + pending_growth_; }
  int admitted_count() const { return admitted_count_; }
  const std::vector<SimRequest*>& running() const { return running_; }
  long long preemption_count() const { return preemption_count_; }
  const StepTimeModel& step_model() const { return step_model_; }

  bool fits(const SimRequest& req, int chunk_budget) const;
  void note_offload_complete(SimRequest& req);

 private:
  void detach(SimRequest& req, bool release_unused_budget);

  int id_;
  StepTimeModel step_model_;
  std::uint64_t kv_capacity_;
  KvPool& pool_;
  bool divided_;
  std::vector<SimRequest*> running_;
  std::uint64_t pending_growth_ = 0;  // unconsumed chunk budget of admitted requests
  int admitted_count_ = 0;            // running + admitted-but-not-ready
  std::uint64_t admit_counter_ = 0;
  long long preemption_count_ = 0;
};

}  // namespace rollsim
