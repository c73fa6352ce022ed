#include "rollsim/engine.hpp"

#include <algorithm>
#include <cassert>
#include <stdexcept>

#include "rollsim/detail/bytes.hpp"

namespace rollsim {

Instance::Instance(int id, const StepTimeModel& step_model, std::uint64_t kv_capacity_tokens,
                   KvPool& pool, bool divided_mode)
    : id_(id), step_model_(step_model), kv_capacity_(kv_capacity_tokens), pool_(pool),
      divided_(divided_mode) {
  if (step_model_.batch_cap < 1) throw std::invalid_argument("batch_cap must be >= 1");
}

bool Instance::fits(const SimRequest& req, int chunk_budget) const {
  if (admitted_count_ >= step_model_.batch_cap) return false;
  std::uint64_t footprint = static_cast<std::uint64_t>(req.meta.prompt_len) +
                            static_cast<std::uint64_t>(req.meta.generated_tokens);
  if (divided_) {
    footprint += static_cast<std::uint64_t>(chunk_budget);
    return kv_used_effective() + footprint <= kv_capacity_;
  }
  // Baseline admits on current residency only; later growth may preempt.
  return kv_used_actual() + footprint <= kv_capacity_;
}

Instance::AdmitOutcome Instance::admit(SimRequest& req, int chunk_budget, SimTime now,
                                       double* ready_delay) {
  if (chunk_budget < 1) throw std::invalid_argument("chunk_budget must be >= 1");
  if (req.meta.state != RequestState::Pending && req.meta.state != RequestState::Buffered)
    throw std::logic_error("admit: request not schedulable");
  if (!fits(req, chunk_budget)) return AdmitOutcome::Refuse;

  double delay = 0.0;
  KvKey key = req.kv_key();
  if (req.meta.state == RequestState::Pending) {
    delay = static_cast<double>(req.meta.prompt_len) * step_model_.t_prefill_tok;
    pool_.create_on_instance(key, id_, static_cast<std::uint64_t>(req.meta.prompt_len), now);
  } else if (req.kv_dropped) {
    // Preemption victim: full re-prefill of prompt + generated.
    std::uint64_t tokens = static_cast<std::uint64_t>(req.meta.prompt_len + req.meta.generated_tokens);
    delay = static_cast<double>(tokens) * step_model_.t_prefill_tok;
    pool_.create_on_instance(key, id_, tokens, now);
    req.kv_dropped = false;
  } else {
    // Divided re-dispatch: pay the KV migration, never a prefill.
    delay = pool_.load(key, id_, now);
  }

  req.meta.state = RequestState::Running;
  req.instance = id_;
  req.chunk_budget = chunk_budget;
  req.chunk_emitted = 0;
  req.admit_seq = ++admit_counter_;
  if (divided_) pending_growth_ += static_cast<std::uint64_t>(chunk_budget);
  ++admitted_count_;
  if (ready_delay) *ready_delay = delay;
  return AdmitOutcome::Accept;
}

void Instance::make_ready(SimRequest& req) {
  assert(req.instance == id_ && req.meta.state == RequestState::Running);
  running_.push_back(&req);
}

StepReport Instance::decode_step(SpeculationSource* drafts, const SpecConfig& spec, SimTime now) {
  if (running_.empty()) throw std::logic_error("decode_step on an empty batch");

  StepReport rep;
  rep.time = now;
  rep.instance = id_;
  rep.batch = static_cast<int>(running_.size());
  rep.per_request.resize(running_.size());

  int draft_len = 0;
  if (spec.sd_enabled) {
    draft_len = spec.adaptive.enabled
                    ? std::min(spec.adaptive.per_request_cap,
                               spec.adaptive.batch_token_budget / static_cast<int>(running_.size()))
                    : spec.adaptive.per_request_cap;
    draft_len = std::max(draft_len, 0);
  }

  // Gather draft candidates for requests that can use them.
  std::vector<SpecQuery> queries;
  std::vector<int> query_owner;
  std::vector<std::vector<DraftCandidate>> candidates(running_.size());
  if (spec.sd_enabled && drafts != nullptr && draft_len > 0) {
    for (std::size_t i = 0; i < running_.size(); ++i) {
      SimRequest& r = *running_[i];
      int limit = std::min(r.remaining_truth(), r.remaining_chunk());
      int spec_len = std::min(draft_len, limit - 1);
      int pat_len = std::min(spec.args.pattern_lookup_max, r.meta.generated_tokens);
      if (spec_len <= 0 || pat_len < spec.args.pattern_lookup_min) continue;
      SpecQuery q;
      q.group_id = r.meta.group_id;
      q.pattern.assign(r.truth->begin() + (r.meta.generated_tokens - pat_len),
                       r.truth->begin() + r.meta.generated_tokens);
      q.args = spec.args;
      q.args.max_spec_tokens = spec_len;
      q.args.top_k = std::max(1, spec.adaptive.multi_path_k);
      queries.push_back(std::move(q));
      query_owner.push_back(static_cast<int>(i));
    }
    if (!queries.empty()) {
      auto results = drafts->batch(queries, now);
      for (std::size_t qi = 0; qi < results.size(); ++qi)
        candidates[query_owner[qi]] = std::move(results[qi]);
    }
  }

  // Verify drafts against the ground truth and settle per-request emissions.
  long long verified_tokens = 0;
  for (std::size_t i = 0; i < running_.size(); ++i) {
    SimRequest& r = *running_[i];
    int limit = std::min(r.remaining_truth(), r.remaining_chunk());
    assert(limit >= 1);

    int drafted = 0;
    int accepted = 0;
    const Token* next_truth = r.truth->data() + r.meta.generated_tokens;
    int truth_left = r.remaining_truth();
    for (const DraftCandidate& c : candidates[i]) {
      drafted += static_cast<int>(c.tokens.size());
      int match = 0;
      int cap = std::min<int>(static_cast<int>(c.tokens.size()), truth_left);
      while (match < cap && c.tokens[match] == next_truth[match]) ++match;
      accepted = std::max(accepted, match);
    }
    int emitted = std::min(accepted + 1, limit);

    rep.per_request[i].slot = r.slot;
    rep.per_request[i].drafted = drafted;
    rep.per_request[i].accepted = emitted - 1;
    rep.per_request[i].emitted = emitted;
    verified_tokens += 1 + drafted;
    rep.drafted += drafted;
    rep.accepted += emitted - 1;
    rep.emitted += emitted;
  }

  rep.duration = step_model_.t_base + step_model_.t_tok * static_cast<double>(verified_tokens);

  // Apply emissions.
  for (std::size_t i = 0; i < running_.size(); ++i) {
    SimRequest& r = *running_[i];
    int emitted = rep.per_request[i].emitted;
    std::span<const Token> toks(r.truth->data() + r.meta.generated_tokens,
                                static_cast<std::size_t>(emitted));
    r.emitted_hash = detail::fnv1a64(toks.data(), toks.size_bytes(), r.emitted_hash);
    r.emitted_total += emitted;
    r.meta.generated_tokens += emitted;
    r.chunk_emitted += emitted;
    r.meta.cumulative_exec_time += rep.duration;
    pool_.grow(r.kv_key(), static_cast<std::uint64_t>(emitted));
    if (divided_) pending_growth_ -= static_cast<std::uint64_t>(emitted);
    if (drafts != nullptr) drafts->on_emitted(r.meta.group_id, r.meta.request_index, toks, now);
  }

  rep.kv_used = kv_used_actual();
  if (divided_ && rep.kv_used > kv_capacity_)
    throw std::logic_error("kv capacity violated in divided mode");
  return rep;
}

void Instance::detach(SimRequest& req, bool release_unused_budget) {
  auto it = std::find(running_.begin(), running_.end(), &req);
  assert(it != running_.end());
  running_.erase(it);
  if (divided_ && release_unused_budget)
    pending_growth_ -= static_cast<std::uint64_t>(req.remaining_chunk());
  --admitted_count_;
  req.instance = -1;
}

Instance::Outcome Instance::finish_or_requeue(SimRequest& req, SimTime now) {
  bool done = req.remaining_truth() == 0 || req.meta.generated_tokens >= req.meta.ori_max_tokens;
  if (done) {
    detach(req, /*release_unused_budget=*/true);
    pool_.release(req.kv_key());
    req.meta.state = RequestState::Finished;
    req.completion_time = now;
    return Outcome::Finished;
  }
  assert(req.remaining_chunk() == 0);
  detach(req, /*release_unused_budget=*/false);
  req.meta.state = RequestState::Buffered;
  return Outcome::Requeued;
}

std::vector<SimRequest*> Instance::preempt_until_fits(std::span<SimRequest* const>, SimTime) {
  if (divided_) throw std::logic_error("preempt called in divided mode");
  std::vector<SimRequest*> victims;
  // Each running request grows by at least one token next step.
  while (kv_used_actual() + running_.size() > kv_capacity_) {
    if (running_.size() <= 1)
      throw KvCapacityError("instance " + std::to_string(id_) +
                            " cannot hold a single request; capacity sizing bug");
    SimRequest* victim = running_.front();
    for (SimRequest* r : running_)
      if (r->admit_seq > victim->admit_seq) victim = r;
    detach(*victim, /*release_unused_budget=*/false);
    pool_.drop(victim->kv_key());
    victim->kv_dropped = true;
    victim->meta.state = RequestState::Buffered;
    ++preemption_count_;
    victims.push_back(victim);
  }
  return victims;
}

void Instance::note_offload_complete(SimRequest&) {
  // Reserved capacity travels with the pool entry; nothing extra to do here.
}

}  // namespace rollsim
