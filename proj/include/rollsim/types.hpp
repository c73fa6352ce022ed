#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rollsim {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

// Simulated time in seconds. All timing in the simulator is event time,
// never wall clock.
using SimTime = double;

enum class RequestState { Pending, Running, Buffered, Finished };

// One response slot within a prompt group; the unit of rollout work.
// The first request of each group (request_index 0) is the speculative
// request and acts as the group's online length probe.
struct Request {
  std::string group_id;
  int request_index = 0;
  int prompt_len = 0;
  int ori_max_tokens = 0;
  int generated_tokens = 0;
  RequestState state = RequestState::Pending;
  bool is_speculative = false;
  double cumulative_exec_time = 0.0;
};

inline const char* to_string(RequestState s) {
  switch (s) {
    case RequestState::Pending: return "pending";
    case RequestState::Running: return "running";
    case RequestState::Buffered: return "buffered";
    case RequestState::Finished: return "finished";
  }
  return "?";
}

}  // namespace rollsim
