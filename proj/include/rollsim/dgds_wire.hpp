#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "rollsim/dgds.hpp"

// Framed wire protocol for service-mode DGDS.
//
// Every message is a frame: a 4-byte big-endian payload length followed by
// the payload. A payload is a self-describing record starting with a 1-byte
// op tag:
//
//   0x01 update_cst request:   str group_id, u32 request_id,
//                              u64 prev_token_count, u32 n, n x i32 tokens
//   0x81 update_cst reply:     u8 ok, u64 version, u64 acked_tokens
//   0x02 fetch_cst request:    u32 n, n x { str group_id, u64 cached_version }
//   0x82 fetch_cst reply:      u32 n, n x { u8 kind, u64 version,
//                              u32 blob_len, blob bytes }
//   0x03 register_group req:   str group_id, u32 ttl_seconds
//   0x83 register_group reply: u8 ok
//   0x7F error reply:          str message
//
// Strings are u16 length + UTF-8 bytes; all integers are big-endian.

namespace rollsim::wire {

constexpr std::uint8_t kOpUpdate = 0x01;
constexpr std::uint8_t kOpFetch = 0x02;
constexpr std::uint8_t kOpRegister = 0x03;
constexpr std::uint8_t kOpReplyBit = 0x80;
constexpr std::uint8_t kOpError = 0x7F;

std::vector<std::uint8_t> encode_update_request(const std::string& group_id, int request_id,
                                                std::uint64_t prev_token_count,
                                                std::span<const Token> tokens);
std::vector<std::uint8_t> encode_update_reply(const UpdateReply& reply);
std::vector<std::uint8_t> encode_fetch_request(std::span<const std::string> group_ids,
                                               std::span<const DraftCacheInfo> infos);
std::vector<std::uint8_t> encode_fetch_reply(std::span<const FetchReply> replies);
std::vector<std::uint8_t> encode_register_request(const std::string& group_id, std::uint32_t ttl_seconds);
std::vector<std::uint8_t> encode_register_reply();
std::vector<std::uint8_t> encode_error_reply(const std::string& message);

// Prepends the 4-byte big-endian length to a payload record.
std::vector<std::uint8_t> frame(std::vector<std::uint8_t> payload);

// Dispatches one decoded request payload against a server and returns the
// reply payload. now is the server's notion of time for TTL accounting.
std::vector<std::uint8_t> serve_payload(DraftServer& server, std::span<const std::uint8_t> payload,
                                        SimTime now);

// Blocking TCP transport speaking the framed protocol. One in-flight request
// at a time; calls are serialized internally.
class TcpTransport final : public DraftTransport {
 public:
  TcpTransport(const std::string& host, int port);
  ~TcpTransport() override;
  TcpTransport(const TcpTransport&) = delete;
  TcpTransport& operator=(const TcpTransport&) = delete;

  UpdateReply update_cst(const std::string& group_id, int request_id, std::uint64_t prev_token_count,
                         std::span<const Token> new_tokens, SimTime now) override;
  std::vector<FetchReply> fetch_cst(std::span<const std::string> group_ids,
                                    std::span<const DraftCacheInfo> infos, SimTime now) override;
  void register_group(const std::string& group_id, double ttl_seconds, SimTime now) override;

 private:
  std::vector<std::uint8_t> round_trip(const std::vector<std::uint8_t>& payload);
  int fd_ = -1;
  std::mutex mu_;
};

// Thread-per-connection TCP service wrapping a DraftServer. TTLs use the
// service's own clock (seconds since start).
class TcpDraftService {
 public:
  explicit TcpDraftService(DgdsParams params, int port = 0);  // port 0 = ephemeral
  ~TcpDraftService();

  int port() const { return port_; }
  DraftServer& server() { return server_; }
  void stop();

 private:
  void accept_loop();
  void handle_connection(int fd);

  DraftServer server_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::vector<std::thread> conn_threads_;
  std::mutex conn_mu_;
  std::chrono::steady_clock::time_point start_;
};

}  // namespace rollsim::wire
