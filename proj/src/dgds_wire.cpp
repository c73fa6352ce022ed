#include "rollsim/dgds_wire.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <stdexcept>

#include "rollsim/detail/bytes.hpp"

namespace rollsim::wire {

using detail::ByteReader;
using detail::ByteWriter;

std::vector<std::uint8_t> encode_update_request(const std::string& group_id, int request_id,
                                                std::uint64_t prev_token_count,
                                                std::span<const Token> tokens) {
  ByteWriter w;
  w.u8(kOpUpdate);
  w.str(group_id);
  w.u32(static_cast<std::uint32_t>(request_id));
  w.u64(prev_token_count);
  w.u32(static_cast<std::uint32_t>(tokens.size()));
  for (Token t : tokens) w.i32(t);
  return w.take();
}

std::vector<std::uint8_t> encode_update_reply(const UpdateReply& reply) {
  ByteWriter w;
  w.u8(kOpUpdate | kOpReplyBit);
  w.u8(reply.ok ? 1 : 0);
  w.u64(reply.version);
  w.u64(reply.acked_tokens);
  return w.take();
}

std::vector<std::uint8_t> encode_fetch_request(std::span<const std::string> group_ids,
                                               std::span<const DraftCacheInfo> infos) {
  if (group_ids.size() != infos.size())
    throw std::invalid_argument("fetch encode: mismatched group_ids / infos");
  ByteWriter w;
  w.u8(kOpFetch);
  w.u32(static_cast<std::uint32_t>(group_ids.size()));
  for (std::size_t i = 0; i < group_ids.size(); ++i) {
    w.str(group_ids[i]);
    w.u64(infos[i].cached_version);
  }
  return w.take();
}

std::vector<std::uint8_t> encode_fetch_reply(std::span<const FetchReply> replies) {
  ByteWriter w;
  w.u8(kOpFetch | kOpReplyBit);
  w.u32(static_cast<std::uint32_t>(replies.size()));
  for (const FetchReply& r : replies) {
    w.u8(static_cast<std::uint8_t>(r.kind));
    w.u64(r.version);
    w.u32(static_cast<std::uint32_t>(r.blob.size()));
    w.raw(r.blob.data(), r.blob.size());
  }
  return w.take();
}

std::vector<std::uint8_t> encode_register_request(const std::string& group_id, std::uint32_t ttl_seconds) {
  ByteWriter w;
  w.u8(kOpRegister);
  w.str(group_id);
  w.u32(ttl_seconds);
  return w.take();
}

std::vector<std::uint8_t> encode_register_reply() {
  ByteWriter w;
  w.u8(kOpRegister | kOpReplyBit);
  w.u8(1);
  return w.take();
}

std::vector<std::uint8_t> encode_error_reply(const std::string& message) {
  ByteWriter w;
  w.u8(kOpError);
  w.str(message);
  return w.take();
}

std::vector<std::uint8_t> frame(std::vector<std::uint8_t> payload) {
  std::vector<std::uint8_t> out;
  out.reserve(payload.size() + 4);
  std::uint32_t n = static_cast<std::uint32_t>(payload.size());
  out.push_back(static_cast<std::uint8_t>(n >> 24));
  out.push_back(static_cast<std::uint8_t>(n >> 16));
  out.push_back(static_cast<std::uint8_t>(n >> 8));
  out.push_back(static_cast<std::uint8_t>(n));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::vector<std::uint8_t> serve_payload(DraftServer& server, std::span<const std::uint8_t> payload,
                                        SimTime now) {
  try {
    ByteReader r(payload.data(), payload.size());
    std::uint8_t op = r.u8();
    switch (op) {
      case kOpUpdate: {
        std::string gid = r.str();
        std::uint32_t request_id = r.u32();
        std::uint64_t prev = r.u64();
        std::uint32_t n = r.u32();
        TokenSeq toks(n);
        for (std::uint32_t i = 0; i < n; ++i) toks[i] = r.i32();
        UpdateReply rep = server.update_cst(gid, static_cast<int>(request_id), prev, toks, now);
        return encode_update_reply(rep);
      }
      case kOpFetch: {
        std::uint32_t n = r.u32();
        std::vector<std::string> ids(n);
        std::vector<DraftCacheInfo> infos(n);
        for (std::uint32_t i = 0; i < n; ++i) {
          ids[i] = r.str();
          infos[i].group_id = ids[i];
          infos[i].cached_version = r.u64();
        }
        auto replies = server.fetch_cst(ids, infos, now);
        return encode_fetch_reply(replies);
      }
      case kOpRegister: {
        std::string gid = r.str();
        std::uint32_t ttl = r.u32();
        server.register_group(gid, static_cast<double>(ttl), now);
        return encode_register_reply();
      }
      default:
        return encode_error_reply("unknown op tag " + std::to_string(op));
    }
  } catch (const std::exception& e) {
    return encode_error_reply(e.what());
  }
}

// ---------------------------------------------------------------------------
// Socket helpers

namespace {

void write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    ssize_t w = ::write(fd, p, n);
    if (w <= 0) throw std::runtime_error("socket write failed");
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

bool read_all(int fd, std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    ssize_t r = ::read(fd, p, n);
    if (r == 0) return false;  // peer closed
    if (r < 0) throw std::runtime_error("socket read failed");
    p += r;
    n -= static_cast<std::size_t>(r);
  }
  return true;
}

bool read_frame(int fd, std::vector<std::uint8_t>& payload) {
  std::uint8_t len_bytes[4];
  if (!read_all(fd, len_bytes, 4)) return false;
  std::uint32_t n = (std::uint32_t(len_bytes[0]) << 24) | (std::uint32_t(len_bytes[1]) << 16) |
                    (std::uint32_t(len_bytes[2]) << 8) | std::uint32_t(len_bytes[3]);
  if (n > (1u << 30)) throw std::runtime_error("frame too large");
  payload.resize(n);
  if (n > 0 && !read_all(fd, payload.data(), n)) throw std::runtime_error("truncated frame");
  return true;
}

void write_frame(int fd, const std::vector<std::uint8_t>& payload) {
  auto framed = frame(payload);
  write_all(fd, framed.data(), framed.size());
}

}  // namespace

// ---------------------------------------------------------------------------
// TcpTransport

TcpTransport::TcpTransport(const std::string& host, int port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw std::runtime_error("cannot create socket");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw std::runtime_error("invalid draft server address: " + host);
  }
  if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(fd_);
    throw std::runtime_error("cannot connect to draft server at " + host + ":" + std::to_string(port));
  }
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

TcpTransport::~TcpTransport() {
  if (fd_ >= 0) ::close(fd_);
}

std::vector<std::uint8_t> TcpTransport::round_trip(const std::vector<std::uint8_t>& payload) {
  std::lock_guard<std::mutex> lock(mu_);
  write_frame(fd_, payload);
  std::vector<std::uint8_t> reply;
  if (!read_frame(fd_, reply)) throw std::runtime_error("draft server closed connection");
  if (!reply.empty() && reply[0] == kOpError) {
    ByteReader r(reply.data(), reply.size());
    r.u8();
    throw std::runtime_error("draft server error: " + r.str());
  }
  return reply;
}

UpdateReply TcpTransport::update_cst(const std::string& group_id, int request_id,
                                     std::uint64_t prev_token_count, std::span<const Token> new_tokens,
                                     SimTime) {
  auto reply = round_trip(encode_update_request(group_id, request_id, prev_token_count, new_tokens));
  ByteReader r(reply.data(), reply.size());
  if (r.u8() != (kOpUpdate | kOpReplyBit)) throw std::runtime_error("unexpected reply tag");
  UpdateReply rep;
  rep.ok = r.u8() != 0;
  rep.version = r.u64();
  rep.acked_tokens = r.u64();
  return rep;
}

std::vector<FetchReply> TcpTransport::fetch_cst(std::span<const std::string> group_ids,
                                                std::span<const DraftCacheInfo> infos, SimTime) {
  auto reply = round_trip(encode_fetch_request(group_ids, infos));
  ByteReader r(reply.data(), reply.size());
  if (r.u8() != (kOpFetch | kOpReplyBit)) throw std::runtime_error("unexpected reply tag");
  std::uint32_t n = r.u32();
  std::vector<FetchReply> out(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    out[i].kind = static_cast<FetchKind>(r.u8());
    out[i].version = r.u64();
    std::uint32_t blob_len = r.u32();
    out[i].blob.resize(blob_len);
    for (std::uint32_t b = 0; b < blob_len; ++b) out[i].blob[b] = r.u8();
  }
  return out;
}

void TcpTransport::register_group(const std::string& group_id, double ttl_seconds, SimTime) {
  auto reply = round_trip(
      encode_register_request(group_id, static_cast<std::uint32_t>(ttl_seconds)));
  ByteReader r(reply.data(), reply.size());
  if (r.u8() != (kOpRegister | kOpReplyBit)) throw std::runtime_error("unexpected reply tag");
}

// ---------------------------------------------------------------------------
// TcpDraftService

TcpDraftService::TcpDraftService(DgdsParams params, int port)
    : server_(params), start_(std::chrono::steady_clock::now()) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw std::runtime_error("cannot create listening socket");
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(listen_fd_);
    throw std::runtime_error("cannot bind draft service port " + std::to_string(port));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  if (::listen(listen_fd_, 16) != 0) {
    ::close(listen_fd_);
    throw std::runtime_error("cannot listen on draft service port");
  }
  accept_thread_ = std::thread([this] { accept_loop(); });
}

TcpDraftService::~TcpDraftService() { stop(); }

void TcpDraftService::stop() {
  if (stopping_.exchange(true)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  std::lock_guard<std::mutex> lock(conn_mu_);
  for (auto& t : conn_threads_)
    if (t.joinable()) t.join();
  conn_threads_.clear();
}

void TcpDraftService::accept_loop() {
  while (!stopping_.load()) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stopping_.load()) break;
      continue;
    }
    std::lock_guard<std::mutex> lock(conn_mu_);
    conn_threads_.emplace_back([this, fd] { handle_connection(fd); });
  }
}

void TcpDraftService::handle_connection(int fd) {
  try {
    std::vector<std::uint8_t> payload;
    while (!stopping_.load() && read_frame(fd, payload)) {
      double now = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      auto reply = serve_payload(server_, payload, now);
      write_frame(fd, reply);
    }
  } catch (const std::exception&) {
    // Connection torn down; drop it.
  }
  ::close(fd);
}

}  // namespace rollsim::wire
