#pragma once

// Minimal RFC 6455 WebSocket endpoints over POSIX sockets: text, ping/pong and
// close frames, no extensions, no fragmentation on send.

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <openssl/sha.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cctype>
#include <cerrno>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <string>
#include <string_view>

#include "gazenav/common.hpp"

namespace gazenav::ws {

class SocketError : public Error {
 public:
  using Error::Error;
};

class BindError : public SocketError {
 public:
  using SocketError::SocketError;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

enum class Opcode : std::uint8_t { Continuation = 0x0, Text = 0x1, Binary = 0x2, Close = 0x8, Ping = 0x9, Pong = 0xA };

inline std::string base64(const unsigned char* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3), '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

inline std::string accept_key(std::string_view client_key) {
  const std::string s = std::string(client_key) + "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
  unsigned char digest[SHA_DIGEST_LENGTH];
  SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest);
  return base64(digest, SHA_DIGEST_LENGTH);
}

inline std::string encode_frame(Opcode op, std::string_view payload, std::optional<std::uint32_t> mask = {}) {
  std::string f;
  f.push_back(static_cast<char>(0x80 | static_cast<std::uint8_t>(op)));
  const std::uint8_t mbit = mask ? 0x80 : 0x00;
  const std::size_t n = payload.size();
  if (n < 126) {
    f.push_back(static_cast<char>(mbit | n));
  } else if (n <= 0xffff) {
    f.push_back(static_cast<char>(mbit | 126));
    f.push_back(static_cast<char>((n >> 8) & 0xff));
    f.push_back(static_cast<char>(n & 0xff));
  } else {
    f.push_back(static_cast<char>(mbit | 127));
    for (int i = 7; i >= 0; --i) f.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> (8 * i)) & 0xff));
  }
  if (!mask) {
    f.append(payload);
    return f;
  }
  unsigned char key[4];
  for (int i = 0; i < 4; ++i) key[i] = static_cast<unsigned char>((*mask >> (8 * (3 - i))) & 0xff);
  f.append(reinterpret_cast<const char*>(key), 4);
  for (std::size_t i = 0; i < n; ++i) f.push_back(static_cast<char>(payload[i] ^ key[i % 4]));
  return f;
}

struct Frame {
  Opcode opcode = Opcode::Text;
  std::string payload;
};

// Incremental decoder; feed bytes, then pop complete messages.
class FrameDecoder {
 public:
  void feed(const char* data, std::size_t n) { buf_.append(data, n); }

  std::optional<Frame> next() {
    for (;;) {
      if (buf_.size() < 2) return std::nullopt;
      const auto b0 = static_cast<std::uint8_t>(buf_[0]);
      const auto b1 = static_cast<std::uint8_t>(buf_[1]);
      if (b0 & 0x70) throw ProtocolError("reserved bits set");
      const bool fin = b0 & 0x80;
      const auto op = static_cast<Opcode>(b0 & 0x0f);
      const bool masked = b1 & 0x80;
      std::uint64_t len = b1 & 0x7f;
      std::size_t at = 2;
      if (len == 126) {
        if (buf_.size() < 4) return std::nullopt;
        len = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[2])) << 8) | static_cast<std::uint8_t>(buf_[3]);
        at = 4;
      } else if (len == 127) {
        if (buf_.size() < 10) return std::nullopt;
        len = 0;
        for (int i = 0; i < 8; ++i) len = (len << 8) | static_cast<std::uint8_t>(buf_[2 + static_cast<std::size_t>(i)]);
        at = 10;
      }
      if (len > (64u << 20)) throw ProtocolError("frame too large");
      const std::size_t need = at + (masked ? 4 : 0) + static_cast<std::size_t>(len);
      if (buf_.size() < need) return std::nullopt;
      std::string payload = buf_.substr(at + (masked ? 4 : 0), static_cast<std::size_t>(len));
      if (masked)
        for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<char>(payload[i] ^ buf_[at + i % 4]);
      buf_.erase(0, need);
      if (op == Opcode::Continuation) {
        if (!partial_) throw ProtocolError("continuation without a start frame");
        partial_->payload += payload;
      } else if (static_cast<std::uint8_t>(op) & 0x8) {
        return Frame{op, std::move(payload)};  // control frames are never fragmented
      } else {
        if (partial_) throw ProtocolError("new message inside a fragmented one");
        partial_ = Frame{op, std::move(payload)};
      }
      if (fin) {
        Frame f = std::move(*partial_);
        partial_.reset();
        return f;
      }
    }
  }

 private:
  std::string buf_;
  std::optional<Frame> partial_;
};

inline void send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw SocketError(std::string("send: ") + std::strerror(errno));
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

// Waits up to `timeout_ms` for data; returns false on timeout, throws on close.
inline bool recv_some(int fd, std::string& out, int timeout_ms) {
  pollfd p{fd, POLLIN, 0};
  const int r = ::poll(&p, 1, timeout_ms);
  if (r < 0) {
    if (errno == EINTR) return false;
    throw SocketError(std::string("poll: ") + std::strerror(errno));
  }
  if (r == 0) return false;
  char buf[4096];
  const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
  if (n <= 0) throw SocketError("connection closed");
  out.assign(buf, static_cast<std::size_t>(n));
  return true;
}

inline std::string header_value(std::string_view request, std::string_view name) {
  std::size_t pos = 0;
  while (pos < request.size()) {
    const std::size_t eol = request.find("\r\n", pos);
    const std::size_t end = eol == std::string_view::npos ? request.size() : eol;
    const std::string_view line = request.substr(pos, end - pos);
    const std::size_t colon = line.find(':');
    if (colon != std::string_view::npos && colon == name.size()) {
      bool same = true;
      for (std::size_t i = 0; i < colon; ++i)
        same &= std::tolower(static_cast<unsigned char>(line[i])) == std::tolower(static_cast<unsigned char>(name[i]));
      if (same) {
        std::string_view v = line.substr(colon + 1);
        while (!v.empty() && v.front() == ' ') v.remove_prefix(1);
        while (!v.empty() && (v.back() == ' ' || v.back() == '\r')) v.remove_suffix(1);
        return std::string(v);
      }
    }
    if (eol == std::string_view::npos) break;
    pos = eol + 2;
  }
  return {};
}

// One accepted or connected WebSocket stream.
class Connection {
 public:
  Connection(int fd, bool client) : fd_(fd), client_(client), rng_(std::random_device{}()) {}
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;
  ~Connection() {
    if (fd_ >= 0) ::close(fd_);
  }

  // Server side: read the HTTP upgrade and answer it.
  void accept_handshake(int timeout_ms = 5000) {
    std::string req;
    while (req.find("\r\n\r\n") == std::string::npos) {
      std::string chunk;
      if (!recv_some(fd_, chunk, timeout_ms)) throw ProtocolError("handshake timed out");
      req += chunk;
      if (req.size() > 16384) throw ProtocolError("handshake too large");
    }
    const std::size_t end = req.find("\r\n\r\n") + 4;
    const std::string key = header_value(req, "Sec-WebSocket-Key");
    if (key.empty()) {
      send_all(fd_, "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
      throw ProtocolError("not a WebSocket upgrade");
    }
    send_all(fd_, "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
                  "Sec-WebSocket-Accept: " + accept_key(key) + "\r\n\r\n");
    if (req.size() > end) decoder_.feed(req.data() + end, req.size() - end);
  }

  // Client side: send the upgrade and check the accept key.
  void client_handshake(const std::string& host, int port, const std::string& path = "/", int timeout_ms = 5000) {
    unsigned char nonce[16];
    for (auto& b : nonce) b = static_cast<unsigned char>(rng_() & 0xff);
    const std::string key = base64(nonce, 16);
    send_all(fd_, "GET " + path + " HTTP/1.1\r\nHost: " + host + ":" + std::to_string(port) +
                      "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: " + key +
                      "\r\nSec-WebSocket-Version: 13\r\n\r\n");
    std::string resp;
    while (resp.find("\r\n\r\n") == std::string::npos) {
      std::string chunk;
      if (!recv_some(fd_, chunk, timeout_ms)) throw ProtocolError("handshake timed out");
      resp += chunk;
    }
    const std::size_t end = resp.find("\r\n\r\n") + 4;
    if (resp.rfind("HTTP/1.1 101", 0) != 0 || header_value(resp, "Sec-WebSocket-Accept") != accept_key(key))
      throw ProtocolError("server rejected the upgrade");
    if (resp.size() > end) decoder_.feed(resp.data() + end, resp.size() - end);
  }

  void send_text(std::string_view text) { send_frame(Opcode::Text, text); }
  void send_close() {
    try {
      send_frame(Opcode::Close, std::string("\x03\xe8", 2));
    } catch (const SocketError&) {
    }
  }

  // Next text message, or nullopt on timeout. Pings are answered; a close frame throws SocketError.
  std::optional<std::string> receive(int timeout_ms) {
    for (;;) {
      if (auto f = decoder_.next()) {
        switch (f->opcode) {
          case Opcode::Ping:
            send_frame(Opcode::Pong, f->payload);
            continue;
          case Opcode::Pong:
            continue;
          case Opcode::Close:
            send_close();
            throw SocketError("peer closed the connection");
          default:
            return std::move(f->payload);
        }
      }
      std::string chunk;
      if (!recv_some(fd_, chunk, timeout_ms)) return std::nullopt;
      decoder_.feed(chunk.data(), chunk.size());
    }
  }

  int fd() const { return fd_; }

 private:
  void send_frame(Opcode op, std::string_view payload) {
    std::optional<std::uint32_t> mask;
    if (client_) mask = static_cast<std::uint32_t>(rng_());
    send_all(fd_, encode_frame(op, payload, mask));
  }

  int fd_;
  bool client_;
  std::mt19937 rng_;
  FrameDecoder decoder_;
};

// Listening socket on 127.0.0.1 (or any address); port 0 picks a free port.
class Listener {
 public:
  explicit Listener(int port, bool any_address = false) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw SocketError("socket failed");
    const int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    addr.sin_addr.s_addr = htonl(any_address ? INADDR_ANY : INADDR_LOOPBACK);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd_, 16) < 0) {
      const std::string why = std::strerror(errno);
      ::close(fd_);
      throw BindError("cannot listen on port " + std::to_string(port) + ": " + why);
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;
  ~Listener() { close(); }

  // Accepted socket, or -1 on timeout.
  int accept(int timeout_ms) {
    pollfd p{fd_, POLLIN, 0};
    if (::poll(&p, 1, timeout_ms) <= 0) return -1;
    const int c = ::accept(fd_, nullptr, nullptr);
    if (c >= 0) {
      const int one = 1;
      ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    }
    return c;
  }
  int port() const { return port_; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
  int port_ = 0;
};

inline int connect_tcp(const std::string& host, int port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw SocketError("socket failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd);
    throw SocketError("bad address " + host);
  }
  if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0) {
    ::close(fd);
    throw SocketError("cannot connect to " + host + ":" + std::to_string(port));
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return fd;
}

}  // namespace gazenav::ws
