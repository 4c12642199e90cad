#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <openssl/evp.h>
#include <openssl/sha.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace coadapt::ws {

class SocketError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ProtocolError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
inline constexpr std::size_t kMaxPayload = 1 << 20;

inline std::string base64(const unsigned char* data, std::size_t n) {
  std::string out(4 * ((n + 2) / 3) + 1, '\0');
  const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
  out.resize(static_cast<std::size_t>(len));
  return out;
}

inline std::string accept_key(std::string_view client_key) {
  std::string s(client_key);
  s += kGuid;
  std::array<unsigned char, SHA_DIGEST_LENGTH> digest{};
  SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest.data());
  return base64(digest.data(), digest.size());
}

enum class Opcode : std::uint8_t { continuation = 0x0, text = 0x1, binary = 0x2, close = 0x8, ping = 0x9, pong = 0xA };

inline bool is_control(Opcode op) { return (static_cast<std::uint8_t>(op) & 0x8) != 0; }

struct Frame {
  bool fin = true;
  Opcode opcode = Opcode::text;
  std::string payload;
};

// Client frames must be masked (mask_key set); server frames must not.
inline std::string encode_frame(Opcode op, std::string_view payload, std::optional<std::uint32_t> mask_key = {},
                                bool fin = true) {
  std::string out;
  out.push_back(static_cast<char>((fin ? 0x80 : 0x00) | static_cast<std::uint8_t>(op)));
  const std::uint8_t mask_bit = mask_key ? 0x80 : 0x00;
  const std::size_t n = payload.size();
  if (n < 126) {
    out.push_back(static_cast<char>(mask_bit | n));
  } else if (n <= 0xFFFF) {
    out.push_back(static_cast<char>(mask_bit | 126));
    out.push_back(static_cast<char>((n >> 8) & 0xFF));
    out.push_back(static_cast<char>(n & 0xFF));
  } else {
    out.push_back(static_cast<char>(mask_bit | 127));
    for (int s = 56; s >= 0; s -= 8) out.push_back(static_cast<char>((static_cast<std::uint64_t>(n) >> s) & 0xFF));
  }
  if (!mask_key) {
    out.append(payload);
    return out;
  }
  std::array<unsigned char, 4> m{};
  for (int k = 0; k < 4; ++k) m[static_cast<std::size_t>(k)] = static_cast<unsigned char>((*mask_key >> (24 - 8 * k)) & 0xFF);
  for (auto c : m) out.push_back(static_cast<char>(c));
  for (std::size_t k = 0; k < n; ++k) out.push_back(static_cast<char>(static_cast<unsigned char>(payload[k]) ^ m[k % 4]));
  return out;
}

// Incremental frame parser.
class FrameDecoder {
public:
  explicit FrameDecoder(bool expect_masked) : expect_masked_(expect_masked) {}

  void feed(std::string_view bytes) { buf_.append(bytes); }

  std::optional<Frame> next() {
    const auto* p = reinterpret_cast<const unsigned char*>(buf_.data());
    const std::size_t avail = buf_.size();
    if (avail < 2) return std::nullopt;
    Frame f;
    f.fin = (p[0] & 0x80) != 0;
    if ((p[0] & 0x70) != 0) throw ProtocolError("reserved bits set");
    f.opcode = static_cast<Opcode>(p[0] & 0x0F);
    const bool masked = (p[1] & 0x80) != 0;
    if (masked != expect_masked_) throw ProtocolError(expect_masked_ ? "unmasked client frame" : "masked server frame");
    std::uint64_t len = p[1] & 0x7F;
    std::size_t pos = 2;
    if (len == 126) {
      if (avail < 4) return std::nullopt;
      len = (static_cast<std::uint64_t>(p[2]) << 8) | p[3];
      pos = 4;
    } else if (len == 127) {
      if (avail < 10) return std::nullopt;
      len = 0;
      for (int k = 0; k < 8; ++k) len = (len << 8) | p[2 + k];
      pos = 10;
    }
    if (len > kMaxPayload) throw ProtocolError("frame too large");
    if (is_control(f.opcode) && (len > 125 || !f.fin)) throw ProtocolError("invalid control frame");
    std::array<unsigned char, 4> m{};
    if (masked) {
      if (avail < pos + 4) return std::nullopt;
      std::copy(p + pos, p + pos + 4, m.begin());
      pos += 4;
    }
    if (avail < pos + len) return std::nullopt;
    f.payload.assign(buf_.data() + pos, static_cast<std::size_t>(len));
    if (masked)
      for (std::size_t k = 0; k < f.payload.size(); ++k)
        f.payload[k] = static_cast<char>(static_cast<unsigned char>(f.payload[k]) ^ m[k % 4]);
    buf_.erase(0, pos + static_cast<std::size_t>(len));
    return f;
  }

private:
  bool expect_masked_;
  std::string buf_;
};

// ---- HTTP upgrade ----

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> headers;  // lower-case names

  std::string header(const std::string& name) const {
    auto it = headers.find(name);
    return it == headers.end() ? std::string() : it->second;
  }

  bool is_websocket_upgrade() const {
    auto lower = [](std::string s) {
      for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      return s;
    };
    return method == "GET" && lower(header("upgrade")) == "websocket" &&
           lower(header("connection")).find("upgrade") != std::string::npos && !header("sec-websocket-key").empty();
  }
};

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline HttpRequest parse_http_request(const std::string& head) {
  HttpRequest r;
  std::size_t pos = head.find("\r\n");
  const std::string first = head.substr(0, pos);
  const auto s1 = first.find(' ');
  const auto s2 = first.find(' ', s1 + 1);
  if (s1 == std::string::npos || s2 == std::string::npos) throw ProtocolError("malformed request line");
  r.method = first.substr(0, s1);
  r.path = first.substr(s1 + 1, s2 - s1 - 1);
  while (pos != std::string::npos) {
    const auto start = pos + 2;
    pos = head.find("\r\n", start);
    const std::string line = head.substr(start, pos == std::string::npos ? std::string::npos : pos - start);
    if (line.empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string name = line.substr(0, colon);
    for (auto& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    r.headers[name] = trim(line.substr(colon + 1));
  }
  return r;
}

inline std::string handshake_response(const std::string& client_key) {
  return "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Accept: " +
         accept_key(client_key) + "\r\n\r\n";
}

// ---- sockets ----

class Socket {
public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }

  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }
  // Unblocks readers on other threads without releasing the descriptor.
  void shutdown() const {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
  }

  void send_all(std::string_view data) const {
    std::size_t sent = 0;
    while (sent < data.size()) {
      const auto n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw SocketError(std::string("send: ") + std::strerror(errno));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  // Returns empty on orderly close; timeout_ms < 0 blocks.
  std::optional<std::string> recv_some(int timeout_ms = -1) const {
    if (timeout_ms >= 0) {
      pollfd p{fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, timeout_ms);
      if (r == 0) return std::nullopt;
      if (r < 0 && errno != EINTR) throw SocketError(std::string("poll: ") + std::strerror(errno));
    }
    char buf[4096];
    for (;;) {
      const auto n = ::recv(fd_, buf, sizeof buf, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n < 0) throw SocketError(std::string("recv: ") + std::strerror(errno));
      return std::string(buf, static_cast<std::size_t>(n));
    }
  }

private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  int port = 0;
};

// "host:port", ":port" or "port".
inline Endpoint parse_endpoint(const std::string& s) {
  Endpoint e;
  const auto colon = s.rfind(':');
  std::string port = colon == std::string::npos ? s : s.substr(colon + 1);
  if (colon != std::string::npos && colon > 0) e.host = s.substr(0, colon);
  try {
    std::size_t used = 0;
    e.port = std::stoi(port, &used);
    if (used != port.size() || e.port < 0 || e.port > 65535) throw std::out_of_range("port");
  } catch (const std::logic_error&) {
    throw std::invalid_argument("invalid bind address '" + s + "' (expected host:port)");
  }
  return e;
}

inline sockaddr_in resolve(const Endpoint& e) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(e.port));
  const std::string host = e.host == "localhost" ? "127.0.0.1" : e.host;
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res)
      throw SocketError("cannot resolve host '" + e.host + "'");
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    ::freeaddrinfo(res);
  }
  return addr;
}

// Listening socket; port 0 picks a free port (see bound_port).
inline Socket listen_tcp(const Endpoint& e, int backlog = 16) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw SocketError(std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const auto addr = resolve(e);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    throw SocketError("bind " + e.host + ":" + std::to_string(e.port) + ": " + std::strerror(errno));
  if (::listen(s.fd(), backlog) != 0) throw SocketError(std::string("listen: ") + std::strerror(errno));
  return s;
}

inline int bound_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

inline Socket connect_tcp(const Endpoint& e) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw SocketError(std::string("socket: ") + std::strerror(errno));
  const auto addr = resolve(e);
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0)
    throw SocketError("connect " + e.host + ":" + std::to_string(e.port) + ": " + std::strerror(errno));
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

// Reads up to the blank line ending an HTTP head; leftover bytes are returned too.
inline std::pair<std::string, std::string> read_http_head(const Socket& s, int timeout_ms = 5000) {
  std::string buf;
  for (;;) {
    const auto end = buf.find("\r\n\r\n");
    if (end != std::string::npos) return {buf.substr(0, end + 2), buf.substr(end + 4)};
    if (buf.size() > 16384) throw ProtocolError("request head too large");
    auto chunk = s.recv_some(timeout_ms);
    if (!chunk) throw ProtocolError("timed out reading request head");
    if (chunk->empty()) throw ProtocolError("connection closed during handshake");
    buf += *chunk;
  }
}

// A message-level WebSocket endpoint over an upgraded socket.
class Connection {
public:
  Connection(Socket s, bool client_side, std::string pending = {})
      : sock_(std::move(s)), client_(client_side), decoder_(!client_side), rng_(std::random_device{}()) {
    decoder_.feed(pending);
  }

  void send_text(std::string_view msg) { send_frame(Opcode::text, msg); }

  void send_close(std::uint16_t code = 1000) {
    std::string p;
    p.push_back(static_cast<char>(code >> 8));
    p.push_back(static_cast<char>(code & 0xFF));
    try {
      send_frame(Opcode::close, p);
    } catch (const SocketError&) {
    }
  }

  // Next complete text/binary message; nullopt on close or timeout (check closed()).
  std::optional<std::string> receive(int timeout_ms = -1) {
    for (;;) {
      while (auto f = decoder_.next()) {
        switch (f->opcode) {
          case Opcode::ping: send_frame(Opcode::pong, f->payload); break;
          case Opcode::pong: break;
          case Opcode::close:
            if (!close_sent_) send_close();
            closed_ = true;
            return std::nullopt;
          case Opcode::continuation:
            if (!in_message_) throw ProtocolError("unexpected continuation frame");
            message_ += f->payload;
            if (message_.size() > kMaxPayload) throw ProtocolError("message too large");
            if (f->fin) {
              in_message_ = false;
              return std::move(message_);
            }
            break;
          default:
            if (in_message_) throw ProtocolError("interleaved data frame");
            if (f->fin) return std::move(f->payload);
            message_ = std::move(f->payload);
            in_message_ = true;
        }
      }
      if (closed_) return std::nullopt;
      std::optional<std::string> chunk;
      try {
        chunk = sock_.recv_some(timeout_ms);
      } catch (const SocketError&) {
        closed_ = true;
        return std::nullopt;
      }
      if (!chunk) return std::nullopt;  // timeout
      if (chunk->empty()) {
        closed_ = true;
        return std::nullopt;
      }
      decoder_.feed(*chunk);
    }
  }

  bool closed() const { return closed_; }
  void shutdown() { sock_.shutdown(); }

private:
  void send_frame(Opcode op, std::string_view payload) {
    std::lock_guard lock(send_mu_);
    std::optional<std::uint32_t> mask;
    if (client_) mask = static_cast<std::uint32_t>(rng_());
    sock_.send_all(encode_frame(op, payload, mask));
    if (op == Opcode::close) close_sent_ = true;
  }

  Socket sock_;
  bool client_;
  FrameDecoder decoder_;
  std::mt19937 rng_;
  std::mutex send_mu_;
  std::string message_;
  bool in_message_ = false;
  bool closed_ = false;
  bool close_sent_ = false;
};

// Client-side handshake against a ws:// endpoint.
inline Connection connect(const Endpoint& e, const std::string& path = "/ws") {
  Socket s = connect_tcp(e);
  std::array<unsigned char, 16> nonce{};
  std::random_device rd;
  for (auto& b : nonce) b = static_cast<unsigned char>(rd());
  const auto key = base64(nonce.data(), nonce.size());
  s.send_all("GET " + path + " HTTP/1.1\r\nHost: " + e.host + ":" + std::to_string(e.port) +
             "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: " + key +
             "\r\nSec-WebSocket-Version: 13\r\n\r\n");
  auto [head, rest] = read_http_head(s);
  if (head.rfind("HTTP/1.1 101", 0) != 0) throw ProtocolError("handshake rejected: " + head.substr(0, head.find('\r')));
  // reuse the header parser by swapping the status line for a request line
  const HttpRequest resp = parse_http_request("GET / HTTP/1.1\r\n" + head.substr(head.find("\r\n") + 2));
  if (resp.header("sec-websocket-accept") != accept_key(key)) throw ProtocolError("bad Sec-WebSocket-Accept");
  return Connection(std::move(s), true, rest);
}

}  // namespace coadapt::ws
