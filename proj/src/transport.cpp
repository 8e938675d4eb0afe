#include "gdfed/transport.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "gdfed/error.hpp"

namespace gdfed {

namespace {

Inbound decode_frame(Frame frame) {
  if (frame.disconnect) {
    throw ProtocolError("connection " + std::to_string(frame.connection) + " closed" +
                        (frame.error.empty() ? "" : ": " + frame.error));
  }
  return Inbound{frame.connection, wire::decode_message(frame.bytes)};
}

}  // namespace

// ---------------------------------------------------------------- memory

namespace {

class MemoryServer : public ServerTransport {
 public:
  explicit MemoryServer(std::shared_ptr<MemoryHub> hub) : hub_(std::move(hub)) {}

  ~MemoryServer() override {
    for (std::size_t i = 0; i < hub_->clients(); ++i) {
      hub_->client_inbox(i).push(Frame{i, {}, true, "server closed"});
    }
  }

  void accept(std::size_t count) override {
    if (count != hub_->clients()) {
      throw ArgumentError("memory hub built for " + std::to_string(hub_->clients()) +
                          " clients, asked to accept " + std::to_string(count));
    }
    if (!hub_->wait_connected(count, hub_->timeout())) {
      throw ProtocolError("timed out waiting for clients to connect");
    }
  }

  void send(std::size_t connection, const wire::WireMessage& message) override {
    hub_->client_inbox(connection).push(Frame{connection, wire::encode_message(message), false, {}});
  }

  Inbound receive() override {
    auto frame = hub_->server_inbox().pop_for(hub_->timeout());
    if (!frame) throw ProtocolError("timed out waiting for client messages");
    return decode_frame(std::move(*frame));
  }

 private:
  std::shared_ptr<MemoryHub> hub_;
};

class MemoryClient : public ClientTransport {
 public:
  MemoryClient(std::shared_ptr<MemoryHub> hub, std::size_t connection)
      : hub_(std::move(hub)), connection_(connection) {
    hub_->mark_connected();
  }

  ~MemoryClient() override {
    hub_->server_inbox().push(Frame{connection_, {}, true, "client closed"});
  }

  void send(const wire::WireMessage& message) override {
    hub_->server_inbox().push(Frame{connection_, wire::encode_message(message), false, {}});
  }

  wire::WireMessage receive() override {
    auto frame = hub_->client_inbox(connection_).pop_for(hub_->timeout());
    if (!frame) throw ProtocolError("timed out waiting for the server");
    return decode_frame(std::move(*frame)).message;
  }

 private:
  std::shared_ptr<MemoryHub> hub_;
  std::size_t connection_;
};

}  // namespace

MemoryHub::MemoryHub(std::size_t clients, Millis timeout) : timeout_(timeout) {
  if (clients == 0) throw ArgumentError("memory hub needs at least one client");
  for (std::size_t i = 0; i < clients; ++i) {
    client_inboxes_.push_back(std::make_unique<BlockingQueue<Frame>>());
  }
}

std::shared_ptr<MemoryHub> MemoryHub::create(std::size_t clients, Millis timeout) {
  return std::shared_ptr<MemoryHub>(new MemoryHub(clients, timeout));
}

std::unique_ptr<ServerTransport> MemoryHub::server() {
  return std::make_unique<MemoryServer>(shared_from_this());
}

std::unique_ptr<ClientTransport> MemoryHub::client(std::size_t connection) {
  if (connection >= clients()) throw ArgumentError("no such memory connection");
  return std::make_unique<MemoryClient>(shared_from_this(), connection);
}

void MemoryHub::mark_connected() {
  {
    std::lock_guard lock(mu_);
    ++connected_;
  }
  cv_.notify_all();
}

bool MemoryHub::wait_connected(std::size_t count, Millis timeout) {
  std::unique_lock lock(mu_);
  return cv_.wait_for(lock, timeout, [&] { return connected_ >= count; });
}

// ---------------------------------------------------------------- tcp

namespace {

std::string errno_text() { return std::strerror(errno); }

// Waits until fd is readable; false on timeout.
bool wait_readable(int fd, Millis timeout) {
  pollfd p{fd, POLLIN, 0};
  for (;;) {
    int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw IoError("poll failed: " + errno_text());
  }
}

// Reads exactly n bytes. Returns false on clean EOF before the first byte.
bool read_exact(int fd, std::uint8_t* dst, std::size_t n, Millis timeout) {
  std::size_t got = 0;
  while (got < n) {
    if (!wait_readable(fd, timeout)) throw ProtocolError("timed out reading from socket");
    ssize_t rc = ::recv(fd, dst + got, n - got, 0);
    if (rc == 0) {
      if (got == 0) return false;
      throw ProtocolError("connection closed mid-frame");
    }
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw IoError("recv failed: " + errno_text());
    }
    got += static_cast<std::size_t>(rc);
  }
  return true;
}

void write_all(int fd, const Bytes& bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    ssize_t rc = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError("send failed: " + errno_text());
    }
    sent += static_cast<std::size_t>(rc);
  }
}

// One whole frame, header validated before the payload is read. Empty
// optional on clean EOF.
std::optional<Bytes> read_frame(int fd, Millis timeout) {
  Bytes bytes(wire::kHeaderBytes);
  if (!read_exact(fd, bytes.data(), bytes.size(), timeout)) return std::nullopt;
  const wire::Header h = wire::decode_header(bytes);
  bytes.resize(wire::kHeaderBytes + h.payload_len);
  if (h.payload_len > 0 && !read_exact(fd, bytes.data() + wire::kHeaderBytes, h.payload_len, timeout)) {
    throw ProtocolError("connection closed mid-frame");
  }
  return bytes;
}

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw IoError("cannot resolve host '" + host + "'");
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

TcpServerTransport::TcpServerTransport(const std::string& host, std::uint16_t port, Millis timeout)
    : timeout_(timeout) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw IoError("socket failed: " + errno_text());
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr = resolve(host, port);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    const std::string err = errno_text();
    ::close(listen_fd_);
    throw IoError("bind " + host + ":" + std::to_string(port) + " failed: " + err);
  }
  if (::listen(listen_fd_, 64) != 0) {
    const std::string err = errno_text();
    ::close(listen_fd_);
    throw IoError("listen failed: " + err);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpServerTransport::~TcpServerTransport() {
  for (int fd : fds_) ::shutdown(fd, SHUT_RDWR);
  for (auto& t : readers_) t.join();
  for (int fd : fds_) ::close(fd);
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void TcpServerTransport::accept(std::size_t count) {
  while (fds_.size() < count) {
    if (!wait_readable(listen_fd_, timeout_)) {
      throw ProtocolError("timed out with " + std::to_string(fds_.size()) + " of " +
                          std::to_string(count) + " clients connected");
    }
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      throw IoError("accept failed: " + errno_text());
    }
    set_nodelay(fd);
    const std::size_t conn = fds_.size();
    fds_.push_back(fd);
    readers_.emplace_back([this, fd, conn] {
      try {
        // No deadline here: the receiving side applies the round timeout.
        while (auto bytes = read_frame(fd, Millis(-1))) {
          inbox_.push(Frame{conn, std::move(*bytes), false, {}});
        }
        inbox_.push(Frame{conn, {}, true, {}});
      } catch (const std::exception& e) {
        inbox_.push(Frame{conn, {}, true, e.what()});
      }
    });
  }
}

void TcpServerTransport::send(std::size_t connection, const wire::WireMessage& message) {
  write_all(fds_.at(connection), wire::encode_message(message));
}

Inbound TcpServerTransport::receive() {
  auto frame = inbox_.pop_for(timeout_);
  if (!frame) throw ProtocolError("timed out waiting for client messages");
  return decode_frame(std::move(*frame));
}

TcpClientTransport::TcpClientTransport(const std::string& host, std::uint16_t port, Millis timeout)
    : timeout_(timeout) {
  const sockaddr_in addr = resolve(host, port);
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw IoError("socket failed: " + errno_text());
    if (::connect(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) == 0) break;
    const std::string err = errno_text();
    ::close(fd_);
    fd_ = -1;
    if (std::chrono::steady_clock::now() >= deadline) {
      throw IoError("connect to " + host + ":" + std::to_string(port) + " failed: " + err);
    }
    std::this_thread::sleep_for(Millis(20));
  }
  set_nodelay(fd_);
}

TcpClientTransport::~TcpClientTransport() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpClientTransport::send(const wire::WireMessage& message) {
  write_all(fd_, wire::encode_message(message));
}

wire::WireMessage TcpClientTransport::receive() {
  auto bytes = read_frame(fd_, timeout_);
  if (!bytes) throw ProtocolError("server closed the connection");
  return wire::decode_message(*bytes);
}

}  // namespace gdfed
