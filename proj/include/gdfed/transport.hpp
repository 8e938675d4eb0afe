#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gdfed/wire.hpp"

namespace gdfed {

using Millis = std::chrono::milliseconds;

template <typename T>
class BlockingQueue {
 public:
  void push(T value) {
    {
      std::lock_guard lock(mu_);
      items_.push_back(std::move(value));
    }
    cv_.notify_one();
  }

  std::optional<T> pop_for(Millis timeout) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_for(lock, timeout, [&] { return !items_.empty(); })) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    return value;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
};

struct Inbound {
  std::size_t connection = 0;
  wire::WireMessage message;
};

// Server end. Connections are numbered in accept order; client identity is
// established by the handshake, not by the connection number.
class ServerTransport {
 public:
  virtual ~ServerTransport() = default;
  // Blocks until `count` clients are connected.
  virtual void accept(std::size_t count) = 0;
  virtual void send(std::size_t connection, const wire::WireMessage& message) = 0;
  // Next message from any connection. ProtocolError when a client drops or
  // the timeout expires; FormatError for malformed frames.
  virtual Inbound receive() = 0;
};

class ClientTransport {
 public:
  virtual ~ClientTransport() = default;
  virtual void send(const wire::WireMessage& message) = 0;
  virtual wire::WireMessage receive() = 0;
};

// Frames exchanged between transport threads. Messages travel as encoded
// bytes on every transport so both decode the same way.
struct Frame {
  std::size_t connection = 0;
  Bytes bytes;
  bool disconnect = false;
  std::string error;
};

// ---------------------------------------------------------------- memory

// In-process transport for `clients` connections. Create the server end and
// one client end per connection; ends may live on different threads.
class MemoryHub : public std::enable_shared_from_this<MemoryHub> {
 public:
  static std::shared_ptr<MemoryHub> create(std::size_t clients, Millis timeout = Millis(120000));

  std::unique_ptr<ServerTransport> server();
  std::unique_ptr<ClientTransport> client(std::size_t connection);

  std::size_t clients() const { return client_inboxes_.size(); }
  Millis timeout() const { return timeout_; }

  BlockingQueue<Frame>& server_inbox() { return server_inbox_; }
  BlockingQueue<Frame>& client_inbox(std::size_t i) { return *client_inboxes_.at(i); }
  void mark_connected();
  bool wait_connected(std::size_t count, Millis timeout);

 private:
  MemoryHub(std::size_t clients, Millis timeout);

  BlockingQueue<Frame> server_inbox_;
  std::vector<std::unique_ptr<BlockingQueue<Frame>>> client_inboxes_;
  Millis timeout_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t connected_ = 0;
};

// ---------------------------------------------------------------- tcp

class TcpServerTransport : public ServerTransport {
 public:
  // Listens immediately; port 0 picks an ephemeral port.
  TcpServerTransport(const std::string& host, std::uint16_t port, Millis timeout = Millis(120000));
  ~TcpServerTransport() override;

  std::uint16_t port() const { return port_; }

  void accept(std::size_t count) override;
  void send(std::size_t connection, const wire::WireMessage& message) override;
  Inbound receive() override;

 private:
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  Millis timeout_;
  std::vector<int> fds_;
  std::vector<std::thread> readers_;
  BlockingQueue<Frame> inbox_;
};

class TcpClientTransport : public ClientTransport {
 public:
  // Retries the connection until the timeout expires.
  TcpClientTransport(const std::string& host, std::uint16_t port, Millis timeout = Millis(120000));
  ~TcpClientTransport() override;

  void send(const wire::WireMessage& message) override;
  wire::WireMessage receive() override;

 private:
  int fd_ = -1;
  Millis timeout_;
};

}  // namespace gdfed
