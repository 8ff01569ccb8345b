// Copyright 2026 The Trialworks Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef TRIALWORKS_TRANSPORT_H
#define TRIALWORKS_TRANSPORT_H

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "trialworks/protocol.h"

namespace tw {

using Millis = std::chrono::milliseconds;

// A bidirectional envelope stream. `send` may be called from any thread; `receive` from one
// reader at a time. Both throw TransportError once the peer is gone.
class Connection {
public:
  virtual ~Connection() = default;

  virtual void send(const Envelope& envelope) = 0;
  // nullopt on timeout.
  virtual std::optional<Envelope> receive(Millis timeout) = 0;
  virtual void close() = 0;
  virtual bool is_open() const = 0;
  virtual std::string peer() const = 0;
};

using ConnectionPtr = std::shared_ptr<Connection>;
using ConnectionHandler = std::function<void(ConnectionPtr)>;

// RAII file descriptor for a stream socket.
class Socket {
public:
  Socket() = default;
  explicit Socket(int fd) : m_fd(fd) {}
  ~Socket();
  Socket(Socket&& other) noexcept : m_fd(std::exchange(other.m_fd, -1)) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return m_fd; }
  bool valid() const { return m_fd >= 0; }
  void shutdown();

  // Blocks until all bytes are written.
  void write_all(const void* data, std::size_t size);
  // Returns 0 on orderly shutdown, nullopt on timeout.
  std::optional<std::size_t> read_some(void* data, std::size_t size, Millis timeout);

private:
  int m_fd = -1;
};

Socket tcp_connect(const std::string& host, std::uint16_t port, Millis timeout);

struct HostPort {
  std::string host;
  std::uint16_t port = 0;
};

// Accepts "host:port" (and "tcp://host:port"); throws TransportError otherwise.
HostPort parse_host_port(const std::string& address);
bool is_valid_endpoint(const std::string& endpoint);

// Length-prefixed frames over a stream socket.
class FramedSocketConnection : public Connection {
public:
  FramedSocketConnection(Socket socket, std::string peer);
  ~FramedSocketConnection() override;

  void send(const Envelope& envelope) override;
  std::optional<Envelope> receive(Millis timeout) override;
  void close() override;
  bool is_open() const override { return m_open; }
  std::string peer() const override { return m_peer; }

private:
  Socket m_socket;
  std::string m_peer;
  std::mutex m_send_lock;
  Bytes m_buffer;
  std::atomic<bool> m_open{true};
};

// Runs `fn` on its own thread and joins everything on destruction. Finished threads are
// reaped lazily on the next spawn.
class ThreadGroup {
public:
  ThreadGroup() = default;
  ~ThreadGroup() { join_all(); }
  ThreadGroup(const ThreadGroup&) = delete;
  ThreadGroup& operator=(const ThreadGroup&) = delete;

  void spawn(std::function<void()> fn);
  void join_all();
  std::size_t active() const;

private:
  struct Entry {
    std::thread thread;
    std::shared_ptr<std::atomic<bool>> done;
  };
  void reap_locked();

  mutable std::mutex m_lock;
  std::list<Entry> m_entries;
};

// Tracks live connections so a server can close them all on shutdown.
class ConnectionSet {
public:
  void add(const ConnectionPtr& conn);
  void close_all();

private:
  std::mutex m_lock;
  std::list<std::weak_ptr<Connection>> m_conns;
};

class TcpListener {
public:
  TcpListener(const std::string& host, std::uint16_t port);
  std::uint16_t port() const { return m_port; }
  std::optional<Socket> accept(Millis timeout);
  void close() { m_socket.shutdown(); }

private:
  Socket m_socket;
  std::uint16_t m_port = 0;
};

using SocketWrapper = std::function<ConnectionPtr(Socket)>;

// Accept loop feeding connections to `handler`, one thread per connection. `wrap` turns an
// accepted socket into a connection (length-prefixed framing unless told otherwise); it runs
// on the worker thread and may return null to drop the peer.
class TcpServer {
public:
  TcpServer(const std::string& host, std::uint16_t port, ConnectionHandler handler, SocketWrapper wrap = {});
  ~TcpServer();
  std::uint16_t port() const { return m_listener.port(); }
  std::string address() const;
  void stop();

private:
  void accept_loop();

  TcpListener m_listener;
  std::string m_host;
  ConnectionHandler m_handler;
  SocketWrapper m_wrap;
  std::atomic<bool> m_stop{false};
  ConnectionSet m_conns;
  ThreadGroup m_workers;
  std::thread m_accept_thread;
};

// Process-local endpoints ("inproc://name"). Envelopes pass as objects but go through the same
// checks as the codec: empty sender and non-finite numbers fail on send, storage types on receive.
class InProcNetwork {
public:
  void listen(const std::string& name, ConnectionHandler handler);
  void unlisten(const std::string& name);
  ConnectionPtr dial(const std::string& name);
  // Closes every connection handed out and joins handler threads.
  void shutdown();
  ~InProcNetwork() { shutdown(); }

private:
  std::mutex m_lock;
  std::map<std::string, ConnectionHandler> m_listeners;
  ConnectionSet m_conns;
  ThreadGroup m_workers;
};

// Two connected in-process ends.
std::pair<ConnectionPtr, ConnectionPtr> make_inproc_pair(const std::string& name);

constexpr std::string_view INPROC_SCHEME = "inproc://";

class Dialer {
public:
  explicit Dialer(std::shared_ptr<InProcNetwork> inproc = nullptr) : m_inproc(std::move(inproc)) {}
  ConnectionPtr dial(const std::string& endpoint, Millis timeout = Millis(2000)) const;
  const std::shared_ptr<InProcNetwork>& inproc() const { return m_inproc; }

private:
  std::shared_ptr<InProcNetwork> m_inproc;
};

}  // namespace tw

#endif
