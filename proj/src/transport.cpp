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

#include "trialworks/transport.h"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <deque>

#include <spdlog/spdlog.h>

#include "trialworks/error.h"

namespace tw {

Socket::~Socket() {
  if (m_fd >= 0) {
    ::close(m_fd);
  }
}

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    if (m_fd >= 0) {
      ::close(m_fd);
    }
    m_fd = std::exchange(other.m_fd, -1);
  }
  return *this;
}

void Socket::shutdown() {
  if (m_fd >= 0) {
    ::shutdown(m_fd, SHUT_RDWR);
  }
}

void Socket::write_all(const void* data, std::size_t size) {
  const auto* ptr = static_cast<const std::uint8_t*>(data);
  while (size > 0) {
    const ssize_t n = ::send(m_fd, ptr, size, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) {
        continue;
      }
      throw TransportError(fmt::format("send failed: {}", std::strerror(errno)));
    }
    ptr += n;
    size -= static_cast<std::size_t>(n);
  }
}

std::optional<std::size_t> Socket::read_some(void* data, std::size_t size, Millis timeout) {
  pollfd pfd{m_fd, POLLIN, 0};
  for (;;) {
    const int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (ready < 0) {
      if (errno == EINTR) {
        continue;
      }
      throw TransportError(fmt::format("poll failed: {}", std::strerror(errno)));
    }
    if (ready == 0) {
      return std::nullopt;
    }
    break;
  }
  const ssize_t n = ::recv(m_fd, data, size, 0);
  if (n < 0) {
    if (errno == EINTR || errno == EAGAIN) {
      return std::nullopt;
    }
    return 0;
  }
  return static_cast<std::size_t>(n);
}

HostPort parse_host_port(const std::string& address) {
  std::string rest = address;
  if (rest.rfind("tcp://", 0) == 0) {
    rest = rest.substr(6);
  }
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == rest.size()) {
    throw TransportError("invalid address: " + address);
  }
  HostPort result;
  result.host = rest.substr(0, colon);
  const auto port_text = rest.substr(colon + 1);
  unsigned long port = 0;
  for (char c : port_text) {
    if (c < '0' || c > '9') {
      throw TransportError("invalid port in address: " + address);
    }
    port = port * 10 + static_cast<unsigned long>(c - '0');
    if (port > 65535) {
      throw TransportError("invalid port in address: " + address);
    }
  }
  if (port == 0) {
    throw TransportError("invalid port in address: " + address);
  }
  result.port = static_cast<std::uint16_t>(port);
  return result;
}

bool is_valid_endpoint(const std::string& endpoint) {
  if (endpoint.rfind(INPROC_SCHEME, 0) == 0) {
    return endpoint.size() > INPROC_SCHEME.size();
  }
  try {
    parse_host_port(endpoint);
    return true;
  }
  catch (const TransportError&) {
    return false;
  }
}

Socket tcp_connect(const std::string& host, std::uint16_t port, Millis timeout) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* result = nullptr;
  const auto port_text = std::to_string(port);
  if (::getaddrinfo(host.c_str(), port_text.c_str(), &hints, &result) != 0 || result == nullptr) {
    throw TransportError("cannot resolve " + host);
  }
  Socket sock(::socket(result->ai_family, result->ai_socktype, result->ai_protocol));
  if (!sock.valid()) {
    ::freeaddrinfo(result);
    throw TransportError("socket() failed");
  }
  const int flags = ::fcntl(sock.fd(), F_GETFL, 0);
  ::fcntl(sock.fd(), F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(sock.fd(), result->ai_addr, result->ai_addrlen);
  ::freeaddrinfo(result);
  if (rc < 0 && errno != EINPROGRESS) {
    throw TransportError(fmt::format("connect to {}:{} failed: {}", host, port, std::strerror(errno)));
  }
  if (rc < 0) {
    pollfd pfd{sock.fd(), POLLOUT, 0};
    rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(sock.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (rc <= 0 || err != 0) {
      throw TransportError(fmt::format("connect to {}:{} failed", host, port));
    }
  }
  ::fcntl(sock.fd(), F_SETFL, flags);
  int one = 1;
  ::setsockopt(sock.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return sock;
}

FramedSocketConnection::FramedSocketConnection(Socket socket, std::string peer) :
    m_socket(std::move(socket)), m_peer(std::move(peer)) {}

FramedSocketConnection::~FramedSocketConnection() { close(); }

void FramedSocketConnection::send(const Envelope& envelope) {
  auto frame = encode_frame(envelope);
  const std::lock_guard lg(m_send_lock);
  if (!m_open) {
    throw TransportError("connection closed");
  }
  try {
    m_socket.write_all(frame.data(), frame.size());
  }
  catch (const TransportError&) {
    m_open = false;
    throw;
  }
}

std::optional<Envelope> FramedSocketConnection::receive(Millis timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    if (auto frame = try_decode_frame(m_buffer)) {
      m_buffer.erase(m_buffer.begin(), m_buffer.begin() + static_cast<std::ptrdiff_t>(frame->consumed));
      return std::move(frame->envelope);
    }
    if (!m_open) {
      throw TransportError("connection closed");
    }
    const auto remaining =
        std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
    std::uint8_t chunk[16384];
    auto n = m_socket.read_some(chunk, sizeof(chunk), std::max(remaining, Millis(0)));
    if (!n) {
      if (std::chrono::steady_clock::now() >= deadline) {
        return std::nullopt;
      }
      continue;
    }
    if (*n == 0) {
      m_open = false;
      throw TransportError("connection closed by peer");
    }
    m_buffer.insert(m_buffer.end(), chunk, chunk + *n);
  }
}

void FramedSocketConnection::close() {
  m_open = false;
  m_socket.shutdown();
}

void ThreadGroup::reap_locked() {
  for (auto it = m_entries.begin(); it != m_entries.end();) {
    if (it->done->load()) {
      it->thread.join();
      it = m_entries.erase(it);
    }
    else {
      ++it;
    }
  }
}

void ThreadGroup::spawn(std::function<void()> fn) {
  const std::lock_guard lg(m_lock);
  reap_locked();
  auto done = std::make_shared<std::atomic<bool>>(false);
  m_entries.push_back(Entry{std::thread([fn = std::move(fn), done]() {
                              try {
                                fn();
                              }
                              catch (const std::exception& e) {
                                spdlog::error("worker thread failed: {}", e.what());
                              }
                              done->store(true);
                            }),
                            done});
}

void ThreadGroup::join_all() {
  std::list<Entry> entries;
  {
    const std::lock_guard lg(m_lock);
    entries.swap(m_entries);
  }
  for (auto& entry : entries) {
    if (entry.thread.joinable()) {
      entry.thread.join();
    }
  }
}

std::size_t ThreadGroup::active() const {
  const std::lock_guard lg(m_lock);
  std::size_t count = 0;
  for (const auto& entry : m_entries) {
    count += entry.done->load() ? 0 : 1;
  }
  return count;
}

void ConnectionSet::add(const ConnectionPtr& conn) {
  const std::lock_guard lg(m_lock);
  m_conns.remove_if([](const auto& weak) { return weak.expired(); });
  m_conns.push_back(conn);
}

void ConnectionSet::close_all() {
  std::list<std::weak_ptr<Connection>> conns;
  {
    const std::lock_guard lg(m_lock);
    conns.swap(m_conns);
  }
  for (auto& weak : conns) {
    if (auto conn = weak.lock()) {
      conn->close();
    }
  }
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  m_socket = Socket(::socket(AF_INET, SOCK_STREAM, 0));
  if (!m_socket.valid()) {
    throw TransportError("socket() failed");
  }
  int one = 1;
  ::setsockopt(m_socket.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw TransportError("invalid listen host " + host);
  }
  if (::bind(m_socket.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0) {
    throw TransportError(fmt::format("bind {}:{} failed: {}", host, port, std::strerror(errno)));
  }
  if (::listen(m_socket.fd(), 256) < 0) {
    throw TransportError("listen failed");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(m_socket.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  m_port = ntohs(addr.sin_port);
}

std::optional<Socket> TcpListener::accept(Millis timeout) {
  pollfd pfd{m_socket.fd(), POLLIN, 0};
  const int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
  if (ready <= 0 || (pfd.revents & POLLIN) == 0) {
    return std::nullopt;
  }
  const int fd = ::accept(m_socket.fd(), nullptr, nullptr);
  if (fd < 0) {
    return std::nullopt;
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return Socket(fd);
}

TcpServer::TcpServer(const std::string& host, std::uint16_t port, ConnectionHandler handler, SocketWrapper wrap) :
    m_listener(host, port), m_host(host), m_handler(std::move(handler)), m_wrap(std::move(wrap)) {
  if (!m_wrap) {
    m_wrap = [](Socket sock) -> ConnectionPtr { return std::make_shared<FramedSocketConnection>(std::move(sock), "tcp"); };
  }
  m_accept_thread = std::thread([this]() { accept_loop(); });
}

TcpServer::~TcpServer() { stop(); }

std::string TcpServer::address() const { return fmt::format("{}:{}", m_host, port()); }

void TcpServer::accept_loop() {
  while (!m_stop) {
    auto sock = m_listener.accept(Millis(100));
    if (!sock) {
      continue;
    }
    auto raw = std::make_shared<Socket>(std::move(*sock));
    m_workers.spawn([this, raw]() {
      ConnectionPtr conn;
      try {
        conn = m_wrap(std::move(*raw));
      }
      catch (const std::exception& e) {
        spdlog::debug("dropping peer during connection setup: {}", e.what());
        return;
      }
      if (!conn) {
        return;
      }
      m_conns.add(conn);
      if (m_stop) {
        conn->close();
      }
      m_handler(conn);
    });
  }
}

void TcpServer::stop() {
  if (m_stop.exchange(true)) {
    return;
  }
  if (m_accept_thread.joinable()) {
    m_accept_thread.join();
  }
  m_listener.close();
  m_conns.close_all();
  m_workers.join_all();
}

namespace {

// One direction of an in-process pair.
struct InProcQueue {
  std::mutex lock;
  std::condition_variable cv;
  std::deque<Envelope> frames;
  bool closed = false;
};

class InProcConnection : public Connection {
public:
  InProcConnection(std::shared_ptr<InProcQueue> inbox, std::shared_ptr<InProcQueue> outbox, std::string peer) :
      m_inbox(std::move(inbox)), m_outbox(std::move(outbox)), m_peer(std::move(peer)) {}
  ~InProcConnection() override { close(); }

  // Envelopes are handed over as objects after the encoder's own checks.
  void send(const Envelope& envelope) override {
    if (envelope.sender.name.empty()) {
      throw EncodeError("sender name is empty");
    }
    check_finite(envelope.payload, "payload");
    {
      const std::lock_guard lg(m_outbox->lock);
      if (m_outbox->closed) {
        throw TransportError("connection closed");
      }
      m_outbox->frames.push_back(envelope);
    }
    m_outbox->cv.notify_one();
  }

  std::optional<Envelope> receive(Millis timeout) override {
    std::unique_lock lk(m_inbox->lock);
    if (!m_inbox->cv.wait_for(lk, timeout, [&]() { return !m_inbox->frames.empty() || m_inbox->closed; })) {
      return std::nullopt;
    }
    if (m_inbox->frames.empty()) {
      throw TransportError("connection closed by peer");
    }
    auto envelope = std::move(m_inbox->frames.front());
    m_inbox->frames.pop_front();
    lk.unlock();
    if (!is_wire_type(envelope.msg_type)) {
      throw ProtocolError(std::string(to_string(envelope.msg_type)));
    }
    return envelope;
  }

  void close() override {
    for (const auto& queue : {m_inbox, m_outbox}) {
      {
        const std::lock_guard lg(queue->lock);
        queue->closed = true;
      }
      queue->cv.notify_all();
    }
  }

  bool is_open() const override {
    const std::lock_guard lg(m_outbox->lock);
    return !m_outbox->closed;
  }

  std::string peer() const override { return m_peer; }

private:
  std::shared_ptr<InProcQueue> m_inbox;
  std::shared_ptr<InProcQueue> m_outbox;
  std::string m_peer;
};

}  // namespace

std::pair<ConnectionPtr, ConnectionPtr> make_inproc_pair(const std::string& name) {
  auto a_to_b = std::make_shared<InProcQueue>();
  auto b_to_a = std::make_shared<InProcQueue>();
  return {std::make_shared<InProcConnection>(b_to_a, a_to_b, name),
          std::make_shared<InProcConnection>(a_to_b, b_to_a, name)};
}

void InProcNetwork::listen(const std::string& name, ConnectionHandler handler) {
  const std::lock_guard lg(m_lock);
  m_listeners[name] = std::move(handler);
}

void InProcNetwork::unlisten(const std::string& name) {
  const std::lock_guard lg(m_lock);
  m_listeners.erase(name);
}

ConnectionPtr InProcNetwork::dial(const std::string& name) {
  ConnectionHandler handler;
  {
    const std::lock_guard lg(m_lock);
    auto it = m_listeners.find(name);
    if (it == m_listeners.end()) {
      throw TransportError("no in-process listener " + name);
    }
    handler = it->second;
  }
  auto [local, remote] = make_inproc_pair(name);
  m_conns.add(local);
  m_conns.add(remote);
  m_workers.spawn([handler = std::move(handler), remote = remote]() { handler(remote); });
  return local;
}

void InProcNetwork::shutdown() {
  {
    const std::lock_guard lg(m_lock);
    m_listeners.clear();
  }
  m_conns.close_all();
  m_workers.join_all();
}

ConnectionPtr Dialer::dial(const std::string& endpoint, Millis timeout) const {
  if (endpoint.rfind(INPROC_SCHEME, 0) == 0) {
    if (!m_inproc) {
      throw TransportError("no in-process network for " + endpoint);
    }
    return m_inproc->dial(endpoint.substr(INPROC_SCHEME.size()));
  }
  auto address = parse_host_port(endpoint);
  return std::make_shared<FramedSocketConnection>(tcp_connect(address.host, address.port, timeout), endpoint);
}

}  // namespace tw
