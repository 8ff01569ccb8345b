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

#ifndef TRIALWORKS_WEBSOCKET_H
#define TRIALWORKS_WEBSOCKET_H

#include <string>
#include <string_view>

#include "trialworks/transport.h"

namespace tw {

// Browser-socket transport: one envelope per text frame, no length prefix.
class WebSocketConnection : public Connection {
public:
  // `client_side` connections mask outgoing frames as the protocol requires of clients.
  WebSocketConnection(Socket socket, bool client_side, std::string peer, Bytes leftover = {});
  ~WebSocketConnection() override;

  void send(const Envelope& envelope) override;
  std::optional<Envelope> receive(Millis timeout) override;
  void close() override;
  bool is_open() const override { return m_open; }
  std::string peer() const override { return m_peer; }

  void send_text(std::string_view text);
  // Next complete text message; nullopt on timeout.
  std::optional<std::string> receive_text(Millis timeout);

private:
  void send_frame(std::uint8_t opcode, std::string_view data);
  bool fill(Millis timeout);

  Socket m_socket;
  bool m_client_side;
  std::string m_peer;
  std::mutex m_send_lock;
  Bytes m_buffer;
  std::string m_partial;
  std::atomic<bool> m_open{true};
};

std::string websocket_accept_key(std::string_view client_key);

// Server side of the opening handshake. Throws TransportError on a bad request.
ConnectionPtr websocket_accept(Socket socket, Millis timeout = Millis(5000));
std::shared_ptr<WebSocketConnection> websocket_connect(const std::string& host, std::uint16_t port,
                                                       const std::string& path = "/", Millis timeout = Millis(5000));

}  // namespace tw

#endif
