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

#include "trialworks/websocket.h"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <random>

#include "trialworks/error.h"

namespace tw {
namespace {

constexpr std::string_view WS_GUID = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
constexpr std::uint8_t OP_CONTINUATION = 0x0;
constexpr std::uint8_t OP_TEXT = 0x1;
constexpr std::uint8_t OP_BINARY = 0x2;
constexpr std::uint8_t OP_CLOSE = 0x8;
constexpr std::uint8_t OP_PING = 0x9;
constexpr std::uint8_t OP_PONG = 0xA;

std::string base64(const unsigned char* data, std::size_t size) {
  std::string out(4 * ((size + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(size));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return std::string(s);
}

// Reads up to and including the blank line ending an HTTP header block.
std::string read_http_head(Socket& sock, Bytes& leftover, Millis timeout) {
  std::string head;
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    auto end = head.find("\r\n\r\n");
    if (end != std::string::npos) {
      leftover.assign(head.begin() + static_cast<std::ptrdiff_t>(end + 4), head.end());
      head.resize(end + 2);
      return head;
    }
    if (head.size() > 16384) {
      throw TransportError("handshake header too large");
    }
    auto remaining = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) {
      throw TransportError("handshake timed out");
    }
    char chunk[1024];
    auto n = sock.read_some(chunk, sizeof(chunk), remaining);
    if (!n) {
      continue;
    }
    if (*n == 0) {
      throw TransportError("peer closed during handshake");
    }
    head.append(chunk, *n);
  }
}

std::map<std::string, std::string> parse_headers(const std::string& head, std::string& first_line) {
  std::map<std::string, std::string> headers;
  std::size_t pos = head.find("\r\n");
  first_line = head.substr(0, pos);
  while (pos != std::string::npos && pos + 2 < head.size()) {
    auto next = head.find("\r\n", pos + 2);
    auto line = head.substr(pos + 2, next - pos - 2);
    auto colon = line.find(':');
    if (colon != std::string::npos) {
      headers[lower(trim(line.substr(0, colon)))] = trim(std::string_view(line).substr(colon + 1));
    }
    pos = next;
  }
  return headers;
}

}  // namespace

std::string websocket_accept_key(std::string_view client_key) {
  std::string material(client_key);
  material.append(WS_GUID);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int size = 0;
  EVP_Digest(material.data(), material.size(), digest, &size, EVP_sha1(), nullptr);
  return base64(digest, size);
}

WebSocketConnection::WebSocketConnection(Socket socket, bool client_side, std::string peer, Bytes leftover) :
    m_socket(std::move(socket)), m_client_side(client_side), m_peer(std::move(peer)), m_buffer(std::move(leftover)) {}

WebSocketConnection::~WebSocketConnection() { close(); }

void WebSocketConnection::send_frame(std::uint8_t opcode, std::string_view data) {
  Bytes frame;
  frame.push_back(static_cast<std::uint8_t>(0x80 | opcode));
  const std::uint8_t mask_bit = m_client_side ? 0x80 : 0x00;
  const std::uint64_t size = data.size();
  if (size < 126) {
    frame.push_back(static_cast<std::uint8_t>(mask_bit | size));
  }
  else if (size <= 0xFFFF) {
    frame.push_back(mask_bit | 126);
    frame.push_back(static_cast<std::uint8_t>(size >> 8));
    frame.push_back(static_cast<std::uint8_t>(size));
  }
  else {
    frame.push_back(mask_bit | 127);
    for (int shift = 56; shift >= 0; shift -= 8) {
      frame.push_back(static_cast<std::uint8_t>(size >> shift));
    }
  }
  std::uint8_t mask[4] = {0, 0, 0, 0};
  if (m_client_side) {
    static thread_local std::mt19937 rng(std::random_device{}());
    for (auto& b : mask) {
      b = static_cast<std::uint8_t>(rng());
      frame.push_back(b);
    }
  }
  const std::size_t start = frame.size();
  frame.insert(frame.end(), data.begin(), data.end());
  if (m_client_side) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      frame[start + i] ^= mask[i % 4];
    }
  }
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

void WebSocketConnection::send_text(std::string_view text) { send_frame(OP_TEXT, text); }

void WebSocketConnection::send(const Envelope& envelope) { send_text(to_canonical_text(envelope)); }

bool WebSocketConnection::fill(Millis timeout) {
  std::uint8_t chunk[16384];
  auto n = m_socket.read_some(chunk, sizeof(chunk), timeout);
  if (!n) {
    return false;
  }
  if (*n == 0) {
    m_open = false;
    throw TransportError("connection closed by peer");
  }
  m_buffer.insert(m_buffer.end(), chunk, chunk + *n);
  return true;
}

std::optional<std::string> WebSocketConnection::receive_text(Millis timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    // Try to parse one frame out of the buffer.
    if (m_buffer.size() >= 2) {
      const bool fin = (m_buffer[0] & 0x80) != 0;
      const std::uint8_t opcode = m_buffer[0] & 0x0F;
      const bool masked = (m_buffer[1] & 0x80) != 0;
      std::uint64_t size = m_buffer[1] & 0x7F;
      std::size_t pos = 2;
      bool complete = true;
      if (size == 126) {
        complete = m_buffer.size() >= 4;
        if (complete) {
          size = (std::uint64_t{m_buffer[2]} << 8) | m_buffer[3];
          pos = 4;
        }
      }
      else if (size == 127) {
        complete = m_buffer.size() >= 10;
        if (complete) {
          size = 0;
          for (int i = 0; i < 8; ++i) {
            size = (size << 8) | m_buffer[2 + i];
          }
          pos = 10;
        }
      }
      if (complete && size > MAX_FRAME_SIZE) {
        throw ProtocolError("websocket frame too large");
      }
      const std::size_t mask_pos = pos;
      if (masked) {
        pos += 4;
      }
      if (complete && m_buffer.size() >= pos + size) {
        std::string data(m_buffer.begin() + static_cast<std::ptrdiff_t>(pos),
                         m_buffer.begin() + static_cast<std::ptrdiff_t>(pos + size));
        if (masked) {
          for (std::size_t i = 0; i < data.size(); ++i) {
            data[i] = static_cast<char>(data[i] ^ m_buffer[mask_pos + (i % 4)]);
          }
        }
        m_buffer.erase(m_buffer.begin(), m_buffer.begin() + static_cast<std::ptrdiff_t>(pos + size));
        switch (opcode) {
        case OP_PING:
          send_frame(OP_PONG, data);
          break;
        case OP_PONG:
          break;
        case OP_CLOSE:
          try {
            send_frame(OP_CLOSE, {});
          }
          catch (const TransportError&) {
          }
          close();
          throw TransportError("connection closed by peer");
        case OP_TEXT:
        case OP_BINARY:
        case OP_CONTINUATION:
          m_partial += data;
          if (fin) {
            return std::exchange(m_partial, {});
          }
          break;
        default:
          throw ProtocolError("unknown websocket opcode");
        }
        continue;
      }
    }
    if (!m_open) {
      throw TransportError("connection closed");
    }
    auto remaining = std::chrono::duration_cast<Millis>(deadline - std::chrono::steady_clock::now());
    if (!fill(std::max(remaining, Millis(0))) && std::chrono::steady_clock::now() >= deadline) {
      return std::nullopt;
    }
  }
}

std::optional<Envelope> WebSocketConnection::receive(Millis timeout) {
  auto text = receive_text(timeout);
  if (!text) {
    return std::nullopt;
  }
  return envelope_from_text(*text);
}

void WebSocketConnection::close() {
  m_open = false;
  m_socket.shutdown();
}

ConnectionPtr websocket_accept(Socket socket, Millis timeout) {
  Bytes leftover;
  auto head = read_http_head(socket, leftover, timeout);
  std::string request_line;
  auto headers = parse_headers(head, request_line);
  auto key = headers.find("sec-websocket-key");
  auto upgrade = headers.find("upgrade");
  if (request_line.rfind("GET ", 0) != 0 || key == headers.end() || upgrade == headers.end() ||
      lower(upgrade->second) != "websocket") {
    const std::string_view reply = "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n";
    socket.write_all(reply.data(), reply.size());
    throw TransportError("not a websocket upgrade request");
  }
  const auto response = fmt::format(
      "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
      "Sec-WebSocket-Accept: {}\r\n\r\n",
      websocket_accept_key(key->second));
  socket.write_all(response.data(), response.size());
  return std::make_shared<WebSocketConnection>(std::move(socket), false, "ws", std::move(leftover));
}

std::shared_ptr<WebSocketConnection> websocket_connect(const std::string& host, std::uint16_t port,
                                                       const std::string& path, Millis timeout) {
  auto sock = tcp_connect(host, port, timeout);
  std::random_device rd;
  unsigned char nonce[16];
  for (auto& b : nonce) {
    b = static_cast<unsigned char>(rd());
  }
  const auto key = base64(nonce, sizeof(nonce));
  const auto request = fmt::format(
      "GET {} HTTP/1.1\r\nHost: {}:{}\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
      "Sec-WebSocket-Key: {}\r\nSec-WebSocket-Version: 13\r\n\r\n",
      path, host, port, key);
  sock.write_all(request.data(), request.size());
  Bytes leftover;
  auto head = read_http_head(sock, leftover, timeout);
  std::string status_line;
  auto headers = parse_headers(head, status_line);
  auto accept = headers.find("sec-websocket-accept");
  if (status_line.find(" 101") == std::string::npos || accept == headers.end() ||
      accept->second != websocket_accept_key(key)) {
    throw TransportError("websocket handshake rejected: " + status_line);
  }
  return std::make_shared<WebSocketConnection>(std::move(sock), true, fmt::format("{}:{}", host, port),
                                               std::move(leftover));
}

}  // namespace tw
