/*
 * Copyright 2026 The HyFL Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "hyfl/errors.hpp"
#include "hyfl/frame.hpp"
#include "hyfl/rng.hpp"

namespace hyfl {

enum class RouteMode { ServerRouted, P2P };

struct TranscriptEntry {
  std::uint64_t ts = 0;  // logical send order
  std::string sender;
  std::string receiver;
  Frame frame;
};

/// Append-only log of every frame handed to the transport, in send order.
class Transcript {
 public:
  void append(std::string sender, std::string receiver, Frame frame) {
    std::lock_guard lock(mu_);
    entries_.push_back(
        {next_ts_++, std::move(sender), std::move(receiver), std::move(frame)});
  }

  std::vector<TranscriptEntry> snapshot() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

  /// One JSON object per line: {"ts":..,"from":..,"to":..,"type":..,"payload":..}
  void dump_jsonl(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write transcript file");
    for (const auto& e : snapshot()) {
      nlohmann::json j;
      j["ts"] = e.ts;
      j["from"] = e.sender;
      j["to"] = e.receiver;
      j["type"] = msg_type_name(e.frame.type);
      j["payload"] = nlohmann::json::parse(e.frame.payload);
      out << j.dump() << '\n';
    }
  }

 private:
  mutable std::mutex mu_;
  std::vector<TranscriptEntry> entries_;
  std::uint64_t next_ts_ = 0;
};

/// Message delivery between named nodes. Handlers are invoked one message
/// at a time per node.
class Transport {
 public:
  using Handler = std::function<void(const std::string& from, const Frame&)>;

  virtual ~Transport() = default;
  virtual void register_node(const std::string& node_id, Handler handler) = 0;
  virtual void remove_node(const std::string& node_id) = 0;
  virtual void send(const std::string& from, const std::string& to, Frame frame) = 0;

  /// Delivers messages until the predicate holds. Returns false when the
  /// transport went idle (in-process) or the timeout expired (TCP) first.
  virtual bool await(const std::function<bool()>& predicate,
                     std::chrono::milliseconds timeout) = 0;

  Transcript& transcript() { return transcript_; }
  const Transcript& transcript() const { return transcript_; }

 protected:
  Transcript transcript_;
};

/// Deterministic single-threaded bus. Per-channel FIFO; when several
/// channels hold mail the next channel is drawn from a seeded generator, so
/// a full protocol run yields byte-identical transcripts for equal seeds.
class InProcessBus : public Transport {
 public:
  explicit InProcessBus(std::uint64_t seed) : rng_(derive_seed(seed, "bus")) {}

  void register_node(const std::string& node_id, Handler handler) override {
    if (!handlers_.emplace(node_id, std::move(handler)).second)
      throw ProtocolError("node id already registered: " + node_id);
  }

  void remove_node(const std::string& node_id) override {
    handlers_.erase(node_id);
    for (auto it = queues_.begin(); it != queues_.end();)
      it = it->first.second == node_id ? queues_.erase(it) : std::next(it);
  }

  void send(const std::string& from, const std::string& to, Frame frame) override {
    if (!handlers_.count(to)) throw ProtocolError("unknown receiver: " + to);
    if (frame.payload.size() > kMaxFramePayload)
      throw ProtocolError("oversized frame");
    transcript_.append(from, to, frame);
    queues_[{from, to}].push_back(std::move(frame));
  }

  /// Delivers one pending message; false when all queues are empty.
  bool pump_one() {
    std::vector<const std::pair<std::string, std::string>*> ready;
    for (const auto& [channel, q] : queues_)
      if (!q.empty()) ready.push_back(&channel);
    if (ready.empty()) return false;
    const auto& channel = *ready[rng_.below(ready.size())];
    auto& q = queues_[channel];
    Frame frame = std::move(q.front());
    q.pop_front();
    auto it = handlers_.find(channel.second);
    if (it != handlers_.end()) it->second(channel.first, frame);
    return true;
  }

  void run_until_idle() {
    while (pump_one()) {
    }
  }

  bool await(const std::function<bool()>& predicate,
             std::chrono::milliseconds) override {
    while (!predicate()) {
      if (!pump_one()) return predicate();
    }
    return true;
  }

 private:
  std::map<std::string, Handler> handlers_;
  std::map<std::pair<std::string, std::string>, std::deque<Frame>> queues_;
  Rng rng_;
};

/// The same frame protocol over loopback TCP. Every node owns a listener;
/// connections are dialed lazily and identified by a short hello header.
/// Only per-channel FIFO order is guaranteed.
class TcpTransport : public Transport {
 public:
  explicit TcpTransport(std::string host = "127.0.0.1") : host_(std::move(host)) {}

  ~TcpTransport() override { shutdown(); }

  void register_node(const std::string& node_id, Handler handler) override {
    std::unique_lock lock(mu_);
    if (nodes_.count(node_id)) throw ProtocolError("node id already registered: " + node_id);
    auto node = std::make_shared<Node>();
    node->handler = std::move(handler);
    node->listen_fd = make_listener(node->port);
    nodes_[node_id] = node;
    lock.unlock();
    node->accept_thread = std::thread([this, node] { accept_loop(node); });
  }

  void remove_node(const std::string& node_id) override {
    std::shared_ptr<Node> node;
    {
      std::lock_guard lock(mu_);
      auto it = nodes_.find(node_id);
      if (it == nodes_.end()) return;
      node = it->second;
      nodes_.erase(it);
    }
    close_node(*node);
  }

  void send(const std::string& from, const std::string& to, Frame frame) override {
    std::shared_ptr<Node> dest;
    {
      std::lock_guard lock(mu_);
      auto it = nodes_.find(to);
      if (it == nodes_.end()) throw ProtocolError("unknown receiver: " + to);
      dest = it->second;
    }
    transcript_.append(from, to, frame);
    // One dialed connection per (from, to); guarded writes keep FIFO order.
    const auto key = std::make_pair(from, to);
    std::shared_ptr<Conn> conn;
    {
      std::lock_guard lock(conn_mu_);
      auto it = out_conns_.find(key);
      if (it == out_conns_.end()) {
        conn = std::make_shared<Conn>();
        conn->fd = dial(dest->port);
        send_hello(conn->fd, from);
        out_conns_[key] = conn;
      } else {
        conn = it->second;
      }
    }
    const auto bytes = encode_frame(frame);
    std::lock_guard wlock(conn->write_mu);
    write_all(conn->fd, bytes.data(), bytes.size());
  }

  bool await(const std::function<bool()>& predicate,
             std::chrono::milliseconds timeout) override {
    // Plain polling; handler state lives behind per-node locks, so a
    // condition-variable handshake would race the predicate anyway.
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (!predicate()) {
      if (std::chrono::steady_clock::now() >= deadline) return predicate();
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return true;
  }

  void shutdown() {
    std::map<std::string, std::shared_ptr<Node>> nodes;
    {
      std::lock_guard lock(mu_);
      nodes.swap(nodes_);
    }
    for (auto& [id, node] : nodes) close_node(*node);
    std::lock_guard lock(conn_mu_);
    for (auto& [key, conn] : out_conns_) ::close(conn->fd);
    out_conns_.clear();
  }

 private:
  struct Conn {
    int fd = -1;
    std::mutex write_mu;
  };

  struct Node {
    Handler handler;
    int listen_fd = -1;
    std::uint16_t port = 0;
    std::thread accept_thread;
    std::vector<std::thread> readers;
    std::mutex reader_fds_mu;
    std::vector<int> reader_fds;
    std::mutex handler_mu;  // one message at a time per node
    std::atomic<bool> closed{false};
  };

  int make_listener(std::uint16_t& port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError("socket() failed");
    const int on = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &on, sizeof(on));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = 0;
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1)
      throw ProtocolError("bad listener host");
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw ProtocolError("bind() failed");
    socklen_t len = sizeof(addr);
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    port = ntohs(addr.sin_port);
    if (::listen(fd, 64) != 0) throw ProtocolError("listen() failed");
    return fd;
  }

  int dial(std::uint16_t port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError("socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    ::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr);
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(fd);
      throw ProtocolError("connect() failed");
    }
    return fd;
  }

  static void write_all(int fd, const std::uint8_t* data, std::size_t len) {
    while (len > 0) {
      const auto n = ::send(fd, data, len, MSG_NOSIGNAL);
      if (n <= 0) throw ProtocolError("connection dropped while writing");
      data += n;
      len -= static_cast<std::size_t>(n);
    }
  }

  static bool read_all(int fd, std::uint8_t* data, std::size_t len) {
    while (len > 0) {
      const auto n = ::recv(fd, data, len, 0);
      if (n <= 0) return false;
      data += n;
      len -= static_cast<std::size_t>(n);
    }
    return true;
  }

  static void send_hello(int fd, const std::string& from) {
    if (from.size() > 0xFFFF) throw ProtocolError("node id too long");
    std::vector<std::uint8_t> hello(2 + from.size());
    hello[0] = static_cast<std::uint8_t>(from.size() >> 8);
    hello[1] = static_cast<std::uint8_t>(from.size());
    std::copy(from.begin(), from.end(), hello.begin() + 2);
    write_all(fd, hello.data(), hello.size());
  }

  void accept_loop(std::shared_ptr<Node> node) {
    for (;;) {
      const int conn = ::accept(node->listen_fd, nullptr, nullptr);
      if (conn < 0) return;  // listener closed
      {
        std::lock_guard lock(node->reader_fds_mu);
        node->reader_fds.push_back(conn);
      }
      node->readers.emplace_back([this, node, conn] { reader_loop(node, conn); });
    }
  }

  void reader_loop(std::shared_ptr<Node> node, int fd) {
    std::uint8_t hdr[2];
    if (!read_all(fd, hdr, 2)) {
      ::close(fd);
      return;
    }
    const std::size_t name_len = (static_cast<std::size_t>(hdr[0]) << 8) | hdr[1];
    std::string from(name_len, '\0');
    if (!read_all(fd, reinterpret_cast<std::uint8_t*>(from.data()), name_len)) {
      ::close(fd);
      return;
    }
    std::vector<std::uint8_t> buf;
    for (;;) {
      std::uint8_t len_type[5];
      if (!read_all(fd, len_type, 5)) break;
      const std::uint32_t len = (static_cast<std::uint32_t>(len_type[0]) << 24) |
                                (static_cast<std::uint32_t>(len_type[1]) << 16) |
                                (static_cast<std::uint32_t>(len_type[2]) << 8) |
                                static_cast<std::uint32_t>(len_type[3]);
      if (len > kMaxFramePayload) break;
      buf.assign(5 + len, 0);
      std::copy(len_type, len_type + 5, buf.begin());
      if (len > 0 && !read_all(fd, buf.data() + 5, len)) break;
      auto decoded = decode_frame(buf);
      if (!decoded.frame) break;  // malformed stream: drop the connection
      if (node->closed.load()) break;
      {
        std::lock_guard lock(node->handler_mu);
        node->handler(from, *decoded.frame);
      }
    }
    ::close(fd);
  }

  void close_node(Node& node) {
    node.closed.store(true);
    if (node.listen_fd >= 0) {
      ::shutdown(node.listen_fd, SHUT_RDWR);
      ::close(node.listen_fd);
      node.listen_fd = -1;
    }
    if (node.accept_thread.joinable()) node.accept_thread.join();
    {
      // Readers may be parked in recv(); shut their sockets down so the
      // joins below cannot block on a peer that never closes.
      std::lock_guard lock(node.reader_fds_mu);
      for (int fd : node.reader_fds) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : node.readers)
      if (t.joinable()) t.join();
    node.readers.clear();
  }

  std::string host_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Node>> nodes_;
  std::mutex conn_mu_;
  std::map<std::pair<std::string, std::string>, std::shared_ptr<Conn>> out_conns_;
};

}  // namespace hyfl
