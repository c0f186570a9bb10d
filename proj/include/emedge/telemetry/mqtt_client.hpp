#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include "emedge/telemetry/backoff.hpp"
#include "emedge/telemetry/mqtt_codec.hpp"
#include "emedge/telemetry/pubsub.hpp"

namespace emedge::telemetry {

struct BrokerEndpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 1883;
  std::string client_id = "emedge";
  std::optional<std::string> username;
  std::optional<std::string> password;
  std::uint16_t keepalive_s = 30;
};

// Accepts "host", "host:port" and "mqtt://host:port".
inline BrokerEndpoint parse_endpoint(std::string_view text) {
  BrokerEndpoint ep;
  if (text.starts_with("mqtt://")) text.remove_prefix(7);
  if (text.empty()) throw ConfigError("broker", "empty endpoint");
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) {
    ep.host = std::string(text);
    return ep;
  }
  ep.host = std::string(text.substr(0, colon));
  const auto port = text.substr(colon + 1);
  try {
    const int p = std::stoi(std::string(port));
    if (p <= 0 || p > 65535) throw std::out_of_range("port");
    ep.port = static_cast<std::uint16_t>(p);
  } catch (const std::logic_error&) {
    throw ConfigError("broker", "invalid port '" + std::string(port) + "'");
  }
  return ep;
}

struct ConnectionHealth {
  bool connected = false;
  std::uint64_t connect_attempts = 0;
  std::uint64_t failures = 0;
  std::uint64_t messages_received = 0;
  std::int64_t next_retry_ms = 0;
  std::string last_error;
};

namespace detail {

class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline Fd tcp_connect(const std::string& host, std::uint16_t port, std::chrono::milliseconds timeout,
                      std::string& error) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (int rc = ::getaddrinfo(host.c_str(), std::to_string(port).c_str(), &hints, &res); rc != 0) {
    error = std::string("resolve failed: ") + ::gai_strerror(rc);
    return {};
  }
  Fd result;
  for (addrinfo* ai = res; ai && !result; ai = ai->ai_next) {
    Fd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
    if (!fd) continue;
    const int flags = ::fcntl(fd.get(), F_GETFL, 0);
    ::fcntl(fd.get(), F_SETFL, flags | O_NONBLOCK);
    int rc = ::connect(fd.get(), ai->ai_addr, ai->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd pfd{fd.get(), POLLOUT, 0};
      if (::poll(&pfd, 1, static_cast<int>(timeout.count())) == 1) {
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
        rc = err == 0 ? 0 : -1;
        errno = err;
      } else {
        errno = ETIMEDOUT;
      }
    }
    if (rc == 0) {
      ::fcntl(fd.get(), F_SETFL, flags);
      int one = 1;
      ::setsockopt(fd.get(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      result = std::move(fd);
    } else {
      error = std::string("connect failed: ") + std::strerror(errno);
    }
  }
  ::freeaddrinfo(res);
  return result;
}

inline bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      return false;
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

}  // namespace detail

// MQTT 3.1.1 client. Subscriptions use QoS 1; publishes are QoS 0. A
// background thread keeps the session alive and reconnects with
// exponential backoff, re-subscribing after every reconnect.
class MqttClient final : public PubSubClient {
 public:
  explicit MqttClient(BrokerEndpoint endpoint, BackoffPolicy policy = {})
      : endpoint_(std::move(endpoint)), backoff_(policy) {}

  ~MqttClient() override { stop(); }

  MqttClient(const MqttClient&) = delete;
  MqttClient& operator=(const MqttClient&) = delete;

  void start() {
    if (thread_.joinable()) return;
    stopping_ = false;
    thread_ = std::thread([this] { run(); });
  }

  void stop() {
    {
      std::lock_guard lock(state_mu_);
      stopping_ = true;
      if (fd_) ::shutdown(fd_.get(), SHUT_RDWR);
    }
    wake_.notify_all();
    if (thread_.joinable()) thread_.join();
  }

  // Blocks until connected or the timeout expires.
  bool wait_connected(std::chrono::milliseconds timeout) {
    std::unique_lock lock(state_mu_);
    return wake_.wait_for(lock, timeout, [&] { return connected_ || stopping_; }) && connected_;
  }

  bool connected() const override {
    std::lock_guard lock(state_mu_);
    return connected_;
  }

  void publish(std::string_view topic, std::string_view payload) override {
    mqtt::Publish m;
    m.topic = std::string(topic);
    m.payload = std::string(payload);
    send(mqtt::publish_packet(m));
  }

  void subscribe(std::string filter, MessageHandler handler) override {
    bool live = false;
    {
      std::lock_guard lock(state_mu_);
      subscriptions_.emplace_back(filter, std::move(handler));
      live = connected_;
    }
    if (live) send_subscribe({filter});
  }

  void on_connected(std::function<void()> listener) override {
    std::lock_guard lock(state_mu_);
    listeners_.push_back(std::move(listener));
  }

  ConnectionHealth health() const {
    std::lock_guard lock(state_mu_);
    return health_;
  }

 private:
  void send(const std::string& bytes) {
    std::lock_guard send_lock(send_mu_);
    int fd = -1;
    {
      std::lock_guard lock(state_mu_);
      if (!connected_) throw Error("mqtt: not connected to " + endpoint_.host);
      fd = fd_.get();
    }
    if (!detail::send_all(fd, bytes)) throw Error("mqtt: send failed");
    last_sent_ = std::chrono::steady_clock::now();
  }

  void send_subscribe(const std::vector<std::string>& filters) {
    mqtt::Subscribe s;
    s.packet_id = next_packet_id();
    for (const auto& f : filters) s.filters.emplace_back(f, 1);
    send(mqtt::subscribe_packet(s));
  }

  std::uint16_t next_packet_id() {
    std::uint16_t id = packet_id_.fetch_add(1);
    if (id == 0) id = packet_id_.fetch_add(1);
    return id;
  }

  void run() {
    while (true) {
      {
        std::lock_guard lock(state_mu_);
        if (stopping_) break;
        ++health_.connect_attempts;
      }
      std::string error;
      if (connect_session(error)) {
        backoff_.reset();
        on_session_open();
        error = session_loop();
        std::lock_guard lock(state_mu_);
        connected_ = false;
        health_.connected = false;
        fd_.reset();
      }
      std::unique_lock lock(state_mu_);
      if (stopping_) break;
      ++health_.failures;
      health_.last_error = error;
      const auto delay = backoff_.next();
      health_.next_retry_ms = delay.count();
      wake_.wait_for(lock, delay, [&] { return stopping_; });
    }
    std::lock_guard lock(state_mu_);
    if (fd_ && connected_) detail::send_all(fd_.get(), mqtt::disconnect_packet());
    connected_ = false;
    health_.connected = false;
    fd_.reset();
  }

  bool connect_session(std::string& error) {
    auto fd = detail::tcp_connect(endpoint_.host, endpoint_.port, std::chrono::seconds(5), error);
    if (!fd) return false;
    mqtt::ConnectOptions o;
    o.client_id = endpoint_.client_id;
    o.keepalive_s = endpoint_.keepalive_s;
    o.username = endpoint_.username;
    o.password = endpoint_.password;
    if (!detail::send_all(fd.get(), mqtt::connect_packet(o))) {
      error = "mqtt: failed to send CONNECT";
      return false;
    }
    buffer_.clear();
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
    while (std::chrono::steady_clock::now() < deadline) {
      auto packet = read_packet(fd.get(), std::chrono::milliseconds(100), error);
      if (!error.empty()) return false;
      if (!packet) continue;
      if (packet->type() != mqtt::PacketType::connack) {
        error = "mqtt: expected CONNACK";
        return false;
      }
      if (auto rc = mqtt::decode_connack(*packet); rc != 0) {
        error = "mqtt: connection refused, code " + std::to_string(rc);
        return false;
      }
      std::lock_guard lock(state_mu_);
      if (stopping_) return false;
      fd_ = std::move(fd);
      connected_ = true;
      health_.connected = true;
      health_.last_error.clear();
      health_.next_retry_ms = 0;
      last_sent_ = std::chrono::steady_clock::now();
      last_received_ = last_sent_;
      wake_.notify_all();
      return true;
    }
    error = "mqtt: CONNACK timeout";
    return false;
  }

  void on_session_open() {
    std::vector<std::string> filters;
    std::vector<std::function<void()>> listeners;
    {
      std::lock_guard lock(state_mu_);
      for (const auto& [f, h] : subscriptions_) filters.push_back(f);
      listeners = listeners_;
    }
    try {
      if (!filters.empty()) send_subscribe(filters);
    } catch (const Error&) {
      return;
    }
    for (auto& l : listeners) l();
  }

  // Returns the reason the session ended.
  std::string session_loop() {
    const auto keepalive = std::chrono::seconds(endpoint_.keepalive_s);
    int fd = 0;
    {
      std::lock_guard lock(state_mu_);
      fd = fd_.get();
    }
    while (true) {
      {
        std::lock_guard lock(state_mu_);
        if (stopping_) return "stopped";
      }
      std::string error;
      auto packet = read_packet(fd, std::chrono::milliseconds(100), error);
      if (!error.empty()) return error;
      const auto now = std::chrono::steady_clock::now();
      if (packet) {
        last_received_ = now;
        try {
          handle(*packet);
        } catch (const mqtt::ProtocolError& e) {
          return std::string("mqtt: ") + e.what();
        } catch (const Error& e) {
          return e.what();
        }
      }
      if (keepalive.count() > 0) {
        if (now - last_sent_.load() >= keepalive / 2) {
          try {
            send(mqtt::pingreq_packet());
          } catch (const Error& e) {
            return e.what();
          }
        }
        if (now - last_received_ > keepalive + keepalive / 2) return "mqtt: keepalive timeout";
      }
    }
  }

  void handle(const mqtt::Packet& p) {
    switch (p.type()) {
      case mqtt::PacketType::publish: {
        auto m = mqtt::decode_publish(p);
        if (m.qos == 1) send(mqtt::puback_packet(m.packet_id));
        std::vector<MessageHandler> targets;
        {
          std::lock_guard lock(state_mu_);
          ++health_.messages_received;
          for (const auto& [filter, handler] : subscriptions_)
            if (topic_matches(filter, m.topic)) targets.push_back(handler);
        }
        for (auto& h : targets) h(m.topic, m.payload);
        break;
      }
      case mqtt::PacketType::suback:
      case mqtt::PacketType::pingresp:
      case mqtt::PacketType::puback:
        break;
      default:
        throw mqtt::ProtocolError("unexpected packet type " + std::to_string(static_cast<int>(p.type())));
    }
  }

  std::optional<mqtt::Packet> read_packet(int fd, std::chrono::milliseconds wait, std::string& error) {
    mqtt::Packet p;
    if (auto used = mqtt::try_decode(buffer_, p)) {
      buffer_.erase(0, used);
      return p;
    }
    pollfd pfd{fd, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(wait.count()));
    if (rc == 0) return std::nullopt;
    if (rc < 0) {
      if (errno == EINTR) return std::nullopt;
      error = std::string("poll failed: ") + std::strerror(errno);
      return std::nullopt;
    }
    char chunk[16384];
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n <= 0) {
      error = n == 0 ? "connection closed by broker" : std::string("recv failed: ") + std::strerror(errno);
      return std::nullopt;
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
    try {
      if (auto used = mqtt::try_decode(buffer_, p)) {
        buffer_.erase(0, used);
        return p;
      }
    } catch (const mqtt::ProtocolError& e) {
      error = e.what();
    }
    return std::nullopt;
  }

  BrokerEndpoint endpoint_;
  Backoff backoff_;
  std::thread thread_;

  mutable std::mutex state_mu_;
  std::condition_variable wake_;
  bool stopping_ = false;
  bool connected_ = false;
  detail::Fd fd_;
  ConnectionHealth health_;
  std::vector<std::pair<std::string, MessageHandler>> subscriptions_;
  std::vector<std::function<void()>> listeners_;

  std::mutex send_mu_;
  std::atomic<std::uint16_t> packet_id_{1};
  std::atomic<std::chrono::steady_clock::time_point> last_sent_{};
  std::chrono::steady_clock::time_point last_received_{};
  std::string buffer_;
};

}  // namespace emedge::telemetry
