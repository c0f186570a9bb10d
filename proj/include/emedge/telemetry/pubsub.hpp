#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emedge/error.hpp"
#include "emedge/telemetry/topic.hpp"

namespace emedge::telemetry {

using MessageHandler = std::function<void(std::string_view topic, std::string_view payload)>;

// Minimal publish/subscribe surface shared by the MQTT client and the
// in-process broker used for tests and single-process deployments.
class PubSubClient {
 public:
  virtual ~PubSubClient() = default;

  virtual bool connected() const = 0;
  // Throws Error when not connected.
  virtual void publish(std::string_view topic, std::string_view payload) = 0;
  virtual void subscribe(std::string filter, MessageHandler handler) = 0;
  // Invoked after every (re)connection.
  virtual void on_connected(std::function<void()> listener) = 0;
};

// Synchronous in-memory broker. Availability can be toggled to exercise
// offline paths; messages published while unavailable are refused.
class InProcessBroker {
 public:
  struct Message {
    std::string topic;
    std::string payload;
  };

  class Client final : public PubSubClient {
   public:
    explicit Client(InProcessBroker& broker) : broker_(broker) {}

    bool connected() const override { return broker_.available(); }

    void publish(std::string_view topic, std::string_view payload) override {
      if (!broker_.available()) throw Error("broker unavailable");
      broker_.deliver(std::string(topic), std::string(payload));
    }

    void subscribe(std::string filter, MessageHandler handler) override {
      broker_.add_subscription(std::move(filter), std::move(handler));
    }

    void on_connected(std::function<void()> listener) override { broker_.add_listener(std::move(listener)); }

   private:
    InProcessBroker& broker_;
  };

  std::unique_ptr<Client> client() { return std::make_unique<Client>(*this); }

  bool available() const {
    std::lock_guard lock(mu_);
    return available_;
  }

  void set_available(bool up) {
    std::vector<std::function<void()>> listeners;
    {
      std::lock_guard lock(mu_);
      const bool was = available_;
      available_ = up;
      if (up && !was) listeners = listeners_;
    }
    for (auto& l : listeners) l();
  }

  std::vector<Message> log() const {
    std::lock_guard lock(mu_);
    return log_;
  }

 private:
  void deliver(std::string topic, std::string payload) {
    std::vector<MessageHandler> targets;
    {
      std::lock_guard lock(mu_);
      log_.push_back({topic, payload});
      for (const auto& [filter, handler] : subs_)
        if (topic_matches(filter, topic)) targets.push_back(handler);
    }
    for (auto& h : targets) h(topic, payload);
  }

  void add_subscription(std::string filter, MessageHandler handler) {
    std::lock_guard lock(mu_);
    subs_.emplace_back(std::move(filter), std::move(handler));
  }

  void add_listener(std::function<void()> l) {
    std::lock_guard lock(mu_);
    listeners_.push_back(std::move(l));
  }

  mutable std::mutex mu_;
  bool available_ = true;
  std::vector<std::pair<std::string, MessageHandler>> subs_;
  std::vector<std::function<void()>> listeners_;
  std::vector<Message> log_;
};

}  // namespace emedge::telemetry
