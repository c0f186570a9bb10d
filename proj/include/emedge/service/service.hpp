#pragma once

// The running edge service: telemetry source, processing pipeline, HTTP API
// and live event stream.

#include <atomic>
#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "emedge/recommender.hpp"
#include "emedge/service/config.hpp"
#include "emedge/service/events.hpp"
#include "emedge/service/pipeline.hpp"
#include "emedge/store.hpp"
#include "emedge/telemetry/ingest.hpp"
#include "emedge/telemetry/mqtt_client.hpp"

namespace emedge::service {

using nlohmann::json;

namespace api {

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

inline Timestamp query_ts(const httplib::Request& req, const char* name, Timestamp fallback) {
  if (!req.has_param(name)) return fallback;
  const auto v = req.get_param_value(name);
  try {
    std::size_t used = 0;
    const auto ts = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return ts;
  } catch (const std::exception&) {
    throw ValidationError(std::string("query parameter '") + name + "' must be an integer timestamp");
  }
}

// Maps library errors onto HTTP statuses.
template <class F>
httplib::Server::Handler guarded(F f) {
  return [f = std::move(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, e.what());
    } catch (const ValidationError& e) {
      send_error(res, 422, e.what());
    } catch (const BackpressureError& e) {
      send_error(res, 503, e.what());
    } catch (const json::exception& e) {
      send_error(res, 422, std::string("invalid JSON body: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

inline json buckets_json(const std::vector<store::AggregateBucket>& buckets) {
  json arr = json::array();
  for (const auto& b : buckets) arr.push_back(store::to_json(b));
  return arr;
}

}  // namespace api

class Service {
 public:
  // `broker` overrides the configured broker endpoint (tests use an
  // in-process broker). It must outlive the service.
  explicit Service(ServiceConfig config, telemetry::PubSubClient* broker = nullptr)
      : config_(std::move(config)),
        store_(config_.store_path, config_.store),
        rec_(config_.recommender, &store_),
        bus_(config_.event_history),
        pipeline_(config_.user, config_.appliances, store_, rec_, bus_),
        ingestor_([this](telemetry::TelemetrySample s) { pipeline_.submit(std::move(s)); },
                  config_.source.reorder_window_s) {
    if (broker) {
      client_ = broker;
    } else if (config_.source.broker) {
      mqtt_ = std::make_unique<telemetry::MqttClient>(telemetry::parse_endpoint(*config_.source.broker));
      client_ = mqtt_.get();
    }
    if (client_) commands_ = std::make_unique<telemetry::CommandPublisher>(*client_);
    install_routes();
  }

  ~Service() { stop(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  // Binds the API and starts the pipeline and the telemetry source. Throws
  // Error when the port cannot be bound.
  void start() {
    if (started_) return;
    bound_port_ = config_.http.port == 0 ? http_.bind_to_any_port(config_.http.host)
                                         : (http_.bind_to_port(config_.http.host, config_.http.port) ? config_.http.port : -1);
    if (bound_port_ < 0)
      throw Error("cannot bind HTTP API to " + config_.http.host + ":" + std::to_string(config_.http.port) +
                  " (port busy or address unavailable)");
    started_ = true;
    pipeline_.start();
    http_thread_ = std::jthread([this] { http_.listen_after_bind(); });
    if (client_) telemetry::subscribe(*client_, config_.source.topic_filter, ingestor_);
    if (mqtt_) mqtt_->start();
    if (config_.source.replay) {
      replay_thread_ = std::jthread([this](std::stop_token stop) {
        telemetry::ReplayOptions opts;
        opts.events_per_second = config_.source.replay_rate;
        opts.realtime = config_.source.realtime;
        opts.speedup = config_.source.speedup;
        opts.topic_filter = config_.source.topic_filter;
        try {
          replay_lines_ = telemetry::replay_file(*config_.source.replay, ingestor_, opts, stop);
        } catch (const Error& e) {
          std::lock_guard lock(mu_);
          replay_error_ = e.what();
        }
        replay_done_ = true;
      });
    }
    maintenance_thread_ = std::jthread([this](std::stop_token stop) { maintenance(stop); });
    http_.wait_until_ready();
  }

  // Stops the source, drains in-flight samples through every stage and
  // closes the API. The store stays consistent and can be reopened.
  void stop() {
    if (!started_) return;
    started_ = false;
    if (replay_thread_.joinable()) {
      replay_thread_.request_stop();
      replay_thread_.join();
    }
    if (mqtt_) mqtt_->stop();
    ingestor_.finish();
    pipeline_.stop();
    if (maintenance_thread_.joinable()) {
      maintenance_thread_.request_stop();
      maintenance_thread_.join();
    }
    bus_.close();
    http_.stop();
    if (http_thread_.joinable()) http_thread_.join();
  }

  int port() const { return bound_port_; }
  bool replay_done() const { return replay_done_; }

  // Waits for the replay to finish and for the pipeline to process every
  // delivered sample.
  bool wait_replay(std::chrono::milliseconds timeout) {
    const auto deadline = steady::now() + timeout;
    while (!replay_done_) {
      if (steady::now() > deadline) return false;
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - steady::now());
    return pipeline_.wait_idle(ingestor_.counters().delivered, std::max(left, std::chrono::milliseconds(0)));
  }

  const ServiceConfig& config() const { return config_; }
  store::Store& store() { return store_; }
  recommender::Recommender& recommender() { return rec_; }
  EventBus& events() { return bus_; }
  Pipeline& pipeline() { return pipeline_; }
  telemetry::Ingestor& ingestor() { return ingestor_; }

  // Service time: the newest processed sample, or the wall clock before any
  // sample arrived.
  Timestamp now() const {
    const auto c = pipeline_.clock();
    if (c > 0) return c;
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
  }

  json health() const {
    const auto ingest = ingestor_.counters();
    const auto store_health = store_.health();
    json j{{"ingest", ingest.to_json()},
           {"store", {{"healthy", store_health.healthy}, {"last_error", store_health.last_error}, {"counters", store_.counters().to_json()}}},
           {"pipeline", pipeline_.health()},
           {"recommender", rec_.health()},
           {"events", {{"last_seq", bus_.last_seq()}}}};
    if (mqtt_) {
      const auto h = mqtt_->health();
      j["broker"] = {{"connected", h.connected},     {"connect_attempts", h.connect_attempts},
                     {"failures", h.failures},       {"messages_received", h.messages_received},
                     {"next_retry_ms", h.next_retry_ms}, {"last_error", h.last_error}};
    } else if (client_) {
      j["broker"] = {{"connected", client_->connected()}};
    }
    if (commands_) j["commands_queued"] = commands_->queued();
    if (config_.source.replay) {
      std::lock_guard lock(mu_);
      j["replay"] = {{"done", replay_done_.load()}, {"lines", replay_lines_.load()}, {"error", replay_error_}};
    }
    const bool broker_ok = !mqtt_ || mqtt_->health().connected;
    j["status"] = store_health.healthy && broker_ok ? "ok" : "degraded";
    return j;
  }

  // Applies a verdict and, for an accepted away-from-home recommendation,
  // switches the appliance off.
  json feedback(const std::string& id, recommender::Verdict verdict) {
    const auto outcome = rec_.record_feedback(id, verdict, now());
    json payload{{"id", id},
                 {"verdict", std::string(recommender::to_string(verdict))},
                 {"status", std::string(recommender::to_string(outcome.recommendation.status))},
                 {"trigger", std::string(recommender::to_string(outcome.recommendation.trigger))},
                 {"stats", recommender::to_json(outcome.stats)}};
    if (outcome.send_off) {
      try {
        payload["command"] = command(outcome.recommendation.appliance_id, telemetry::Command::off);
      } catch (const Error& e) {
        payload["command"] = std::string("failed: ") + e.what();
      }
    }
    bus_.publish(EventKind::feedback, payload);
    return payload;
  }

  // Relays ON/OFF to an appliance. Returns "sent" or "queued".
  std::string command(const std::string& appliance_id, telemetry::Command c) {
    const auto it = pipeline_.specs().find(appliance_id);
    if (it == pipeline_.specs().end()) throw NotFoundError("no appliance with id '" + appliance_id + "'");
    if (!commands_) throw BackpressureError("no broker configured for commands");
    telemetry::TopicAddress address{config_.site, it->second.zone_id, appliance_id, telemetry::TopicChannel::set};
    return commands_->publish_command(address, c) == telemetry::CommandAck::sent ? "sent" : "queued";
  }

 private:
  void maintenance(std::stop_token stop) {
    const auto interval = std::chrono::duration<double>(config_.maintenance_interval_s);
    std::mutex m;
    std::condition_variable_any cv;
    while (!stop.stop_requested()) {
      std::unique_lock lock(m);
      cv.wait_for(lock, stop, interval, [] { return false; });
      if (stop.stop_requested()) break;
      const Timestamp t = now();
      // Live sources advance event time from the wall clock so a quiet
      // stream does not hold samples in the reorder buffer forever.
      if (client_ && !config_.source.replay)
        ingestor_.advance_to(
            std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count());
      rec_.tick(t);
      try {
        store_.apply_retention(t);
      } catch (const Error&) {
        // recorded in the store's health
      }
      bus_.publish(EventKind::health, health());
    }
  }

  void install_routes() {
    using api::guarded;
    using api::send_json;
    http_.set_read_timeout(std::chrono::seconds(5));
    // httplib's default also sets SO_REUSEPORT, which would let a second
    // instance bind a port that is already serving.
    http_.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });

    http_.Get("/api/appliances", guarded([this](const httplib::Request&, httplib::Response& res) {
      const auto view = pipeline_.view();
      json arr = json::array();
      for (const auto& [id, spec] : pipeline_.specs()) {
        json j = emedge::to_json(spec);
        if (auto it = view.appliances.find(id); it != view.appliances.end()) {
          j["latest"] = {{"ts", it->second.ts},
                         {"watts", it->second.watts},
                         {"label", to_int(it->second.label)},
                         {"label_name", std::string(to_string(it->second.label))},
                         {"on", recommender::is_on(spec, it->second.watts)}};
        } else {
          j["latest"] = nullptr;
        }
        arr.push_back(j);
      }
      send_json(res, 200, arr);
    }));

    http_.Get("/api/consumption", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::string stream = req.get_param_value("stream");
      if (stream.empty() && req.has_param("appliance")) {
        const auto id = req.get_param_value("appliance");
        const auto it = pipeline_.specs().find(id);
        if (it == pipeline_.specs().end()) throw NotFoundError("no appliance with id '" + id + "'");
        stream = telemetry::stream_id_for_power(config_.site, it->second.zone_id, id);
      }
      if (stream.empty()) throw ValidationError("query needs 'stream' or 'appliance'");
      const auto from = api::query_ts(req, "from", 0);
      const auto to = api::query_ts(req, "to", now() + 1);
      send_json(res, 200, {{"stream", stream}, {"buckets", api::buckets_json(store_.aggregate_range(stream, from, to))}});
    }));

    http_.Get("/api/environment", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto zone = req.get_param_value("zone");
      if (!valid_id(zone)) throw ValidationError("query needs a valid 'zone'");
      const auto stream = telemetry::stream_id_for_env(config_.site, zone);
      const auto from = api::query_ts(req, "from", 0);
      const auto to = api::query_ts(req, "to", now() + 1);
      send_json(res, 200, {{"stream", stream}, {"buckets", api::buckets_json(store_.aggregate_range(stream, from, to))}});
    }));

    http_.Get("/api/recommendations", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<recommender::Status> status;
      if (req.has_param("status")) {
        status = recommender::parse_status(req.get_param_value("status"));
        if (!status) throw ValidationError("unknown status '" + req.get_param_value("status") + "'");
      }
      json arr = json::array();
      for (const auto& r : rec_.list(status)) arr.push_back(to_json(r, rec_.config().currency));
      send_json(res, 200, arr);
    }));

    http_.Post("/api/recommendations/:id/feedback", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      if (!body.is_object() || !body.contains("verdict") || !body["verdict"].is_string())
        throw ValidationError("body must be {\"verdict\": \"accept\"|\"reject\"|\"ignore\"}");
      const auto verdict = recommender::parse_verdict(body["verdict"].get<std::string>());
      if (!verdict) throw ValidationError("unknown verdict '" + body["verdict"].get<std::string>() + "'");
      feedback(req.path_params.at("id"), *verdict);
      res.status = 204;
    }));

    http_.Post("/api/appliances/:id/command", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      if (!body.is_object() || !body.contains("state") || !body["state"].is_string())
        throw ValidationError("body must be {\"state\": \"on\"|\"off\"}");
      auto state = body["state"].get<std::string>();
      for (auto& c : state) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      if (state != "on" && state != "off") throw ValidationError("state must be 'on' or 'off'");
      const auto result =
          command(req.path_params.at("id"), state == "on" ? telemetry::Command::on : telemetry::Command::off);
      send_json(res, 202, {{"appliance", req.path_params.at("id")}, {"state", state}, {"result", result}});
    }));

    http_.Get("/api/health", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, health());
    }));

    http_.Get("/api/events", [this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t last = bus_.last_seq();
      std::string resume = req.get_header_value("Last-Event-ID");
      if (resume.empty() && req.has_param("last_event_id")) resume = req.get_param_value("last_event_id");
      if (!resume.empty()) {
        try {
          last = std::stoull(resume);
        } catch (const std::exception&) {
          api::send_error(res, 422, "Last-Event-ID must be an integer");
          return;
        }
      }
      res.set_header("Cache-Control", "no-cache");
      auto cursor = std::make_shared<std::uint64_t>(last);
      res.set_chunked_content_provider("text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
        if (bus_.closed()) return false;
        const auto batch = bus_.after(*cursor, 512, std::chrono::milliseconds(500));
        std::string out;
        for (const auto& e : batch) {
          out += sse_frame(e);
          *cursor = e.seq;
        }
        if (out.empty()) out = ": keep-alive\n\n";
        return sink.write(out.data(), out.size());
      });
    });
  }

  ServiceConfig config_;
  store::Store store_;
  recommender::Recommender rec_;
  EventBus bus_;
  Pipeline pipeline_;
  telemetry::Ingestor ingestor_;
  std::unique_ptr<telemetry::MqttClient> mqtt_;
  telemetry::PubSubClient* client_ = nullptr;
  std::unique_ptr<telemetry::CommandPublisher> commands_;
  httplib::Server http_;
  int bound_port_ = -1;
  bool started_ = false;

  mutable std::mutex mu_;
  std::atomic<bool> replay_done_{false};
  std::atomic<std::uint64_t> replay_lines_{0};
  std::string replay_error_;

  std::jthread http_thread_, replay_thread_, maintenance_thread_;
};

}  // namespace emedge::service
