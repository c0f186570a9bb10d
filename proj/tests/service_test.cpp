#include <gtest/gtest.h>

#include <atomic>
#include <sys/socket.h>
#include <thread>

#include "emedge/telemetry/pubsub.hpp"
#include "service_support.hpp"

namespace emedge::service {
namespace {

using emedge::testing::count_lines;
using emedge::testing::service_config;
using emedge::testing::slurp;
using emedge::testing::TempDir;
using emedge::testing::write_sim;
using json = nlohmann::json;

constexpr Timestamp kMondayEvening = 1700438400 + 17 * 3600;

json minimal_config() {
  return {{"appliances", json::array({{{"catalog", "Air conditioner"}, {"id", "ac1"}, {"zone", "living"}}})},
          {"http", {{"port", 0}}}};
}

void write_json(const std::filesystem::path& p, const json& j) {
  std::ofstream out(p);
  out << j.dump(2);
}

// ---- configuration ----------------------------------------------------------

TEST(Config, DefaultsAndRelativePaths) {
  TempDir dir;
  write_json(dir / "svc.json", minimal_config());
  const auto c = load_config(dir / "svc.json", {});
  EXPECT_EQ(c.site, "home");
  EXPECT_EQ(c.store_path, dir.path() / "emedge-data");
  EXPECT_EQ(c.appliances.size(), 1u);
  EXPECT_DOUBLE_EQ(c.recommender.tariff_per_kwh, 0.12);
  EXPECT_DOUBLE_EQ(c.recommender.co2_kg_per_kwh, 0.45);
  EXPECT_EQ(c.recommender.cooldown_s, 1800);
  EXPECT_EQ(c.source.reorder_window_s, 30);
}

TEST(Config, ShippedSampleLoads) {
  const std::filesystem::path dir = EMEDGE_CONFIG_DIR;
  const auto c = load_config(dir / "service.json", {{"recommender__habit_pacing_s", "3600"}});
  EXPECT_EQ(c.appliances.size(), 6u);
  EXPECT_EQ(c.source.broker, "mqtt://127.0.0.1:1883");
  EXPECT_EQ(c.recommender.habit_pacing_s, 3600);
  EXPECT_EQ(c.recommender.suppress_for_s, kSecondsPerDay);
}

TEST(Config, EnvironmentOverrides) {
  TempDir dir;
  write_json(dir / "svc.json", minimal_config());
  const auto c = load_config(dir / "svc.json", {{"http__port", "9123"},
                                                {"tariff", "0.2"},
                                                {"recommender__cooldown_s", "60"},
                                                {"store__path", "/tmp/elsewhere"},
                                                {"build_type", "ignored"}});
  EXPECT_EQ(c.http.port, 9123);
  EXPECT_DOUBLE_EQ(c.recommender.tariff_per_kwh, 0.2);
  EXPECT_EQ(c.recommender.cooldown_s, 60);
  EXPECT_EQ(c.store_path, "/tmp/elsewhere");
}

TEST(Config, EnvironmentVariablesAreRead) {
  ::setenv("EMEDGE_CURRENCY", "EUR", 1);
  const auto o = environment_overrides();
  ::unsetenv("EMEDGE_CURRENCY");
  ASSERT_TRUE(o.count("currency"));
  EXPECT_EQ(o.at("currency"), "EUR");
}

TEST(Config, MissingSpecFileNamesThePath) {
  TempDir dir;
  auto j = minimal_config();
  j.erase("appliances");
  j["specs_file"] = "nowhere/appliances.json";
  write_json(dir / "svc.json", j);
  try {
    load_config(dir / "svc.json", {});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find((dir / "nowhere/appliances.json").string()), std::string::npos) << e.what();
  }
}

TEST(Config, Rejections) {
  EXPECT_THROW(config_from_json({{"http", {{"port", 1}}}}), ConfigError);  // no appliances
  auto j = minimal_config();
  j["htpp"] = json::object();
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = minimal_config();
  j["http"]["port"] = 70000;
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = minimal_config();
  j["tariff"] = -1;
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = minimal_config();
  j["source"] = {{"replay", "/does/not/exist.jsonl"}};
  EXPECT_THROW(config_from_json(j), ConfigError);
  j = minimal_config();
  j["http"]["port"] = "eighty";
  EXPECT_THROW(config_from_json(j), ConfigError);
  EXPECT_THROW(load_config("/does/not/exist.json", {}), ConfigError);
}

// ---- channel and event bus -----------------------------------------------

TEST(Channel, FifoAndClose) {
  Channel<int> ch(2);
  std::jthread producer([&] {
    for (int i = 0; i < 100; ++i) ch.push(i);
    ch.close();
  });
  int expect = 0;
  while (auto v = ch.pop()) EXPECT_EQ(*v, expect++);
  EXPECT_EQ(expect, 100);
  EXPECT_FALSE(ch.push(1));
}

TEST(EventBus, SequenceAndResume) {
  EventBus bus(3);
  for (int i = 0; i < 5; ++i) bus.publish(EventKind::sample, {{"i", i}});
  EXPECT_EQ(bus.last_seq(), 5u);
  auto e = bus.after(3, 10, std::chrono::milliseconds(0));
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].seq, 4u);
  EXPECT_EQ(e[1].payload["i"], 4);
  // Older than the history: resume from the oldest kept event.
  e = bus.after(0, 10, std::chrono::milliseconds(0));
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[0].seq, 3u);
  EXPECT_TRUE(bus.after(5, 10, std::chrono::milliseconds(10)).empty());
  EXPECT_EQ(sse_frame(e[0]), "id: 3\nevent: sample\ndata: {\"i\":2}\n\n");
}

TEST(LatencyRecorder, NearestRank) {
  LatencyRecorder r;
  for (int i = 1; i <= 100; ++i) r.add(i);
  EXPECT_EQ(*r.percentile(0.99), 99.0);
  EXPECT_EQ(*r.percentile(0.5), 50.0);
  EXPECT_EQ(*r.percentile(1.0), 100.0);
}

// ---- end to end -------------------------------------------------------------

class ReplayFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    auto cfg = sim::default_household(3, kSecondsPerDay);
    cfg.start = kMondayEvening;
    trace_ = write_sim(dir_ / "trace", cfg);
  }

  TempDir dir_;
  sim::SimTrace trace_;
};

TEST_F(ReplayFixture, ReplayPopulatesStoreLabelsAndApi) {
  const auto events = count_lines(dir_ / "trace" / "events.jsonl");
  std::atomic<std::uint64_t> sample_events{0}, power_events{0};
  Service svc(service_config(dir_ / "trace", dir_ / "store"));
  svc.events().add_listener([&](const ApiEvent& e) {
    if (e.kind != EventKind::sample) return;
    ++sample_events;
    if (e.payload["kind"] == "power") ++power_events;
  });
  svc.start();
  ASSERT_TRUE(svc.wait_replay(std::chrono::seconds(120)));

  EXPECT_EQ(svc.ingestor().counters().delivered, events);
  EXPECT_EQ(sample_events.load(), events);
  EXPECT_EQ(power_events.load(), trace_.timestamps.size() * trace_.appliances.size());

  // Labels computed live equal the generator's labels.
  for (const auto& a : trace_.appliances) {
    const auto pts =
        svc.store().raw_range(store::label_stream_id("home", a.spec.zone_id, a.spec.id), 0, trace_.timestamps.back() + 1);
    ASSERT_EQ(pts.size(), a.labels.size()) << a.spec.id;
    for (std::size_t i = 0; i < pts.size(); ++i)
      ASSERT_EQ(static_cast<int>(pts[i].value), to_int(a.labels[i])) << a.spec.id << " at " << i;
  }

  httplib::Client cli("127.0.0.1", svc.port());
  auto res = cli.Get("/api/consumption?appliance=ac1");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  const auto body = json::parse(res->body);
  const auto stream = telemetry::stream_id_for_power("home", "living", "ac1");
  EXPECT_EQ(body["stream"], stream);
  const auto direct = svc.store().aggregate_range(stream, 0, svc.now() + 1);
  ASSERT_EQ(body["buckets"].size(), direct.size());
  ASSERT_FALSE(direct.empty());
  EXPECT_EQ(body["buckets"][0], store::to_json(direct[0]));

  res = cli.Get("/api/environment?zone=outdoor");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_FALSE(json::parse(res->body)["buckets"].empty());

  res = cli.Get("/api/appliances");
  ASSERT_TRUE(res);
  const auto apps = json::parse(res->body);
  ASSERT_EQ(apps.size(), trace_.appliances.size());
  for (const auto& a : apps) EXPECT_EQ(a["latest"]["ts"], trace_.timestamps.back());

  res = cli.Get("/api/health");
  ASSERT_TRUE(res);
  const auto health = json::parse(res->body);
  EXPECT_EQ(health["status"], "ok");
  EXPECT_EQ(health["ingest"]["malformed"], 0);
  EXPECT_EQ(health["replay"]["done"], true);

  // The evening in this household produces recommendations.
  res = cli.Get("/api/recommendations");
  ASSERT_TRUE(res);
  EXPECT_FALSE(json::parse(res->body).empty());
  EXPECT_GT(svc.pipeline().counters().recommendations.load(), 0u);
}

TEST_F(ReplayFixture, FeedbackStatusCodes) {
  Service svc(service_config(dir_ / "trace", dir_ / "store"));
  svc.start();
  ASSERT_TRUE(svc.wait_replay(std::chrono::seconds(120)));
  const auto pending = svc.recommender().list(recommender::Status::pending);
  ASSERT_FALSE(pending.empty());
  const auto id = pending.front().id;

  httplib::Client cli("127.0.0.1", svc.port());
  auto post = [&](const std::string& path, const std::string& body) {
    auto r = cli.Post(path, body, "application/json");
    return r ? r->status : -1;
  };
  EXPECT_EQ(post("/api/recommendations/rec-999999/feedback", R"({"verdict":"accept"})"), 404);
  EXPECT_EQ(post("/api/recommendations/" + id + "/feedback", R"({"verdict":"maybe"})"), 422);
  EXPECT_EQ(post("/api/recommendations/" + id + "/feedback", "not json"), 422);
  EXPECT_EQ(post("/api/recommendations/" + id + "/feedback", R"({"verdict":"accept"})"), 204);
  EXPECT_EQ(post("/api/recommendations/" + id + "/feedback", R"({"verdict":"accept"})"), 409);
  EXPECT_EQ(svc.recommender().get(id)->status, recommender::Status::accepted);

  auto res = cli.Get("/api/recommendations?status=accepted");
  ASSERT_TRUE(res);
  EXPECT_EQ(json::parse(res->body).size(), 1u);
  res = cli.Get("/api/recommendations?status=bogus");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  res = cli.Get("/api/consumption?stream=home.living.ac1.power&from=abc");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 422);
  res = cli.Get("/api/consumption?appliance=nope");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 404);

  // No broker configured: commands cannot be relayed.
  EXPECT_EQ(post("/api/appliances/ac1/command", R"({"state":"off"})"), 503);
  EXPECT_EQ(post("/api/appliances/ac1/command", R"({"state":"dim"})"), 422);
  EXPECT_EQ(post("/api/appliances/nope/command", R"({"state":"off"})"), 404);
}

TEST_F(ReplayFixture, LiveStreamResumesFromLastEventId) {
  auto cfg = service_config(dir_ / "trace", dir_ / "store");
  Service svc(cfg);
  svc.start();
  ASSERT_TRUE(svc.wait_replay(std::chrono::seconds(120)));
  const auto last = svc.events().last_seq();
  ASSERT_GT(last, 10u);

  httplib::Client cli("127.0.0.1", svc.port());
  cli.set_read_timeout(std::chrono::seconds(5));
  std::string received;
  httplib::Headers headers{{"Last-Event-ID", std::to_string(last - 5)}};
  auto res = cli.Get("/api/events", headers, [&](const char* data, std::size_t n) {
    received.append(data, n);
    return received.find("id: " + std::to_string(last) + "\n") == std::string::npos;
  });
  std::vector<std::uint64_t> ids;
  std::size_t pos = 0;
  while ((pos = received.find("id: ", pos)) != std::string::npos) {
    ids.push_back(std::stoull(received.substr(pos + 4)));
    pos += 4;
  }
  ASSERT_EQ(ids.size(), 5u) << received;
  for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(ids[i], last - 4 + i);
}

TEST_F(ReplayFixture, CleanShutdownLeavesReopenableStore) {
  std::uint64_t raw = 0;
  const auto stream = telemetry::stream_id_for_power("home", "living", "ac1");
  {
    Service svc(service_config(dir_ / "trace", dir_ / "store"));
    svc.start();
    ASSERT_TRUE(svc.wait_replay(std::chrono::seconds(120)));
    raw = svc.store().raw_count(stream);
    svc.stop();
  }
  store::Store reopened(dir_ / "store");
  EXPECT_EQ(reopened.raw_count(stream), raw);
  EXPECT_EQ(raw, trace_.timestamps.size());
  EXPECT_FALSE(reopened.kb_list(store::KnowledgeKind::recommendation).empty());
}

TEST(Service, PortBusyIsAStartupError) {
  TempDir dir;
  auto j = minimal_config();
  j["store"] = {{"path", (dir / "a").string()}};
  Service first(config_from_json(j));
  first.start();
  j["http"]["port"] = first.port();
  j["store"]["path"] = (dir / "b").string();
  Service second(config_from_json(j));
  EXPECT_THROW(second.start(), Error);
}

TEST(Service, BrokerIngestAndCommands) {
  TempDir dir;
  auto j = minimal_config();
  j["store"] = {{"path", (dir / "s").string()}};
  j["source"] = {{"reorder_window_s", 0}};
  j["appliances"].push_back({{"id", "charger1"},
                             {"zone", "bedroom"},
                             {"category", "charger"},
                             {"dacr_max_w", 20},
                             {"dspc_w", 0.5},
                             {"dot_s", 14400},
                             {"requires_presence", true}});
  telemetry::InProcessBroker broker;
  auto client = broker.client();
  Service svc(config_from_json(j), client.get());
  svc.start();

  const Timestamp t0 = 1700481600;
  auto pub = [&](const std::string& topic, const json& payload) { client->publish(topic, payload.dump()); };
  pub("em3/home/bedroom/occupancy", {{"ts", t0}, {"occ", 0}});
  pub("em3/home/bedroom/env", {{"ts", t0}, {"t", 24.0}, {"h", 50}, {"lx", 10}});
  pub("em3/home/outdoor/env", {{"ts", t0}, {"t", 30.0}, {"h", 50}, {"lx", 10}});
  pub("em3/home/bedroom/charger1/power", {{"ts", t0}, {"w", 0.4}});
  pub("em3/home/bedroom/charger1/power", {{"ts", t0 + 30}, {"w", 10.0}});
  pub("em3/home/bedroom/charger1/power", {{"ts", t0 + 31}, {"w", -3}});  // malformed
  ASSERT_TRUE(svc.pipeline().wait_idle(5, std::chrono::seconds(10)));
  EXPECT_EQ(svc.ingestor().counters().malformed, 1u);

  const auto recs = svc.recommender().list(recommender::Status::pending);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].trigger, recommender::TriggerId::on_while_away);
  const auto out = svc.feedback(recs[0].id, recommender::Verdict::accept);
  EXPECT_EQ(out["command"], "sent");
  bool saw_off = false;
  for (const auto& m : broker.log())
    if (m.topic == "em3/home/bedroom/charger1/set" && m.payload == "OFF") saw_off = true;
  EXPECT_TRUE(saw_off);

  httplib::Client cli("127.0.0.1", svc.port());
  auto res = cli.Post("/api/appliances/ac1/command", R"({"state":"ON"})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 202);
  EXPECT_EQ(broker.log().back().topic, "em3/home/living/ac1/set");
  EXPECT_EQ(broker.log().back().payload, "ON");
}

TEST(Service, ReplayLossAccounting) {
  TempDir dir;
  auto cfg = sim::default_household(5, 6 * kSecondsPerHour);
  auto trace = write_sim(dir / "trace", cfg);
  {
    std::ofstream out(dir / "trace" / "events.jsonl", std::ios::app);
    out << "garbage\n"
        << R"({"topic":"em3/home/living/ac1/power","ts":1,"payload":{"ts":1,"w":"x"}})" << "\n";
  }
  const auto lines = count_lines(dir / "trace" / "events.jsonl");
  Service svc(service_config(dir / "trace", dir / "store"));
  svc.start();
  ASSERT_TRUE(svc.wait_replay(std::chrono::seconds(60)));
  const auto c = svc.ingestor().counters();
  EXPECT_EQ(c.malformed, 2u);
  EXPECT_EQ(c.delivered, lines - c.malformed);
  EXPECT_EQ(svc.pipeline().counters().processed.load(), c.delivered);
}

}  // namespace
}  // namespace emedge::service
