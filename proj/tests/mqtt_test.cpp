#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "emedge/telemetry/ingest.hpp"
#include "emedge/telemetry/mqtt_client.hpp"
#include "mqtt_broker_stub.hpp"

namespace emedge::telemetry {
namespace {

using namespace std::chrono_literals;

template <typename Pred>
bool eventually(Pred pred, std::chrono::milliseconds timeout = 5s) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(5ms);
  }
  return pred();
}

TEST(MqttCodec, RemainingLengthRoundTrip) {
  std::mt19937 rng(1);
  std::uniform_int_distribution<std::size_t> len(0, 300000);
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = i < 5 ? std::vector<std::size_t>{0, 127, 128, 16383, 16384}[static_cast<std::size_t>(i)] : len(rng);
    std::string packet(1, '\x30');
    packet += mqtt::encode_remaining_length(n);
    packet += std::string(n, 'x');
    mqtt::Packet p;
    ASSERT_EQ(mqtt::try_decode(packet, p), packet.size());
    ASSERT_EQ(p.body.size(), n);
    // Incomplete input yields no packet.
    ASSERT_EQ(mqtt::try_decode(std::string_view(packet).substr(0, packet.size() - 1), p), 0u);
  }
}

TEST(MqttCodec, PacketsDecodeToWhatWasEncoded) {
  mqtt::Packet p;
  mqtt::Publish m{"em3/s/z/a/power", R"({"ts":1,"w":2})", 1, 42, false};
  const auto bytes = mqtt::publish_packet(m);
  ASSERT_EQ(mqtt::try_decode(bytes, p), bytes.size());
  const auto back = mqtt::decode_publish(p);
  EXPECT_EQ(back.topic, m.topic);
  EXPECT_EQ(back.payload, m.payload);
  EXPECT_EQ(back.qos, 1);
  EXPECT_EQ(back.packet_id, 42);

  mqtt::ConnectOptions o{"client-1", 15, "user", "secret", true};
  ASSERT_GT(mqtt::try_decode(mqtt::connect_packet(o), p), 0u);
  const auto co = mqtt::decode_connect(p);
  EXPECT_EQ(co.client_id, "client-1");
  EXPECT_EQ(co.keepalive_s, 15);
  EXPECT_EQ(co.username, "user");
  EXPECT_EQ(co.password, "secret");

  mqtt::Subscribe s{7, {{"em3/#", 1}, {"x/+", 0}}};
  ASSERT_GT(mqtt::try_decode(mqtt::subscribe_packet(s), p), 0u);
  const auto so = mqtt::decode_subscribe(p);
  EXPECT_EQ(so.packet_id, 7);
  ASSERT_EQ(so.filters.size(), 2u);
  EXPECT_EQ(so.filters[1].first, "x/+");
}

TEST(MqttCodec, TruncatedBodiesThrow) {
  mqtt::Packet p;
  p.header = 0x30;
  p.body = std::string("\x00\x09" "em3", 5);
  EXPECT_THROW(mqtt::decode_publish(p), mqtt::ProtocolError);
}

TEST(Endpoint, Parsing) {
  auto ep = parse_endpoint("mqtt://broker.local:1884");
  EXPECT_EQ(ep.host, "broker.local");
  EXPECT_EQ(ep.port, 1884);
  EXPECT_EQ(parse_endpoint("localhost").port, 1883);
  EXPECT_THROW(parse_endpoint("host:99999"), ConfigError);
  EXPECT_THROW(parse_endpoint(""), ConfigError);
}

TEST(MqttClient, SubscribesAndIngestsOverTcp) {
  testing::MqttBrokerStub broker;
  MqttClient client({"127.0.0.1", broker.port(), "ingest-test"}, {10ms, 100ms});
  std::vector<TelemetrySample> got;
  std::mutex mu;
  Ingestor ing([&](TelemetrySample s) {
    std::lock_guard lock(mu);
    got.push_back(std::move(s));
  });
  subscribe(client, "em3/#", ing);
  client.start();
  ASSERT_TRUE(client.wait_connected(5s));
  ASSERT_TRUE(eventually([&] { return broker.subscriptions() == 1; }));

  broker.inject("em3/qu/lab1/ac1/power", R"({"ts":1700000000,"w":912.5})");
  broker.inject("em3/qu/lab1/ac1/power", R"({"ts":1700000000,"w":-5})");
  broker.inject("em3/qu/lab1/occupancy", R"({"ts":1700000001,"occ":0})");
  ASSERT_TRUE(eventually([&] { return ing.counters().received == 3; }));
  ing.finish();
  std::lock_guard lock(mu);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(std::get<PowerReading>(got[0].reading).watts, 912.5);
  EXPECT_EQ(ing.counters().malformed, 1u);
}

TEST(MqttClient, CommandsReachBrokerInOrder) {
  testing::MqttBrokerStub broker;
  MqttClient client({"127.0.0.1", broker.port(), "cmd-test"}, {10ms, 100ms});
  CommandPublisher pub(client);
  client.start();
  ASSERT_TRUE(client.wait_connected(5s));
  const TopicAddress addr{"qu", "lab1", "ac1", TopicChannel::set};
  EXPECT_EQ(pub.publish_command(addr, Command::on), CommandAck::sent);
  EXPECT_EQ(pub.publish_command(addr, Command::off), CommandAck::sent);
  ASSERT_TRUE(eventually([&] { return broker.received().size() == 2; }));
  const auto r = broker.received();
  EXPECT_EQ(r[0].topic, "em3/qu/lab1/ac1/set");
  EXPECT_EQ(r[0].payload, "ON");
  EXPECT_EQ(r[1].payload, "OFF");
  client.stop();
}

TEST(MqttClient, ReconnectsAndResubscribesAfterOutage) {
  testing::MqttBrokerStub broker;
  MqttClient client({"127.0.0.1", broker.port(), "reconnect-test"}, {10ms, 80ms});
  std::atomic<int> messages{0};
  client.subscribe("em3/#", [&](std::string_view, std::string_view) { ++messages; });
  CommandPublisher pub(client);
  client.start();
  ASSERT_TRUE(client.wait_connected(5s));

  broker.stop();
  ASSERT_TRUE(eventually([&] { return !client.connected(); }));
  // Queued while the broker is away, delivered after reconnect.
  const TopicAddress addr{"qu", "lab1", "tv1", TopicChannel::set};
  EXPECT_EQ(pub.publish_command(addr, Command::off), CommandAck::queued);
  ASSERT_TRUE(eventually([&] { return client.health().failures >= 1; }));

  broker.restart();
  ASSERT_TRUE(eventually([&] { return client.connected() && broker.subscriptions() == 1; }));
  ASSERT_TRUE(eventually([&] { return broker.received().size() == 1; }));
  EXPECT_EQ(broker.received()[0].payload, "OFF");
  broker.inject("em3/qu/lab1/env", R"({"ts":1,"t":20,"h":40,"lx":10})");
  ASSERT_TRUE(eventually([&] { return messages.load() == 1; }));
  client.stop();
}

TEST(MqttClient, UnreachableBrokerReportsBackoff) {
  std::uint16_t port = 0;
  {
    testing::MqttBrokerStub probe;
    port = probe.port();
  }
  MqttClient client({"127.0.0.1", port, "down"}, {20ms, 40ms});
  client.start();
  ASSERT_TRUE(eventually([&] { return client.health().failures >= 3; }));
  const auto h = client.health();
  EXPECT_FALSE(h.connected);
  EXPECT_FALSE(h.last_error.empty());
  EXPECT_EQ(h.next_retry_ms, 40);
  EXPECT_THROW(client.publish("em3/x/y/z/set", "ON"), Error);
  client.stop();
}

}  // namespace
}  // namespace emedge::telemetry
