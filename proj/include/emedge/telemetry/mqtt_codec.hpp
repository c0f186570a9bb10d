#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "emedge/error.hpp"

// MQTT 3.1.1 control packets, just the subset a telemetry client needs.
namespace emedge::telemetry::mqtt {

enum class PacketType : std::uint8_t {
  connect = 1,
  connack = 2,
  publish = 3,
  puback = 4,
  subscribe = 8,
  suback = 9,
  unsubscribe = 10,
  unsuback = 11,
  pingreq = 12,
  pingresp = 13,
  disconnect = 14,
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

struct Packet {
  std::uint8_t header = 0;
  std::string body;

  PacketType type() const { return static_cast<PacketType>(header >> 4); }
  std::uint8_t flags() const { return header & 0x0F; }
};

inline std::string encode_remaining_length(std::size_t len) {
  if (len > 268435455) throw ProtocolError("packet too large");
  std::string out;
  do {
    auto byte = static_cast<std::uint8_t>(len % 128);
    len /= 128;
    if (len > 0) byte |= 0x80;
    out.push_back(static_cast<char>(byte));
  } while (len > 0);
  return out;
}

// Returns the number of bytes consumed, or 0 when `buf` holds no complete packet.
inline std::size_t try_decode(std::string_view buf, Packet& out) {
  if (buf.size() < 2) return 0;
  std::size_t len = 0;
  std::size_t multiplier = 1;
  std::size_t pos = 1;
  while (true) {
    if (pos >= buf.size()) return 0;
    const auto byte = static_cast<std::uint8_t>(buf[pos++]);
    len += (byte & 0x7F) * multiplier;
    if ((byte & 0x80) == 0) break;
    multiplier *= 128;
    if (pos > 4) throw ProtocolError("malformed remaining length");
  }
  if (buf.size() < pos + len) return 0;
  out.header = static_cast<std::uint8_t>(buf[0]);
  out.body.assign(buf.substr(pos, len));
  return pos + len;
}

namespace detail {

inline void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v >> 8));
  s.push_back(static_cast<char>(v & 0xFF));
}

inline void put_str(std::string& s, std::string_view v) {
  if (v.size() > 0xFFFF) throw ProtocolError("string field too long");
  put_u16(s, static_cast<std::uint16_t>(v.size()));
  s.append(v);
}

inline std::string frame(std::uint8_t header, const std::string& body) {
  std::string out(1, static_cast<char>(header));
  out += encode_remaining_length(body.size());
  out += body;
  return out;
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16() {
    need(2);
    const auto hi = static_cast<std::uint8_t>(data_[pos_]);
    const auto lo = static_cast<std::uint8_t>(data_[pos_ + 1]);
    pos_ += 2;
    return static_cast<std::uint16_t>((hi << 8) | lo);
  }
  std::string str() {
    const auto n = u16();
    need(n);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::string rest() {
    std::string s(data_.substr(pos_));
    pos_ = data_.size();
    return s;
  }
  bool done() const { return pos_ >= data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw ProtocolError("truncated packet");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

struct ConnectOptions {
  std::string client_id;
  std::uint16_t keepalive_s = 30;
  std::optional<std::string> username;
  std::optional<std::string> password;
  bool clean_session = true;
};

inline std::string connect_packet(const ConnectOptions& o) {
  std::string body;
  detail::put_str(body, "MQTT");
  body.push_back(4);  // protocol level 3.1.1
  std::uint8_t flags = o.clean_session ? 0x02 : 0x00;
  if (o.username) flags |= 0x80;
  if (o.password) flags |= 0x40;
  body.push_back(static_cast<char>(flags));
  detail::put_u16(body, o.keepalive_s);
  detail::put_str(body, o.client_id);
  if (o.username) detail::put_str(body, *o.username);
  if (o.password) detail::put_str(body, *o.password);
  return detail::frame(0x10, body);
}

inline ConnectOptions decode_connect(const Packet& p) {
  if (p.type() != PacketType::connect) throw ProtocolError("not a CONNECT packet");
  detail::Reader r(p.body);
  if (r.str() != "MQTT") throw ProtocolError("unsupported protocol name");
  if (r.u8() != 4) throw ProtocolError("unsupported protocol level");
  const auto flags = r.u8();
  ConnectOptions o;
  o.clean_session = (flags & 0x02) != 0;
  o.keepalive_s = r.u16();
  o.client_id = r.str();
  if (flags & 0x80) o.username = r.str();
  if (flags & 0x40) o.password = r.str();
  return o;
}

inline std::string connack_packet(std::uint8_t return_code) {
  return detail::frame(0x20, std::string{'\0', static_cast<char>(return_code)});
}

inline std::uint8_t decode_connack(const Packet& p) {
  if (p.type() != PacketType::connack || p.body.size() != 2) throw ProtocolError("malformed CONNACK");
  return static_cast<std::uint8_t>(p.body[1]);
}

struct Publish {
  std::string topic;
  std::string payload;
  std::uint8_t qos = 0;
  std::uint16_t packet_id = 0;
  bool retain = false;
};

inline std::string publish_packet(const Publish& m) {
  if (m.qos > 1) throw ProtocolError("QoS 2 not supported");
  std::string body;
  detail::put_str(body, m.topic);
  if (m.qos > 0) detail::put_u16(body, m.packet_id);
  body += m.payload;
  const auto header = static_cast<std::uint8_t>(0x30 | (m.qos << 1) | (m.retain ? 1 : 0));
  return detail::frame(header, body);
}

inline Publish decode_publish(const Packet& p) {
  if (p.type() != PacketType::publish) throw ProtocolError("not a PUBLISH packet");
  detail::Reader r(p.body);
  Publish m;
  m.qos = static_cast<std::uint8_t>((p.flags() >> 1) & 0x03);
  m.retain = (p.flags() & 0x01) != 0;
  if (m.qos > 1) throw ProtocolError("QoS 2 not supported");
  m.topic = r.str();
  if (m.qos > 0) m.packet_id = r.u16();
  m.payload = r.rest();
  return m;
}

inline std::string puback_packet(std::uint16_t id) {
  std::string body;
  detail::put_u16(body, id);
  return detail::frame(0x40, body);
}

inline std::uint16_t decode_packet_id(const Packet& p) {
  detail::Reader r(p.body);
  return r.u16();
}

struct Subscribe {
  std::uint16_t packet_id = 0;
  std::vector<std::pair<std::string, std::uint8_t>> filters;  // filter, requested QoS
};

inline std::string subscribe_packet(const Subscribe& s) {
  std::string body;
  detail::put_u16(body, s.packet_id);
  for (const auto& [filter, qos] : s.filters) {
    detail::put_str(body, filter);
    body.push_back(static_cast<char>(qos));
  }
  return detail::frame(0x82, body);
}

inline Subscribe decode_subscribe(const Packet& p) {
  if (p.type() != PacketType::subscribe) throw ProtocolError("not a SUBSCRIBE packet");
  detail::Reader r(p.body);
  Subscribe s;
  s.packet_id = r.u16();
  while (!r.done()) {
    auto filter = r.str();
    s.filters.emplace_back(std::move(filter), r.u8());
  }
  if (s.filters.empty()) throw ProtocolError("SUBSCRIBE without filters");
  return s;
}

inline std::string suback_packet(std::uint16_t id, const std::vector<std::uint8_t>& granted) {
  std::string body;
  detail::put_u16(body, id);
  for (auto g : granted) body.push_back(static_cast<char>(g));
  return detail::frame(0x90, body);
}

inline std::string pingreq_packet() { return std::string{static_cast<char>(0xC0), '\0'}; }
inline std::string pingresp_packet() { return std::string{static_cast<char>(0xD0), '\0'}; }
inline std::string disconnect_packet() { return std::string{static_cast<char>(0xE0), '\0'}; }

}  // namespace emedge::telemetry::mqtt
