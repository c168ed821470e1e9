#include <gtest/gtest.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "teleop/protocol.hpp"
#include "teleop/serve.hpp"
#include "teleop/trajectory.hpp"

using namespace teleop;
using namespace teleop::protocol;
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

serve::ServerOptions options(const std::string& log_path = "") {
  serve::ServerOptions o;
  o.port = 0;
  o.session.follower.seed = 1;
  o.session.leader_to_follower = *netsim::NetworkPreset::named("wifi", 2);
  o.session.follower_to_leader = *netsim::NetworkPreset::named("wifi", 3);
  o.config_hash = "0123456789abcdef";
  o.log_path = log_path;
  return o;
}

struct Client {
  explicit Client(std::uint16_t port) : ws(io) {
    tcp::resolver resolver(io);
    asio::connect(ws.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws.handshake("127.0.0.1", "/");
  }

  std::string read_text() {
    beast::flat_buffer buf;
    ws.read(buf);
    EXPECT_TRUE(ws.got_text());
    return beast::buffers_to_string(buf.data());
  }

  WireMessage read_frame() {
    beast::flat_buffer buf;
    ws.read(buf);
    EXPECT_TRUE(ws.got_binary());
    const auto data = static_cast<const std::uint8_t*>(buf.data().data());
    return decode_or_throw(std::span(data, buf.size()));
  }

  void send(const WireMessage& m) {
    const Bytes b = encode(m);
    ws.binary(true);
    ws.write(asio::buffer(b));
  }

  // Reads until a Control frame whose text starts with `prefix`.
  std::string read_control(const std::string& prefix, int limit = 2000) {
    for (int i = 0; i < limit; ++i) {
      const WireMessage m = read_frame();
      if (const auto* c = std::get_if<ControlPayload>(&m.payload)) {
        if (c->text.rfind(prefix, 0) == 0) return c->text;
      }
    }
    return "";
  }

  asio::io_context io;
  websocket::stream<tcp::socket> ws;
};

WireMessage control(const std::string& text) {
  WireMessage m;
  m.channel = ChannelId::Control;
  m.payload = ControlPayload{text};
  return m;
}

}  // namespace

TEST(Serve, HelloStartAndState) {
  serve::Server server(options());
  server.start();
  ASSERT_NE(server.port(), 0);
  Client c(server.port());
  const auto hello = nlohmann::json::parse(c.read_text());
  EXPECT_EQ(hello.at("type"), "hello");
  EXPECT_EQ(hello.at("version"), 1);

  const auto idle = ControlCommand::parse(c.read_control("STATE"));
  ASSERT_TRUE(idle);
  EXPECT_EQ(idle->args.at("phase"), "Idle");

  c.send(control("START"));
  EXPECT_EQ(c.read_control("ACK"), "ACK START");
  std::optional<ControlCommand> state;
  for (int i = 0; i < 50; ++i) {
    state = ControlCommand::parse(c.read_control("STATE"));
    if (state && state->args.at("phase") != "Idle") break;
  }
  ASSERT_TRUE(state);
  EXPECT_EQ(state->args.at("phase"), "AwaitingCalibration");
  EXPECT_EQ(state->args.at("step"), "1");

  c.send(control("FREEZE"));
  EXPECT_EQ(c.read_control("NAK"), "NAK FREEZE");

  WireMessage pose;
  pose.channel = ChannelId::ExpertPose;
  pose.payload = PosePayload{Vec3(0, 0.4, 0), Quat::Identity()};
  c.send(pose);
  EXPECT_FALSE(c.read_control("STATE").empty());
  server.stop();
}

TEST(Serve, MalformedFrameClosesWithBadFrame) {
  serve::Server server(options());
  server.start();
  Client c(server.port());
  c.read_text();
  const std::uint8_t junk[] = {0xDE, 0xAD, 0xBE, 0xEF};
  c.ws.binary(true);
  c.ws.write(asio::buffer(junk));
  beast::error_code ec;
  for (int i = 0; i < 5000 && !ec; ++i) {
    beast::flat_buffer buf;
    c.ws.read(buf, ec);
  }
  EXPECT_EQ(ec, websocket::error::closed);
  EXPECT_EQ(c.ws.reason().code, serve::kCloseBadFrame);
  EXPECT_EQ(std::string(c.ws.reason().reason.c_str()), "BadFrame");

  const auto before = server.status().ticks;
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  EXPECT_GT(server.status().ticks, before);
  EXPECT_EQ(server.status().bad_frames, 1u);

  // A new client is accepted after the close.
  Client again(server.port());
  EXPECT_NE(again.read_text().find("hello"), std::string::npos);
  server.stop();
}

TEST(Serve, SecondClientIsBusy) {
  serve::Server server(options());
  server.start();
  Client first(server.port());
  first.read_text();
  Client second(server.port());
  beast::error_code ec;
  beast::flat_buffer buf;
  second.ws.read(buf, ec);
  EXPECT_EQ(ec, websocket::error::closed);
  EXPECT_EQ(second.ws.reason().code, serve::kCloseBusy);
  EXPECT_FALSE(first.read_control("STATE").empty());
  server.stop();
}

TEST(Serve, PortInUse) {
  serve::Server a(options());
  a.start();
  auto o = options();
  o.port = a.port();
  serve::Server b(o);
  EXPECT_THROW(b.start(), serve::PortInUse);
  a.stop();
}

TEST(Serve, WritesReadableLog) {
  const auto path = (std::filesystem::temp_directory_path() / "teleop_serve_test.log").string();
  std::filesystem::remove(path);
  {
    serve::Server server(options(path));
    server.start();
    Client c(server.port());
    c.read_text();
    c.send(control("START"));
    EXPECT_EQ(c.read_control("ACK"), "ACK START");
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
    server.stop();
    server.stop();
  }
  std::ifstream in(path);
  ASSERT_TRUE(in);
  const TrajectoryLog log = read_log(in);
  EXPECT_EQ(log.header.config_hash, "0123456789abcdef");
  EXPECT_EQ(log.header.fields.at("leader"), "live");
  EXPECT_FALSE(log.records.empty());
  EXPECT_EQ(log.records.front().phase, Phase::AwaitingCalibration);
  std::filesystem::remove(path);
}
