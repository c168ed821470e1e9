#pragma once

// Live console bridge. The engine thread ticks a live-leader Session in real
// time; the I/O thread owns one WebSocket client. Binary messages carry wire
// frames in both directions. The only text message is the hello sent on
// connect.
//
// Per tick the client receives a FollowerForcePose frame and a Control frame
//   STATE hfx=<N> hfy=<N> hfz=<N> phase=<name> step=<0-4> t_us=<u64>
// Captured landmarks and the fitted ellipsoid arrive on the Calibration
// channel; a reconnecting client gets them again.
//
// Client -> server: ExpertPose frames (only the latest per tick is used) and
// Control commands (START, STOP, STEP, FREEZE, UNFREEZE, GAINS ...), each
// answered with "ACK <verb>" or "NAK <verb>". Anything else closes the
// connection with code 4001 "BadFrame"; the engine keeps running.

#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>

#include "teleop/session.hpp"

namespace teleop::serve {

inline constexpr std::uint16_t kCloseBadFrame = 4001;
inline constexpr std::uint16_t kCloseBusy = 4002;
inline constexpr std::size_t kOutboundCapacity = 256;

class PortInUse : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ServerOptions {
  std::string address = "127.0.0.1";
  std::uint16_t port = 8765;  // 0 picks a free port
  session::SessionConfig session;
  std::string config_hash;
  std::map<std::string, std::string> header_fields;
  std::string log_path;  // empty: no log
};

struct EngineStatus {
  Phase phase = Phase::Idle;
  int calibration_step = 0;
  std::uint64_t ticks = 0;
  std::uint64_t bad_frames = 0;
  std::uint64_t clients_served = 0;
  std::uint64_t dropped_outbound = 0;
};

class Server {
 public:
  explicit Server(ServerOptions options);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and starts the engine and I/O threads. Throws PortInUse.
  void start();

  /// Stops both threads and writes the log. Idempotent.
  void stop();

  /// Blocks until stop() is called from elsewhere or `max_seconds` elapse
  /// (0 waits indefinitely).
  void wait(double max_seconds = 0.0);

  std::uint16_t port() const;
  EngineStatus status() const;

 private:
  class Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace teleop::serve
