#pragma once

// Binary frame format shared by the in-process link, log replay and the
// console WebSocket. Integers and floats after the magic are little-endian.
//
//   offset  size  field
//   0       2     magic, the byte pair A1 1D
//   2       1     version 0x01
//   3       1     channel
//   4       4     seq (u32)
//   8       8     timestamp_us (u64, sim clock)
//   16      4     payload length (u32)
//   20      n     payload
//
// Payloads:
//   ExpertPose         px py pz qw qx qy qz                 7 x f64 (56 bytes)
//   FollowerForcePose  fx fy fz, then the pose payload      10 x f64 (80 bytes)
//   Control            u32 text length, UTF-8 text (<= 4096 bytes)
//   Calibration        u8 kind
//                        kind 1 (captured point): u8 step (1-4), 3 x f64 point
//                        kind 2 (fitted model):   3 x f64 center, f64 a, b, c

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "teleop/geometry.hpp"
#include "teleop/pose.hpp"

namespace teleop::protocol {

inline constexpr std::uint16_t kMagic = 0xA11D;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 20;
inline constexpr std::size_t kPosePayloadSize = 56;
inline constexpr std::size_t kForcePosePayloadSize = 80;
inline constexpr std::size_t kMaxControlText = 4096;
inline constexpr double kEncodeQuatTolerance = 1e-6;
inline constexpr double kDecodeQuatTolerance = 1e-3;

enum class ChannelId : std::uint8_t {
  ExpertPose = 0,
  FollowerForcePose = 1,
  Control = 2,
  Calibration = 3,
};
inline constexpr std::size_t kChannelCount = 4;

const char* to_string(ChannelId c);

struct PosePayload {
  Vec3 position = Vec3::Zero();
  Quat orientation = Quat::Identity();
};

struct ForcePosePayload {
  Vec3 force = Vec3::Zero();
  PosePayload pose;
};

struct ControlPayload {
  std::string text;
};

struct CalibrationPayload {
  enum class Kind : std::uint8_t { CapturedPoint = 1, FittedModel = 2 };
  Kind kind = Kind::CapturedPoint;
  std::uint8_t step = 1;  // CapturedPoint only
  Vec3 point = Vec3::Zero();  // CapturedPoint only
  geometry::EllipsoidModel model;  // FittedModel only
};

using Payload = std::variant<PosePayload, ForcePosePayload, ControlPayload, CalibrationPayload>;

struct WireMessage {
  ChannelId channel = ChannelId::ExpertPose;
  std::uint32_t seq = 0;
  std::uint64_t timestamp_us = 0;
  Payload payload;
};

bool operator==(const PosePayload& a, const PosePayload& b);
bool operator==(const ForcePosePayload& a, const ForcePosePayload& b);
bool operator==(const ControlPayload& a, const ControlPayload& b);
bool operator==(const CalibrationPayload& a, const CalibrationPayload& b);
bool operator==(const WireMessage& a, const WireMessage& b);

/// Channel a payload type travels on.
ChannelId channel_for(const Payload& p);

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Bytes = std::vector<std::uint8_t>;

/// Throws ProtocolError ("InvalidMessage: ...") when the message breaks a
/// payload invariant (channel/payload mismatch, non-unit quaternion,
/// non-finite value, oversized or invalid UTF-8 control text).
Bytes encode(const WireMessage& msg);

/// Size of the frame for a channel with a payload of the given length.
constexpr std::size_t frame_size(std::size_t payload_length) {
  return kHeaderSize + payload_length;
}

enum class DecodeErrc {
  Ok,
  BadMagic,
  BadVersion,
  UnknownChannel,
  TruncatedFrame,
  LengthMismatch,  // payload length wrong for the channel, or trailing bytes
  NonUnitQuaternion,
  NonFinite,
  BadUtf8,
  PayloadTooLarge,
  BadCalibration,
};

const char* to_string(DecodeErrc e);

struct DecodeResult {
  std::optional<WireMessage> message;
  DecodeErrc error = DecodeErrc::Ok;

  explicit operator bool() const { return message.has_value(); }
};

/// Total: every input yields either a message or a typed error.
DecodeResult decode(std::span<const std::uint8_t> bytes) noexcept;

/// decode() that throws ProtocolError on failure.
WireMessage decode_or_throw(std::span<const std::uint8_t> bytes);

bool valid_utf8(std::string_view s);

/// Stamps per-channel sequence numbers and enforces a monotone clock for one
/// sender. Not shared between senders.
class ChannelSender {
 public:
  WireMessage make(std::uint64_t timestamp_us, Payload payload);
  std::uint32_t next_seq(ChannelId c) const { return next_[static_cast<std::size_t>(c)]; }

 private:
  std::array<std::uint32_t, kChannelCount> next_{};
  std::uint64_t last_timestamp_ = 0;
};

/// Structured control text: "VERB key=value key=value".
struct ControlCommand {
  std::string verb;
  std::map<std::string, std::string> args;

  std::string format() const;
  static std::optional<ControlCommand> parse(std::string_view text);
};

}  // namespace teleop::protocol
