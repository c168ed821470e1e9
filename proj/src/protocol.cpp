#include "teleop/protocol.hpp"

#include <bit>
#include <cmath>
#include <sstream>

namespace teleop::protocol {
namespace {

class Writer {
 public:
  explicit Writer(std::size_t reserve) { out_.reserve(reserve); }

  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void vec3(const Vec3& v) {
    f64(v.x());
    f64(v.y());
    f64(v.z());
  }
  void text(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

  Bytes take() { return std::move(out_); }

 private:
  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t remaining() const { return in_.size() - pos_; }

  std::uint8_t u8() { return in_[pos_++]; }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  Vec3 vec3() {
    const double x = f64();
    const double y = f64();
    const double z = f64();
    return {x, y, z};
  }
  std::string text(std::size_t n) {
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::uint64_t le(int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

[[noreturn]] void invalid(const std::string& why) {
  throw ProtocolError("InvalidMessage: " + why);
}

double quat_norm(const Quat& q) {
  return std::sqrt(q.w() * q.w() + q.x() * q.x() + q.y() * q.y() + q.z() * q.z());
}

void check_pose(const PosePayload& p) {
  if (!p.position.allFinite() || !p.orientation.coeffs().allFinite()) {
    invalid("non-finite pose");
  }
  if (std::abs(quat_norm(p.orientation) - 1.0) > kEncodeQuatTolerance) {
    invalid("orientation is not a unit quaternion");
  }
}

void write_pose(Writer& w, const PosePayload& p) {
  w.vec3(p.position);
  w.f64(p.orientation.w());
  w.f64(p.orientation.x());
  w.f64(p.orientation.y());
  w.f64(p.orientation.z());
}

DecodeErrc read_pose(Reader& r, PosePayload& out) {
  out.position = r.vec3();
  const double w = r.f64();
  const double x = r.f64();
  const double y = r.f64();
  const double z = r.f64();
  Quat q(w, x, y, z);
  if (!out.position.allFinite() || !q.coeffs().allFinite()) return DecodeErrc::NonFinite;
  const double n = quat_norm(q);
  const double dev = std::abs(n - 1.0);
  if (dev > kDecodeQuatTolerance) return DecodeErrc::NonUnitQuaternion;
  // Values the encoder would accept pass through untouched so that
  // decode(encode(m)) == m holds bit for bit.
  if (dev > kEncodeQuatTolerance) q.coeffs() /= n;
  out.orientation = q;
  return DecodeErrc::Ok;
}

std::size_t payload_size(const Payload& p) {
  struct {
    std::size_t operator()(const PosePayload&) const { return kPosePayloadSize; }
    std::size_t operator()(const ForcePosePayload&) const { return kForcePosePayloadSize; }
    std::size_t operator()(const ControlPayload& c) const { return 4 + c.text.size(); }
    std::size_t operator()(const CalibrationPayload& c) const {
      return c.kind == CalibrationPayload::Kind::CapturedPoint ? 26 : 49;
    }
  } visitor;
  return std::visit(visitor, p);
}

}  // namespace

const char* to_string(ChannelId c) {
  switch (c) {
    case ChannelId::ExpertPose: return "ExpertPose";
    case ChannelId::FollowerForcePose: return "FollowerForcePose";
    case ChannelId::Control: return "Control";
    case ChannelId::Calibration: return "Calibration";
  }
  return "?";
}

const char* to_string(DecodeErrc e) {
  switch (e) {
    case DecodeErrc::Ok: return "Ok";
    case DecodeErrc::BadMagic: return "BadMagic";
    case DecodeErrc::BadVersion: return "BadVersion";
    case DecodeErrc::UnknownChannel: return "UnknownChannel";
    case DecodeErrc::TruncatedFrame: return "TruncatedFrame";
    case DecodeErrc::LengthMismatch: return "LengthMismatch";
    case DecodeErrc::NonUnitQuaternion: return "NonUnitQuaternion";
    case DecodeErrc::NonFinite: return "NonFinite";
    case DecodeErrc::BadUtf8: return "BadUtf8";
    case DecodeErrc::PayloadTooLarge: return "PayloadTooLarge";
    case DecodeErrc::BadCalibration: return "BadCalibration";
  }
  return "?";
}

bool operator==(const PosePayload& a, const PosePayload& b) {
  return a.position == b.position && same_quat(a.orientation, b.orientation);
}

bool operator==(const ForcePosePayload& a, const ForcePosePayload& b) {
  return a.force == b.force && a.pose == b.pose;
}

bool operator==(const ControlPayload& a, const ControlPayload& b) { return a.text == b.text; }

bool operator==(const CalibrationPayload& a, const CalibrationPayload& b) {
  if (a.kind != b.kind) return false;
  if (a.kind == CalibrationPayload::Kind::CapturedPoint) {
    return a.step == b.step && a.point == b.point;
  }
  return a.model.center == b.model.center && a.model.a == b.model.a && a.model.b == b.model.b &&
         a.model.c == b.model.c;
}

bool operator==(const WireMessage& a, const WireMessage& b) {
  return a.channel == b.channel && a.seq == b.seq && a.timestamp_us == b.timestamp_us &&
         a.payload == b.payload;
}

ChannelId channel_for(const Payload& p) {
  return static_cast<ChannelId>(p.index());
}

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong forms, surrogates and out-of-range code points.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) ||
        cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) {
      return false;
    }
    i += len;
  }
  return true;
}

Bytes encode(const WireMessage& msg) {
  if (channel_for(msg.payload) != msg.channel) {
    invalid(std::string("payload does not belong on channel ") + to_string(msg.channel));
  }

  std::visit(
      [](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, PosePayload>) {
          check_pose(p);
        } else if constexpr (std::is_same_v<T, ForcePosePayload>) {
          if (!p.force.allFinite()) invalid("non-finite force");
          check_pose(p.pose);
        } else if constexpr (std::is_same_v<T, ControlPayload>) {
          if (p.text.size() > kMaxControlText) invalid("control text exceeds 4096 bytes");
          if (!valid_utf8(p.text)) invalid("control text is not valid UTF-8");
        } else {
          if (p.kind == CalibrationPayload::Kind::CapturedPoint) {
            if (p.step < 1 || p.step > 4) invalid("calibration step out of range");
            if (!p.point.allFinite()) invalid("non-finite calibration point");
          } else if (p.kind == CalibrationPayload::Kind::FittedModel) {
            if (!p.model.valid()) invalid("invalid ellipsoid model");
          } else {
            invalid("unknown calibration payload kind");
          }
        }
      },
      msg.payload);

  const std::size_t len = payload_size(msg.payload);
  Writer w(frame_size(len));
  w.u8(static_cast<std::uint8_t>(kMagic >> 8));
  w.u8(static_cast<std::uint8_t>(kMagic & 0xFF));
  w.u8(kVersion);
  w.u8(static_cast<std::uint8_t>(msg.channel));
  w.u32(msg.seq);
  w.u64(msg.timestamp_us);
  w.u32(static_cast<std::uint32_t>(len));

  std::visit(
      [&w](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, PosePayload>) {
          write_pose(w, p);
        } else if constexpr (std::is_same_v<T, ForcePosePayload>) {
          w.vec3(p.force);
          write_pose(w, p.pose);
        } else if constexpr (std::is_same_v<T, ControlPayload>) {
          w.u32(static_cast<std::uint32_t>(p.text.size()));
          w.text(p.text);
        } else {
          w.u8(static_cast<std::uint8_t>(p.kind));
          if (p.kind == CalibrationPayload::Kind::CapturedPoint) {
            w.u8(p.step);
            w.vec3(p.point);
          } else {
            w.vec3(p.model.center);
            w.f64(p.model.a);
            w.f64(p.model.b);
            w.f64(p.model.c);
          }
        }
      },
      msg.payload);
  return w.take();
}

DecodeResult decode(std::span<const std::uint8_t> bytes) noexcept {
  auto fail = [](DecodeErrc e) { return DecodeResult{std::nullopt, e}; };

  if (bytes.size() < 2) return fail(DecodeErrc::TruncatedFrame);
  if (bytes[0] != (kMagic >> 8) || bytes[1] != (kMagic & 0xFF)) return fail(DecodeErrc::BadMagic);
  if (bytes.size() < 3) return fail(DecodeErrc::TruncatedFrame);
  if (bytes[2] != kVersion) return fail(DecodeErrc::BadVersion);
  if (bytes.size() < 4) return fail(DecodeErrc::TruncatedFrame);
  if (bytes[3] >= kChannelCount) return fail(DecodeErrc::UnknownChannel);
  if (bytes.size() < kHeaderSize) return fail(DecodeErrc::TruncatedFrame);

  Reader r(bytes.subspan(4));
  WireMessage msg;
  msg.channel = static_cast<ChannelId>(bytes[3]);
  msg.seq = r.u32();
  msg.timestamp_us = r.u64();
  const std::uint32_t len = r.u32();
  if (r.remaining() < len) return fail(DecodeErrc::TruncatedFrame);
  if (r.remaining() > len) return fail(DecodeErrc::LengthMismatch);

  switch (msg.channel) {
    case ChannelId::ExpertPose: {
      if (len != kPosePayloadSize) return fail(DecodeErrc::LengthMismatch);
      PosePayload p;
      if (auto e = read_pose(r, p); e != DecodeErrc::Ok) return fail(e);
      msg.payload = p;
      break;
    }
    case ChannelId::FollowerForcePose: {
      if (len != kForcePosePayloadSize) return fail(DecodeErrc::LengthMismatch);
      ForcePosePayload p;
      p.force = r.vec3();
      if (!p.force.allFinite()) return fail(DecodeErrc::NonFinite);
      if (auto e = read_pose(r, p.pose); e != DecodeErrc::Ok) return fail(e);
      msg.payload = p;
      break;
    }
    case ChannelId::Control: {
      if (len < 4) return fail(DecodeErrc::LengthMismatch);
      const std::uint32_t text_len = r.u32();
      if (text_len > kMaxControlText) return fail(DecodeErrc::PayloadTooLarge);
      if (text_len != len - 4) return fail(DecodeErrc::LengthMismatch);
      ControlPayload p;
      p.text = r.text(text_len);
      if (!valid_utf8(p.text)) return fail(DecodeErrc::BadUtf8);
      msg.payload = std::move(p);
      break;
    }
    case ChannelId::Calibration: {
      if (len < 1) return fail(DecodeErrc::LengthMismatch);
      CalibrationPayload p;
      const std::uint8_t kind = r.u8();
      if (kind == static_cast<std::uint8_t>(CalibrationPayload::Kind::CapturedPoint)) {
        if (len != 26) return fail(DecodeErrc::LengthMismatch);
        p.kind = CalibrationPayload::Kind::CapturedPoint;
        p.step = r.u8();
        p.point = r.vec3();
        if (p.step < 1 || p.step > 4) return fail(DecodeErrc::BadCalibration);
        if (!p.point.allFinite()) return fail(DecodeErrc::NonFinite);
      } else if (kind == static_cast<std::uint8_t>(CalibrationPayload::Kind::FittedModel)) {
        if (len != 49) return fail(DecodeErrc::LengthMismatch);
        p.kind = CalibrationPayload::Kind::FittedModel;
        p.model.center = r.vec3();
        p.model.a = r.f64();
        p.model.b = r.f64();
        p.model.c = r.f64();
        if (!p.model.valid()) return fail(DecodeErrc::BadCalibration);
      } else {
        return fail(DecodeErrc::BadCalibration);
      }
      msg.payload = p;
      break;
    }
  }
  return DecodeResult{std::move(msg), DecodeErrc::Ok};
}

WireMessage decode_or_throw(std::span<const std::uint8_t> bytes) {
  DecodeResult r = decode(bytes);
  if (!r) throw ProtocolError(std::string("decode failed: ") + to_string(r.error));
  return std::move(*r.message);
}

WireMessage ChannelSender::make(std::uint64_t timestamp_us, Payload payload) {
  if (timestamp_us < last_timestamp_) {
    throw ProtocolError("InvalidMessage: timestamp went backwards");
  }
  last_timestamp_ = timestamp_us;
  WireMessage m;
  m.channel = channel_for(payload);
  m.seq = next_[static_cast<std::size_t>(m.channel)]++;
  m.timestamp_us = timestamp_us;
  m.payload = std::move(payload);
  return m;
}

std::string ControlCommand::format() const {
  std::string out = verb;
  for (const auto& [k, v] : args) {
    out += ' ';
    out += k;
    out += '=';
    out += v;
  }
  return out;
}

std::optional<ControlCommand> ControlCommand::parse(std::string_view text) {
  std::istringstream in{std::string(text)};
  ControlCommand cmd;
  if (!(in >> cmd.verb)) return std::nullopt;
  if (cmd.verb.find('=') != std::string::npos) return std::nullopt;
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos || eq == 0) return std::nullopt;
    cmd.args[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return cmd;
}

}  // namespace teleop::protocol
