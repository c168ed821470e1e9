#include "teleop/netsim.hpp"

#include <algorithm>
#include <cmath>

namespace teleop::netsim {

bool NetworkPreset::valid() const {
  return std::isfinite(mean_one_way_delay_ms) && mean_one_way_delay_ms >= 0.0 &&
         std::isfinite(jitter_sd_ms) && jitter_sd_ms >= 0.0 && drop_prob >= 0.0 &&
         drop_prob <= 1.0;
}

std::optional<NetworkPreset> NetworkPreset::named(std::string_view name, std::uint64_t seed) {
  NetworkPreset p;
  p.name = std::string(name);
  p.seed = seed;
  if (name == "wifi") {
    p.mean_one_way_delay_ms = 2.9;
    p.jitter_sd_ms = 1.65;
  } else if (name == "5g") {
    p.mean_one_way_delay_ms = 20.0;
    p.jitter_sd_ms = 5.0;
  } else if (name != "ideal") {
    return std::nullopt;
  }
  return p;
}

Link::Link(NetworkPreset preset)
    : preset_(std::move(preset)),
      rng_(preset_.seed),
      delay_ms_(preset_.mean_one_way_delay_ms, std::max(preset_.jitter_sd_ms, 1e-300)) {}

std::uint64_t Link::sample_delay_us() {
  double ms = preset_.mean_one_way_delay_ms;
  if (preset_.jitter_sd_ms > 0.0) {
    ms = std::max(delay_ms_(rng_), kMinDelayMs);
  }
  return static_cast<std::uint64_t>(std::llround(ms * 1000.0));
}

void Link::send(const protocol::WireMessage& msg, std::uint64_t now_us) {
  const auto ch = static_cast<std::size_t>(msg.channel);
  protocol::Bytes frame = protocol::encode(msg);
  ++stats_[ch].sent;

  // Both draws happen on every send so the RNG stream does not depend on
  // the outcome of earlier drops.
  const bool drop = unit_(rng_) < preset_.drop_prob;
  std::uint64_t at = now_us + sample_delay_us();
  if (drop) {
    ++stats_[ch].dropped;
    return;
  }
  if (!preset_.allow_reorder) {
    at = std::max(at, last_delivery_[ch]);
    last_delivery_[ch] = at;
  }
  queue_.push(InFlight{at, order_++, msg.channel, std::move(frame)});
}

std::vector<Delivery> Link::poll_frames(std::uint64_t now_us) {
  std::vector<Delivery> out;
  while (!queue_.empty() && queue_.top().delivery_us <= now_us) {
    // priority_queue::top is const; the frame is copied out once per message.
    const InFlight& top = queue_.top();
    ++stats_[static_cast<std::size_t>(top.channel)].delivered;
    out.push_back(Delivery{top.delivery_us, top.frame});
    queue_.pop();
  }
  return out;
}

std::vector<protocol::WireMessage> Link::poll(std::uint64_t now_us) {
  std::vector<protocol::WireMessage> out;
  for (const Delivery& d : poll_frames(now_us)) {
    out.push_back(protocol::decode_or_throw(d.frame));
  }
  return out;
}

}  // namespace teleop::netsim
