#include "teleop/serve.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <thread>
#include <vector>

#include "teleop/protocol.hpp"
#include "teleop/trajectory.hpp"

namespace teleop::serve {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

struct Outgoing {
  protocol::Bytes frame;
  bool droppable = true;  // telemetry and state; calibration frames are kept
};

}  // namespace

class Server::Impl {
 public:
  explicit Impl(ServerOptions options)
      : options_(std::move(options)),
        session_(options_.session, session::Session::LeaderMode::Live),
        acceptor_(ioc_) {}

  ~Impl() { stop(); }

  void start() {
    const tcp::endpoint ep(asio::ip::make_address(options_.address), options_.port);
    boost::system::error_code ec;
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(asio::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(asio::socket_base::max_listen_connections, ec);
    if (ec) {
      throw PortInUse("cannot listen on " + options_.address + ":" +
                      std::to_string(options_.port) + ": " + ec.message());
    }
    port_ = acceptor_.local_endpoint().port();
    do_accept();
    io_thread_ = std::thread([this] { ioc_.run(); });
    engine_thread_ = std::thread([this] { engine_loop(); });
    spdlog::info("serving on {}:{}", options_.address, port_);
  }

  void stop() {
    {
      std::lock_guard lock(stop_mutex_);
      if (stopped_) return;
      stopped_ = true;
    }
    stop_cv_.notify_all();
    running_ = false;
    if (engine_thread_.joinable()) engine_thread_.join();
    asio::post(ioc_, [this] {
      boost::system::error_code ec;
      acceptor_.close(ec);
      if (client_) client_->shutdown();
    });
    // Let a pending close handshake finish before tearing down the context.
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    ioc_.stop();
    if (io_thread_.joinable()) io_thread_.join();
    write_log();
  }

  void wait(double max_seconds) {
    std::unique_lock lock(stop_mutex_);
    if (max_seconds > 0.0) {
      stop_cv_.wait_for(lock, std::chrono::duration<double>(max_seconds), [this] { return stopped_; });
    } else {
      stop_cv_.wait(lock, [this] { return stopped_; });
    }
  }

  std::uint16_t port() const { return port_; }

  EngineStatus status() const {
    std::lock_guard lock(status_mutex_);
    return status_;
  }

 private:
  class Client : public std::enable_shared_from_this<Client> {
   public:
    Client(Impl& server, tcp::socket socket) : server_(server), ws_(std::move(socket)) {}

    void run() {
      ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      ws_.async_accept([self = shared_from_this()](beast::error_code ec) { self->on_accept(ec); });
    }

    void send(Outgoing o) {
      if (closing_ || !open_) return;
      if (queue_.size() >= kOutboundCapacity) {
        // Poses are idempotent state: drop the oldest droppable frame.
        // The frame currently being written (front) is never touched.
        const auto first = writing_ ? std::next(queue_.begin()) : queue_.begin();
        auto victim = std::find_if(first, queue_.end(), [](const Outgoing& q) { return q.droppable; });
        if (victim == queue_.end()) victim = first;
        if (victim != queue_.end()) {
          queue_.erase(victim);
          server_.note_dropped();
        }
      }
      queue_.push_back(std::move(o));
      if (!writing_) write_next();
    }

    void close(std::uint16_t code, const std::string& reason) {
      if (closing_) return;
      closing_ = true;
      close_reason_ = websocket::close_reason(static_cast<websocket::close_code>(code), reason);
      if (!open_) {
        beast::get_lowest_layer(ws_).close();
      } else if (!writing_) {
        do_close();
      }
    }

    void shutdown() { close(websocket::close_code::going_away, "server stopping"); }

   private:
    void on_accept(beast::error_code ec) {
      if (ec) return server_.detach(this);
      open_ = true;
      if (server_.client_.get() != this) {
        close(kCloseBusy, "Busy");
        return;
      }
      nlohmann::json hello = {{"type", "hello"},
                              {"protocol", "teleop-wire"},
                              {"version", protocol::kVersion},
                              {"tick_rate_hz", server_.options_.session.tick_rate_hz}};
      text_hello_ = hello.dump();
      writing_ = true;
      ws_.text(true);
      ws_.async_write(asio::buffer(text_hello_),
                      [self = shared_from_this()](beast::error_code e, std::size_t) {
                        self->on_write(e, false);
                      });
      server_.client_connected();
      read();
    }

    void read() {
      ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        self->on_read(ec);
      });
    }

    void on_read(beast::error_code ec) {
      if (ec) return server_.detach(this);
      if (closing_) return;
      if (!ws_.got_binary()) {
        bad_frame("text message");
        return;
      }
      const auto data = buffer_.cdata();
      const std::span<const std::uint8_t> bytes(static_cast<const std::uint8_t*>(data.data()),
                                                data.size());
      const protocol::DecodeResult r = protocol::decode(bytes);
      buffer_.consume(buffer_.size());
      if (!r.message) {
        bad_frame(protocol::to_string(r.error));
        return;
      }
      if (!server_.inbound(*r.message)) {
        bad_frame("unexpected channel");
        return;
      }
      read();
    }

    void bad_frame(const std::string& why) {
      spdlog::warn("closing client: BadFrame ({})", why);
      server_.note_bad_frame();
      close(kCloseBadFrame, "BadFrame");
    }

    void write_next() {
      writing_ = true;
      ws_.binary(true);
      ws_.async_write(asio::buffer(queue_.front().frame),
                      [self = shared_from_this()](beast::error_code ec, std::size_t) {
                        self->on_write(ec, true);
                      });
    }

    void on_write(beast::error_code ec, bool from_queue) {
      writing_ = false;
      if (ec) {
        queue_.clear();
        return server_.detach(this);
      }
      if (from_queue && !queue_.empty()) queue_.pop_front();
      if (closing_) {
        do_close();
      } else if (!queue_.empty()) {
        write_next();
      }
    }

    void do_close() {
      if (close_sent_) return;
      close_sent_ = true;
      ws_.async_close(close_reason_, [self = shared_from_this()](beast::error_code) {
        self->server_.detach(self.get());
      });
    }

    Impl& server_;
    websocket::stream<beast::tcp_stream> ws_;
    beast::flat_buffer buffer_;
    std::deque<Outgoing> queue_;
    std::string text_hello_;
    websocket::close_reason close_reason_;
    bool open_ = false;
    bool writing_ = false;
    bool closing_ = false;
    bool close_sent_ = false;
  };

  // I/O thread -----------------------------------------------------------------

  void do_accept() {
    acceptor_.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      auto c = std::make_shared<Client>(*this, std::move(socket));
      if (!client_) client_ = c;
      c->run();
      do_accept();
    });
  }

  void detach(Client* c) {
    if (client_.get() == c) {
      client_.reset();
      spdlog::info("client disconnected");
    }
  }

  void client_connected() {
    ++client_generation_;
    std::lock_guard lock(status_mutex_);
    ++status_.clients_served;
  }

  /// Queues a decoded client message for the engine. False for channels a
  /// client may not send.
  bool inbound(const protocol::WireMessage& msg) {
    std::lock_guard lock(inbound_mutex_);
    if (const auto* p = std::get_if<protocol::PosePayload>(&msg.payload)) {
      latest_pose_ = Pose{msg.timestamp_us, p->position, p->orientation};
      return true;
    }
    if (const auto* c = std::get_if<protocol::ControlPayload>(&msg.payload)) {
      if (controls_.size() < kOutboundCapacity) controls_.push_back(c->text);
      return true;
    }
    return false;
  }

  void note_bad_frame() {
    std::lock_guard lock(status_mutex_);
    ++status_.bad_frames;
  }

  void note_dropped() {
    std::lock_guard lock(status_mutex_);
    ++status_.dropped_outbound;
  }

  // Engine thread --------------------------------------------------------------

  void publish(protocol::Payload payload, bool droppable) {
    Outgoing o{protocol::encode(tx_.make(last_tx_us_, std::move(payload))), droppable};
    asio::post(ioc_, [this, o = std::move(o)]() mutable {
      if (client_) client_->send(std::move(o));
    });
  }

  void publish_calibration(std::size_t from_capture) {
    const auto& caps = session_.captures();
    for (std::size_t i = from_capture; i < caps.size(); ++i) {
      protocol::CalibrationPayload p;
      p.kind = protocol::CalibrationPayload::Kind::CapturedPoint;
      p.step = static_cast<std::uint8_t>(caps[i].step);
      p.point = caps[i].point;
      publish(p, false);
    }
    if (session_.ellipsoid() && (from_capture == 0 || !sent_model_)) {
      protocol::CalibrationPayload p;
      p.kind = protocol::CalibrationPayload::Kind::FittedModel;
      p.model = *session_.ellipsoid();
      publish(p, false);
      sent_model_ = true;
    }
  }

  void engine_loop() {
    using clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<clock::duration>(
        std::chrono::duration<double>(1.0 / options_.session.tick_rate_hz));
    auto next = clock::now();
    std::uint64_t seen_generation = 0;
    std::size_t seen_captures = 0;

    while (running_) {
      std::optional<Pose> pose;
      std::vector<std::string> controls;
      {
        std::lock_guard lock(inbound_mutex_);
        pose.swap(latest_pose_);
        controls.swap(controls_);
      }
      if (pose) session_.set_live_leader_pose(*pose);
      for (const std::string& text : controls) {
        const auto cmd = protocol::ControlCommand::parse(text);
        const bool ok = cmd && session_.apply_control(*cmd);
        const std::string verb = cmd ? cmd->verb : std::string("?");
        spdlog::info("control {} -> {}", text, ok ? "ACK" : "NAK");
        publish(protocol::ControlPayload{(ok ? "ACK " : "NAK ") + verb}, false);
      }

      session_.tick();
      last_tx_us_ = session_.next_tick_us();

      const std::uint64_t generation = client_generation_.load();
      if (generation != seen_generation) {
        seen_generation = generation;
        publish_calibration(0);
      } else if (session_.captures().size() != seen_captures || (session_.ellipsoid() && !sent_model_)) {
        publish_calibration(seen_captures);
      }
      seen_captures = session_.captures().size();

      protocol::ForcePosePayload fp;
      if (const auto& tel = session_.follower_telemetry()) {
        fp = *tel;
      } else {
        fp.pose = protocol::PosePayload{session_.follower_pose().position,
                                        session_.follower_pose().orientation};
      }
      publish(fp, true);
      const Vec3& h = session_.last_force();
      protocol::ControlCommand state{"STATE",
                                     {{"t_us", std::to_string(last_tx_us_)},
                                      {"phase", to_string(session_.phase())},
                                      {"step", std::to_string(session_.calibration_step())},
                                      {"hfx", format_double(h.x())},
                                      {"hfy", format_double(h.y())},
                                      {"hfz", format_double(h.z())}}};
      publish(protocol::ControlPayload{state.format()}, true);

      {
        std::lock_guard lock(status_mutex_);
        status_.phase = session_.phase();
        status_.calibration_step = session_.calibration_step();
        status_.ticks = session_.ticks();
      }
      next += period;
      std::this_thread::sleep_until(next);
    }
  }

  void write_log() {
    if (options_.log_path.empty() || log_written_) return;
    log_written_ = true;
    LogHeader header;
    header.config_hash = options_.config_hash;
    header.fields = session_.header_fields();
    for (const auto& [k, v] : options_.header_fields) header.fields[k] = v;
    header.fields["leader"] = "live";
    header.ellipsoid = session_.ellipsoid();
    std::ofstream out(options_.log_path, std::ios::binary);
    if (!out) {
      spdlog::error("cannot write log '{}'", options_.log_path);
      return;
    }
    teleop::write_log(out, header, session_.records());
    spdlog::info("wrote {} records to {}", session_.records().size(), options_.log_path);
  }

  ServerOptions options_;
  session::Session session_;  // engine thread only
  protocol::ChannelSender tx_;
  std::uint64_t last_tx_us_ = 0;
  bool sent_model_ = false;
  bool log_written_ = false;

  asio::io_context ioc_;
  tcp::acceptor acceptor_;
  std::shared_ptr<Client> client_;  // I/O thread only
  std::uint16_t port_ = 0;

  std::mutex inbound_mutex_;
  std::optional<Pose> latest_pose_;
  std::vector<std::string> controls_;
  std::atomic<std::uint64_t> client_generation_{0};

  mutable std::mutex status_mutex_;
  EngineStatus status_;

  std::atomic<bool> running_{true};
  std::mutex stop_mutex_;
  std::condition_variable stop_cv_;
  bool stopped_ = false;
  std::thread io_thread_;
  std::thread engine_thread_;
};

Server::Server(ServerOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}
Server::~Server() = default;
void Server::start() { impl_->start(); }
void Server::stop() { impl_->stop(); }
void Server::wait(double max_seconds) { impl_->wait(max_seconds); }
std::uint16_t Server::port() const { return impl_->port(); }
EngineStatus Server::status() const { return impl_->status(); }

}  // namespace teleop::serve
