#include "biped/teleop/server.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <deque>
#include <future>
#include <map>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "biped/errors.hpp"
#include "biped/version.hpp"

namespace biped::teleop {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;
using Clock = std::chrono::steady_clock;

namespace {

constexpr std::size_t kMaxQueuedFrames = 1024;

std::string hex_id(std::uint64_t id) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(id));
  return buf;
}

}  // namespace

class TeleopServer::Impl : public std::enable_shared_from_this<TeleopServer::Impl> {
 public:
  class WsSession;
  class HttpSession;

  Impl(PolicySnapshot policy, EnvConfig env, ServerOptions options)
      : policy_(std::move(policy)), env_(std::move(env)), options_(std::move(options)), acceptor_(ioc_) {
    if (!(options_.rate_hz > 0.0) || options_.decimation < 1 || !(options_.driver_window > 0.0)) {
      throw ConfigError("serve: rate_hz, decimation and driver_window must be positive");
    }
  }

  void start() {
    try {
      const tcp::endpoint ep(net::ip::make_address(options_.address), options_.port);
      acceptor_.open(ep.protocol());
      acceptor_.set_option(net::socket_base::reuse_address(true));
      acceptor_.bind(ep);
      acceptor_.listen();
    } catch (const boost::system::system_error& e) {
      throw std::runtime_error("cannot listen on " + options_.address + ":" + std::to_string(options_.port) + ": " +
                               e.code().message());
    }
    port_ = acceptor_.local_endpoint().port();
    env_.set_command(Vec3::Zero());
    obs_ = env_.reset(options_.seed);
    running_ = true;
    start_time_ = Clock::now();
    do_accept();
    std::packaged_task<void()> io([self = shared_from_this()] { self->ioc_.run(); });
    io_done_ = io.get_future();
    io_thread_ = std::thread(std::move(io));
    sim_thread_ = std::thread([self = shared_from_this()] { self->sim_loop(); });
  }

  void stop() {
    if (!running_.exchange(false)) return;
    if (sim_thread_.joinable()) sim_thread_.join();
    net::post(ioc_, [self = shared_from_this()] {
      beast::error_code ec;
      self->acceptor_.close(ec);
      self->close_all(false);
    });
    // run() returns once every session has finished its close handshake
    if (io_done_.wait_for(std::chrono::milliseconds(500)) != std::future_status::ready) {
      net::post(ioc_, [self = shared_from_this()] { self->close_all(true); });
      if (io_done_.wait_for(std::chrono::seconds(1)) != std::future_status::ready) ioc_.stop();
    }
    if (io_thread_.joinable()) io_thread_.join();
  }

  unsigned short port() const { return port_; }

  ServerStatus status() const {
    std::lock_guard lock(status_mutex_);
    ServerStatus s = status_;
    s.wall_time = std::chrono::duration<double>(Clock::now() - start_time_).count();
    std::lock_guard slock(sessions_mutex_);
    s.subscribers = sessions_.size();
    return s;
  }

  nlohmann::json health() const {
    const ServerStatus s = status();
    return {{"status", "ok"},         {"version", kVersion},        {"checkpoint", hex_id(policy_.checkpoint_id)},
            {"schema", kFrameSchema}, {"steps", s.steps},           {"episode", s.episode},
            {"subscribers", s.subscribers}};
  }

  nlohmann::json hello() const {
    const CommandRanges& r = env_.config().commands;
    return {{"schema", kFrameSchema},
            {"type", "hello"},
            {"version", kVersion},
            {"checkpoint", hex_id(policy_.checkpoint_id)},
            {"control_dt", env_.config().control_dt},
            {"ranges", {{"vx", {r.vx.lo, r.vx.hi}}, {"vy", {r.vy.lo, r.vy.hi}}, {"wz", {r.wz.lo, r.wz.hi}}}}};
  }

  /// Runs on the io thread for every text message a client sends.
  nlohmann::json handle_message(std::uint64_t client, std::string_view text) {
    ClientMessage msg;
    try {
      msg = parse_client_message(text);
    } catch (const InputError& e) {
      return error_message(e.what());
    }
    if (!claim_driver(client)) return error_message("another client holds the driver role");
    if (msg.kind == MessageKind::Reset) {
      reset_requested_ = true;
      return {{"schema", kFrameSchema}, {"type", "ack"}, {"reset", true}};
    }
    const Vec3 applied = clamp_command(msg.command, env_.config().commands);
    if (!mailbox_.post(applied, msg.client_time)) {
      return {{"schema", kFrameSchema}, {"type", "dropped"}, {"reason", "stale"}};
    }
    nlohmann::json ack = {{"schema", kFrameSchema}, {"type", "ack"}, {"command", {applied[0], applied[1], applied[2]}}};
    if (msg.client_time) ack["t"] = *msg.client_time;
    return ack;
  }

  void add_session(std::uint64_t id, const std::shared_ptr<WsSession>& s) {
    std::lock_guard lock(sessions_mutex_);
    sessions_[id] = s;
  }

  void remove_session(std::uint64_t id) {
    {
      std::lock_guard lock(sessions_mutex_);
      sessions_.erase(id);
    }
    std::lock_guard lock(driver_mutex_);
    if (driver_ == id) driver_ = 0;
  }

  std::uint64_t next_client_id() { return ++client_ids_; }

  net::io_context ioc_;

 private:
  bool claim_driver(std::uint64_t client) {
    std::lock_guard lock(driver_mutex_);
    const auto now = Clock::now();
    const bool expired = std::chrono::duration<double>(now - driver_seen_).count() > options_.driver_window;
    if (driver_ != 0 && driver_ != client && !expired) return false;
    driver_ = client;
    driver_seen_ = now;
    return true;
  }

  void do_accept();
  void broadcast(const std::shared_ptr<const std::string>& text);
  void close_all(bool hard);

  void sim_loop() {
    const double dt = env_.config().control_dt;
    const auto period = std::chrono::duration<double>(1.0 / options_.rate_hz);
    std::uint64_t steps = 0, episode = 0, seq = 0;
    bool ended = false;
    while (running_) {
      if (reset_requested_.exchange(false) || ended) {
        obs_ = env_.reset();
        ++episode;
        ended = false;
      }
      if (auto cmd = mailbox_.take()) env_.set_command(*cmd);
      const Transition tr = env_.step(policy_.act(obs_).col(0));
      obs_ = tr.observation;
      ++steps;
      ended = tr.terminated || tr.truncated;

      const double sim_time = steps * dt;
      const double wall = std::chrono::duration<double>(Clock::now() - start_time_).count();
      {
        std::lock_guard lock(status_mutex_);
        status_.steps = steps;
        status_.episode = episode;
        status_.sim_time = sim_time;
        status_.command = env_.command();
      }
      if (steps % static_cast<std::uint64_t>(options_.decimation) == 0) {
        StateFrame f;
        f.seq = ++seq;
        f.time = env_.episode_time();
        f.sim_time = sim_time;
        f.drift = sim_time - wall;
        f.episode = episode;
        f.episode_step = env_.episode_steps();
        f.status = tr.terminated ? EpisodeStatus::Terminated
                                 : (tr.truncated ? EpisodeStatus::Truncated : EpisodeStatus::Running);
        f.base_position = env_.state().base_position;
        f.base_orientation = env_.state().base_orientation;
        f.q = env_.state().q;
        f.fz = tr.context.fz;
        const GaitPhase ph = phase_at(env_.config().gait, env_.episode_time());
        f.segment = ph.segment;
        f.phi = ph.phi;
        f.command = env_.command();
        f.rewards = tr.breakdown;
        if (!tr.info.diverged) broadcast(std::make_shared<const std::string>(to_json(f).dump()));
      }
      std::this_thread::sleep_until(start_time_ + std::chrono::duration_cast<Clock::duration>(period * steps));
    }
  }

  PolicySnapshot policy_;
  LocomotionEnv env_;
  ServerOptions options_;
  tcp::acceptor acceptor_;
  unsigned short port_ = 0;
  std::thread io_thread_;
  std::future<void> io_done_;
  std::thread sim_thread_;
  std::atomic<bool> running_{false};
  std::atomic<bool> reset_requested_{false};
  Clock::time_point start_time_;
  Observation obs_ = Observation::Zero();
  CommandMailbox mailbox_;

  mutable std::mutex status_mutex_;
  ServerStatus status_;

  mutable std::mutex sessions_mutex_;
  std::map<std::uint64_t, std::weak_ptr<WsSession>> sessions_;
  std::atomic<std::uint64_t> client_ids_{0};

  std::mutex driver_mutex_;
  std::uint64_t driver_ = 0;
  Clock::time_point driver_seen_;
};

/// WebSocket subscriber. All handlers run on the single io thread.
class TeleopServer::Impl::WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(std::shared_ptr<Impl> server, tcp::socket&& socket)
      : server_(std::move(server)), ws_(std::move(socket)), id_(server_->next_client_id()) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->server_->add_session(self->id_, self);
      self->send(std::make_shared<const std::string>(self->server_->hello().dump()));
      self->do_read();
    });
  }

  /// Safe to call from any thread.
  void send(std::shared_ptr<const std::string> text) {
    net::post(ws_.get_executor(), [self = shared_from_this(), text = std::move(text)] {
      if (self->closed_) return;
      if (self->queue_.size() >= kMaxQueuedFrames) return;  // slow reader: shed frames
      self->queue_.push_back(text);
      if (self->queue_.size() == 1) self->do_write();
    });
  }

  void close(bool hard) {
    net::post(ws_.get_executor(), [self = shared_from_this(), hard] {
      if (hard) {
        beast::get_lowest_layer(self->ws_).close();
        return;
      }
      if (self->closed_) return;
      self->closed_ = true;
      self->ws_.async_close(websocket::close_code::going_away, [self](beast::error_code) {});
    });
  }

 private:
  void do_read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->server_->remove_session(self->id_);
        return;
      }
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      const nlohmann::json reply = self->server_->handle_message(self->id_, text);
      self->send(std::make_shared<const std::string>(reply.dump()));
      self->do_read();
    });
  }

  void do_write() {
    ws_.text(true);
    ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) {
        self->closed_ = true;
        self->queue_.clear();
        return;
      }
      self->queue_.pop_front();
      if (!self->queue_.empty()) self->do_write();
    });
  }

  std::shared_ptr<Impl> server_;
  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  std::uint64_t id_;
  bool closed_ = false;
};

/// Plain HTTP: answers /health, hands /session upgrades to a WsSession.
class TeleopServer::Impl::HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(std::shared_ptr<Impl> server, tcp::socket&& socket)
      : server_(std::move(server)), stream_(std::move(socket)) {}

  void run() {
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return;
      self->on_request();
    });
  }

 private:
  void on_request() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/session") {
        stream_.expires_never();
        std::make_shared<WsSession>(server_, stream_.release_socket())->run(std::move(req_));
        return;
      }
      respond(http::status::not_found, R"({"error":"websocket endpoint is /session"})");
      return;
    }
    if (req_.method() == http::verb::get && req_.target() == "/health") {
      respond(http::status::ok, server_->health().dump());
      return;
    }
    respond(http::status::not_found, R"({"error":"not found"})");
  }

  void respond(http::status status, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::server, std::string("biped-teleop/") + kVersion);
    res->set(http::field::content_type, "application/json");
    res->keep_alive(false);
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ec;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
    });
  }

  std::shared_ptr<Impl> server_;
  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

void TeleopServer::Impl::do_accept() {
  acceptor_.async_accept(net::make_strand(ioc_), [self = shared_from_this()](beast::error_code ec, tcp::socket s) {
    if (ec) return;  // acceptor closed
    std::make_shared<HttpSession>(self, std::move(s))->run();
    self->do_accept();
  });
}

void TeleopServer::Impl::broadcast(const std::shared_ptr<const std::string>& text) {
  std::vector<std::shared_ptr<WsSession>> targets;
  {
    std::lock_guard lock(sessions_mutex_);
    for (auto& [id, weak] : sessions_) {
      if (auto s = weak.lock()) targets.push_back(std::move(s));
    }
  }
  for (auto& s : targets) s->send(text);
}

void TeleopServer::Impl::close_all(bool hard) {
  std::vector<std::shared_ptr<WsSession>> targets;
  {
    std::lock_guard lock(sessions_mutex_);
    for (auto& [id, weak] : sessions_) {
      if (auto s = weak.lock()) targets.push_back(std::move(s));
    }
  }
  for (auto& s : targets) s->close(hard);
}

TeleopServer::TeleopServer(PolicySnapshot policy, EnvConfig env, ServerOptions options)
    : impl_(std::make_shared<Impl>(std::move(policy), std::move(env), std::move(options))) {}

TeleopServer::~TeleopServer() { stop(); }

void TeleopServer::start() { impl_->start(); }
void TeleopServer::stop() { impl_->stop(); }
unsigned short TeleopServer::port() const { return impl_->port(); }
ServerStatus TeleopServer::status() const { return impl_->status(); }
nlohmann::json TeleopServer::health() const { return impl_->health(); }

}  // namespace biped::teleop
