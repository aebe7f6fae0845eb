#pragma once

// WebSocket transport for LiveSession. One simulation thread paced at the
// control rate times the speed multiplier; one I/O thread owning every
// socket. Commands travel through a queue drained at the start of each
// control step; frames fan out without blocking the simulation and a client
// with a full send queue just misses frames.

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "maaip/livebridge.hpp"

namespace maaip {

namespace live_detail {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

class Client : public std::enable_shared_from_this<Client> {
 public:
  // Frames beyond this many unsent messages are dropped for this client.
  static constexpr std::size_t kMaxQueuedFrames = 4;

  Client(tcp::socket socket, int id) : ws_(std::move(socket)), id_(id) {}

  int id() const { return id_; }
  std::uint64_t dropped_frames() const { return dropped_; }

  void start(std::function<void(std::shared_ptr<Client>)> on_open,
             std::function<void(std::shared_ptr<Client>, std::string)> on_message,
             std::function<void(std::shared_ptr<Client>)> on_close) {
    on_message_ = std::move(on_message);
    on_close_ = std::move(on_close);
    ws_.text(true);
    ws_.async_accept([self = shared_from_this(), open = std::move(on_open)](beast::error_code ec) {
      if (ec) return self->close();
      open(self);
      self->read();
    });
  }

  // `droppable` marks frames; replies are always queued.
  void send(std::shared_ptr<const std::string> msg, bool droppable) {
    if (closed_) return;
    if (droppable && frames_queued_ >= kMaxQueuedFrames) {
      ++dropped_;
      return;
    }
    out_.push_back({std::move(msg), droppable});
    if (droppable) ++frames_queued_;
    if (!writing_) write();
  }

  void close() {
    if (closed_) return;
    closed_ = true;
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().close(ec);
    if (on_close_) on_close_(shared_from_this());
  }

 private:
  struct Outgoing {
    std::shared_ptr<const std::string> text;
    bool frame;
  };

  void read() {
    ws_.async_read(buf_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      std::string msg = beast::buffers_to_string(self->buf_.data());
      self->buf_.consume(self->buf_.size());
      self->on_message_(self, std::move(msg));
      self->read();
    });
  }

  void write() {
    writing_ = true;
    ws_.async_write(net::buffer(*out_.front().text), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      if (self->out_.front().frame) --self->frames_queued_;
      self->out_.pop_front();
      if (self->out_.empty()) {
        self->writing_ = false;
      } else {
        self->write();
      }
    });
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buf_;
  std::deque<Outgoing> out_;
  std::size_t frames_queued_ = 0;
  bool writing_ = false;
  bool closed_ = false;
  int id_;
  std::uint64_t dropped_ = 0;
  std::function<void(std::shared_ptr<Client>, std::string)> on_message_;
  std::function<void(std::shared_ptr<Client>)> on_close_;
};

}  // namespace live_detail

class LiveServer {
 public:
  // Binds immediately so a busy port fails here. Port 0 picks a free one.
  LiveServer(LiveSession session, unsigned short port, const std::string& address = "0.0.0.0")
      : session_(std::move(session)), acceptor_(ioc_) {
    namespace net = live_detail::net;
    try {
      const live_detail::tcp::endpoint ep(net::ip::make_address(address), port);
      acceptor_.open(ep.protocol());
      acceptor_.bind(ep);
      acceptor_.listen();
    } catch (const boost::system::system_error& e) {
      throw Error("livebridge: cannot listen on " + address + ":" + std::to_string(port) + " (" + e.code().message() +
                  ")");
    }
    refresh_status();
  }

  ~LiveServer() {
    stop();
    join();
  }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  // Starts the I/O and simulation threads and returns.
  void start() {
    if (running_.exchange(true)) return;
    accept();
    io_thread_ = std::thread([this] { ioc_.run(); });
    sim_thread_ = std::thread([this] { sim_loop(); });
  }

  // Blocks until stop() is called from another thread.
  void run() {
    start();
    {
      std::unique_lock<std::mutex> lock(stop_mutex_);
      stop_cv_.wait(lock, [this] { return !running_; });
    }
    join();
  }

  void stop() {
    {
      std::lock_guard<std::mutex> lock(stop_mutex_);
      running_ = false;
    }
    stop_cv_.notify_all();
  }

  std::int64_t frames_sent() const { return frames_sent_; }

 private:
  using ClientPtr = std::shared_ptr<live_detail::Client>;

  struct Pending {
    int client;
    CommandMessage command;
  };

  void join() {
    std::lock_guard<std::mutex> lock(join_mutex_);
    if (sim_thread_.joinable()) sim_thread_.join();
    if (io_thread_.joinable()) {
      live_detail::net::post(ioc_, [this] {
        boost::system::error_code ec;
        acceptor_.close(ec);
        std::vector<ClientPtr> all;
        for (auto& [id, c] : clients_) all.push_back(c);
        for (auto& c : all) c->close();
        clients_.clear();
        ioc_.stop();
      });
      io_thread_.join();
    }
  }

  void accept() {
    acceptor_.async_accept([this](boost::system::error_code ec, live_detail::tcp::socket socket) {
      if (ec) return;
      auto client = std::make_shared<live_detail::Client>(std::move(socket), next_id_++);
      client->start([this](ClientPtr c) { on_open(c); },
                    [this](ClientPtr c, std::string m) { on_message(c, m); }, [this](ClientPtr c) { on_close(c); });
      accept();
    });
  }

  // --- I/O thread ---

  void on_open(const ClientPtr& c) {
    clients_[c->id()] = c;
    if (controller_ < 0) controller_ = c->id();
    nlohmann::json hello;
    {
      std::lock_guard<std::mutex> lock(status_mutex_);
      hello = status_;
    }
    hello["v"] = kWireVersion;
    hello["type"] = "hello";
    hello["role"] = controller_ == c->id() ? "controller" : "viewer";
    c->send(std::make_shared<const std::string>(hello.dump()), false);
  }

  void on_close(const ClientPtr& c) {
    clients_.erase(c->id());
    if (controller_ == c->id()) hand_over();
  }

  void hand_over() {
    controller_ = clients_.empty() ? -1 : clients_.begin()->first;
    if (controller_ >= 0) send_role(clients_.begin()->second);
  }

  void send_role(const ClientPtr& c) {
    const nlohmann::json j{{"v", kWireVersion}, {"type", "role"}, {"role", controller_ == c->id() ? "controller" : "viewer"}};
    c->send(std::make_shared<const std::string>(j.dump()), false);
  }

  void on_message(const ClientPtr& c, const std::string& text) {
    CommandMessage cmd;
    try {
      cmd = decode_command(text);
    } catch (const ProtocolError& e) {
      return c->send(std::make_shared<const std::string>(encode_error(e.what())), false);
    }
    if (controller_ != c->id()) {
      return c->send(std::make_shared<const std::string>(encode_error("viewer role: only the controller may send commands")),
                     false);
    }
    if (cmd.type == CommandType::Release) {
      // The role goes to the longest-connected other client.
      int next = -1;
      for (const auto& [id, other] : clients_) {
        if (id != c->id()) {
          next = id;
          break;
        }
      }
      controller_ = next;
      c->send(std::make_shared<const std::string>(encode_ack(cmd)), false);
      send_role(c);
      if (next >= 0) send_role(clients_[next]);
      return;
    }
    std::lock_guard<std::mutex> lock(queue_mutex_);
    queue_.push_back({c->id(), cmd});
  }

  void reply(int client, std::string text) {
    auto msg = std::make_shared<const std::string>(std::move(text));
    live_detail::net::post(ioc_, [this, client, msg] {
      const auto it = clients_.find(client);
      if (it != clients_.end()) it->second->send(msg, false);
    });
  }

  void broadcast(std::string text) {
    auto msg = std::make_shared<const std::string>(std::move(text));
    live_detail::net::post(ioc_, [this, msg] {
      for (auto& [id, c] : clients_) c->send(msg, true);
    });
  }

  // --- simulation thread ---

  void refresh_status() {
    nlohmann::json s{{"checkpoints", session_.checkpoint_list()},
                     {"active", {session_.active_checkpoint(0), session_.active_checkpoint(1)}},
                     {"paused", session_.paused()},
                     {"speed", session_.speed()},
                     {"step", session_.step()}};
    std::lock_guard<std::mutex> lock(status_mutex_);
    status_ = std::move(s);
  }

  void drain() {
    std::deque<Pending> work;
    {
      std::lock_guard<std::mutex> lock(queue_mutex_);
      work.swap(queue_);
    }
    for (const Pending& p : work) {
      try {
        session_.apply(p.command);
        reply(p.client, encode_ack(p.command));
      } catch (const ProtocolError& e) {
        reply(p.client, encode_error(e.what()));
      }
    }
    if (!work.empty()) refresh_status();
  }

  void sim_loop() {
    using clock = std::chrono::steady_clock;
    auto next = clock::now();
    while (running_) {
      drain();
      if (auto frame = session_.tick()) {
        broadcast(encode_frame(*frame));
        ++frames_sent_;
      }
      const auto period = std::chrono::duration<double>(1.0 / (session_.arena().config.control_hz * session_.speed()));
      next += std::chrono::duration_cast<clock::duration>(period);
      const auto now = clock::now();
      // After a stall, restart the schedule instead of bursting frames.
      if (next < now - std::chrono::milliseconds(200)) next = now;
      std::this_thread::sleep_until(next);
    }
  }

  LiveSession session_;
  live_detail::net::io_context ioc_;
  live_detail::tcp::acceptor acceptor_;
  std::map<int, ClientPtr> clients_;  // I/O thread only
  int controller_ = -1;               // I/O thread only
  int next_id_ = 0;
  std::mutex queue_mutex_;
  std::deque<Pending> queue_;
  std::mutex status_mutex_;
  nlohmann::json status_;
  std::atomic<bool> running_{false};
  std::mutex stop_mutex_;
  std::condition_variable stop_cv_;
  std::mutex join_mutex_;
  std::thread io_thread_;
  std::thread sim_thread_;
  std::atomic<std::int64_t> frames_sent_{0};
};

}  // namespace maaip
