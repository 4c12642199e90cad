#pragma once

#include "coadapt/session.hpp"
#include "coadapt/websocket.hpp"

#include <fcntl.h>

#include <filesystem>
#include <fstream>
#include <list>

namespace coadapt {

enum class RobotPolicyKind { fixed, dammrl };

inline RobotPolicyKind robot_policy_from_string(const std::string& s) {
  if (s == "fixed") return RobotPolicyKind::fixed;
  if (s == "dammrl") return RobotPolicyKind::dammrl;
  throw ConfigInvalid("unknown robot policy '" + s + "' (expected fixed or dammrl)");
}

struct ServiceConfig {
  ws::Endpoint bind{"127.0.0.1", 8765};
  AppConfig app;
  RobotPolicyKind robot_policy = RobotPolicyKind::fixed;
  std::string checkpoint;
  std::string pressure_source;
  PressureThresholds pressure;
  std::string ui_dir;
  std::string out_dir = "runs/sessions";
  SessionOptions session;
};

inline std::string content_type(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".html") return "text/html; charset=utf-8";
  if (ext == ".js" || ext == ".mjs") return "text/javascript";
  if (ext == ".css") return "text/css";
  if (ext == ".json" || ext == ".map") return "application/json";
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".ico") return "image/x-icon";
  if (ext == ".wasm") return "application/wasm";
  return "application/octet-stream";
}

inline std::string http_response(int status, const std::string& reason, const std::string& type,
                                 const std::string& body) {
  return "HTTP/1.1 " + std::to_string(status) + " " + reason + "\r\nContent-Type: " + type +
         "\r\nContent-Length: " + std::to_string(body.size()) + "\r\nConnection: close\r\n\r\n" + body;
}

// Maps a request path into ui_dir; empty when it escapes the directory or does not exist.
inline std::optional<std::filesystem::path> static_file(const std::string& ui_dir, std::string path) {
  namespace fs = std::filesystem;
  if (ui_dir.empty()) return std::nullopt;
  path = path.substr(0, path.find_first_of("?#"));
  if (path.empty() || path == "/") path = "/index.html";
  const fs::path root = fs::weakly_canonical(ui_dir);
  const fs::path full = fs::weakly_canonical(root / fs::path(path).relative_path());
  const auto rel = full.lexically_relative(root);
  if (rel.empty() || *rel.begin() == "..") return std::nullopt;
  if (!fs::is_regular_file(full)) return std::nullopt;
  return full;
}

// WebSocket session service: one live episode per connection.
class Service {
public:
  explicit Service(ServiceConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.app.world.validate();
    cfg_.pressure.validate();
    if (cfg_.robot_policy == RobotPolicyKind::dammrl) {
      if (cfg_.checkpoint.empty()) throw MissingCheckpoint("--robot-policy dammrl needs --checkpoint");
      learner_ = std::make_shared<const DualAgentLearner>(
          DualAgentLearner::from_checkpoint(cfg_.checkpoint, cfg_.app.learner));
    }
    if (!cfg_.ui_dir.empty() && !std::filesystem::is_directory(cfg_.ui_dir))
      throw std::runtime_error("ui directory not found: " + cfg_.ui_dir);
    if (!cfg_.pressure_source.empty() && !std::filesystem::exists(cfg_.pressure_source))
      throw std::runtime_error("pressure source not found: " + cfg_.pressure_source);
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;
  ~Service() { stop(); }

  // Binds and starts accepting; returns the bound port.
  int start() {
    listener_ = ws::listen_tcp(cfg_.bind);
    port_ = ws::bound_port(listener_);
    std::filesystem::create_directories(cfg_.out_dir);
    running_ = true;
    accept_thread_ = std::thread([this] { accept_loop(); });
    if (!cfg_.pressure_source.empty()) pressure_thread_ = std::thread([this] { pressure_loop(); });
    return port_;
  }

  void stop() {
    if (!running_.exchange(false)) return;
    listener_.shutdown();
    {
      std::lock_guard lock(mu_);
      for (auto& c : conns_) {
        if (c->session) c->session->request_stop();
        if (c->ws) c->ws->shutdown();
      }
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    if (pressure_thread_.joinable()) pressure_thread_.join();
    std::list<std::unique_ptr<Conn>> conns;
    {
      std::lock_guard lock(mu_);
      conns.swap(conns_);
    }
    for (auto& c : conns)
      if (c->thread.joinable()) c->thread.join();
    listener_.close();
  }

  // Blocks until stop() is called from elsewhere (e.g. a signal watcher).
  void wait() {
    std::unique_lock lock(mu_);
    stopped_cv_.wait(lock, [this] { return !running_; });
  }

  void notify_stopped() {
    stop();
    stopped_cv_.notify_all();
  }

  int port() const { return port_; }

  ModelPosterior posterior() const {
    std::lock_guard lock(mu_);
    return posterior_;
  }

  std::vector<std::string> trace_paths() const {
    std::lock_guard lock(mu_);
    return traces_;
  }

private:
  struct Conn {
    std::unique_ptr<ws::Connection> ws;
    std::shared_ptr<LiveSession> session;
    std::thread thread;
  };

  RobotChooser robot() const {
    if (cfg_.robot_policy == RobotPolicyKind::dammrl) return dammrl_robot(learner_);
    return fixed_robot(cfg_.app.env.fixed_model.j);
  }

  void accept_loop() {
    while (running_) {
      const int fd = ::accept(listener_.fd(), nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        break;
      }
      ws::Socket s(fd);
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      auto c = std::make_unique<Conn>();
      Conn* raw = c.get();
      std::lock_guard lock(mu_);
      if (!running_) break;
      conns_.push_back(std::move(c));
      raw->thread = std::thread([this, raw, sock = std::move(s)]() mutable { handle(raw, std::move(sock)); });
    }
  }

  void handle(Conn* c, ws::Socket sock) {
    std::string rest;
    ws::HttpRequest req;
    try {
      auto head = ws::read_http_head(sock);
      rest = std::move(head.second);
      req = ws::parse_http_request(head.first);
    } catch (const std::exception&) {
      return;
    }
    if (!req.is_websocket_upgrade()) {
      serve_static(sock, req);
      return;
    }
    try {
      sock.send_all(ws::handshake_response(req.header("sec-websocket-key")));
    } catch (const ws::SocketError&) {
      return;
    }
    {
      std::lock_guard lock(mu_);
      c->ws = std::make_unique<ws::Connection>(std::move(sock), false, rest);
    }
    run_session(c);
  }

  void serve_static(ws::Socket& sock, const ws::HttpRequest& req) {
    try {
      const auto file = req.method == "GET" ? static_file(cfg_.ui_dir, req.path) : std::nullopt;
      if (!file) {
        sock.send_all(http_response(404, "Not Found", "text/plain", "not found\n"));
        return;
      }
      std::ifstream in(*file, std::ios::binary);
      std::string body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      sock.send_all(http_response(200, "OK", content_type(*file), body));
    } catch (const std::exception&) {
    }
  }

  void run_session(Conn* c) {
    auto& conn = *c->ws;
    auto send = [&conn](const nlohmann::json& j) {
      try {
        conn.send_text(j.dump());
      } catch (const ws::SocketError&) {
      }
    };

    std::string id;
    std::shared_ptr<LiveSession> session;
    try {
      std::lock_guard lock(mu_);
      id = "s" + std::to_string(++session_counter_);
      EpisodeConfig env = cfg_.app.env;
      env.seed = cfg_.app.experiment.seed_base + session_counter_;
      session = std::make_shared<LiveSession>(id, cfg_.app.world, env, robot(), cfg_.session);
      c->session = session;
      active_ = session;
    } catch (const std::exception& e) {
      send(error_frame("session_failed", e.what()));
      conn.send_close(1011);
      return;
    }
    send(notice_frame("session_started", id));

    std::thread sim([this, session, send, id] {
      const auto trace = session->run(send);
      const auto path = (std::filesystem::path(cfg_.out_dir) / ("session_" + id + ".jsonl")).string();
      try {
        write_trace(path, trace);
      } catch (const std::exception& e) {
        send(error_frame("trace_write_failed", e.what()));
      }
      {
        std::lock_guard lock(mu_);
        traces_.push_back(path);
        if (!trace.summary.aborted)
          posterior_.update({modal_model(trace, cfg_.app.env.initial_model), trace.summary.success,
                             trace.summary.total_reward});
      }
      send({{"v", kProtocolVersion},
            {"type", "episode_end"},
            {"session", id},
            {"trace", path},
            {"summary", to_json(trace.summary)}});
    });

    for (;;) {
      std::optional<std::string> msg;
      try {
        msg = conn.receive();
      } catch (const ws::ProtocolError& e) {
        send(error_frame("protocol", e.what()));
        conn.send_close(1002);
        break;
      }
      if (!msg) break;
      try {
        const auto cmd = parse_command(nlohmann::json::parse(*msg));
        if (session->mode() == SessionMode::finished) {
          send(error_frame("session_finished", "episode already ended; command discarded"));
        } else if (session->submit(cmd)) {
          send(notice_frame("command_overwritten", "an unread command was replaced by the newer one"));
        }
      } catch (const nlohmann::json::parse_error&) {
        send(error_frame("malformed", "frame is not valid JSON; discarded"));
      } catch (const FormatError& e) {
        send(error_frame("malformed", std::string(e.what()) + "; discarded"));
      }
    }
    session->request_stop();
    sim.join();
    conn.shutdown();
  }

  // Edge commands from the sensor stream go to the most recent live session.
  void pressure_loop() {
    const int fd = ::open(cfg_.pressure_source.c_str(), O_RDONLY | O_NONBLOCK);
    if (fd < 0) return;
    ws::Socket src(fd);
    PressureAdapter adapter(cfg_.pressure);
    std::string buf;
    while (running_) {
      pollfd p{fd, POLLIN, 0};
      const int r = ::poll(&p, 1, 100);
      if (r <= 0) continue;
      char chunk[1024];
      const auto n = ::read(fd, chunk, sizeof chunk);
      if (n == 0) {
        // regular files end; pipes and devices may deliver more later
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
        continue;
      }
      if (n < 0) {
        if (errno == EAGAIN || errno == EINTR) continue;
        break;
      }
      buf.append(chunk, static_cast<std::size_t>(n));
      std::size_t nl;
      while ((nl = buf.find('\n')) != std::string::npos) {
        const auto line = buf.substr(0, nl);
        buf.erase(0, nl + 1);
        if (auto cmd = adapter.feed_line(line)) {
          std::lock_guard lock(mu_);
          if (auto s = active_.lock(); s && s->mode() != SessionMode::finished) s->submit(*cmd);
        }
      }
    }
  }

  ServiceConfig cfg_;
  std::shared_ptr<const DualAgentLearner> learner_;
  ws::Socket listener_;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::thread accept_thread_;
  std::thread pressure_thread_;
  mutable std::mutex mu_;
  std::condition_variable stopped_cv_;
  std::list<std::unique_ptr<Conn>> conns_;
  std::weak_ptr<LiveSession> active_;
  ModelPosterior posterior_;
  std::vector<std::string> traces_;
  long long session_counter_ = 0;
};

}  // namespace coadapt
