#include "curvecal/service.hpp"

#include <csignal>
#include <deque>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include "curvecal/errors.hpp"

namespace curvecal {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;
using nlohmann::json;

nlohmann::json parse_command(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw FormatError("command must be a JSON object");
  if (j.contains("v") && j["v"] != kProtocolVersion) throw FormatError("unsupported protocol version");
  if (!j.contains("cmd") || !j["cmd"].is_string()) throw FormatError("missing string field 'cmd'");
  return j;
}

struct SessionService::Impl {
  Impl(ServiceConfig c, SessionFactory f, std::ostream* l)
      : cfg(std::move(c)), factory(std::move(f)), log(l) {}

  void note(const std::string& line) {
    if (!log) return;
    std::lock_guard lock(mu);
    *log << line << std::endl;
  }

  void accept();

  ServiceConfig cfg;
  SessionFactory factory;
  std::ostream* log;
  net::io_context ioc;
  tcp::acceptor acceptor{ioc};
  std::optional<net::signal_set> signals;
  bool client_connected = false;  // io thread only

  mutable std::mutex mu;
  bool in_progress = false;
  std::optional<SessionReport> report;
};

namespace {

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, SessionService::Impl& svc)
      : ws_(std::move(socket)), svc_(svc), ticker_(ws_.get_executor()) {}

  void run(http::request<http::string_body> req) {
    ws_.text(true);
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) {
        self->close_out("handshake failed: " + ec.message());
        return;
      }
      self->svc_.note("client connected");
      self->do_read();
    });
  }

 private:
  void do_read() {
    ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      self->on_read(ec);
    });
  }

  void on_read(beast::error_code ec) {
    if (ec) {
      close_out(ec == websocket::error::closed ? "client closed" : "client lost: " + ec.message());
      return;
    }
    const std::string text = beast::buffers_to_string(in_.data());
    in_.consume(in_.size());
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t nl = text.find('\n', pos);
      if (nl == std::string::npos) nl = text.size();
      const std::string line = text.substr(pos, nl - pos);
      if (line.find_first_not_of(" \t\r") != std::string::npos) handle_line(line);
      pos = nl + 1;
    }
    do_read();
  }

  void handle_line(const std::string& line) {
    std::string name;
    json cmd;
    try {
      cmd = parse_command(line);
      name = cmd["cmd"].get<std::string>();
    } catch (const std::exception& e) {
      ack(name, cmd, false, e.what());
      return;
    }
    try {
      if (name == "start") {
        start(cmd);
        return;
      }
      if (!runner_) throw ProtocolError("session not started");
      if (name == "set_applied_force") {
        set_force(cmd);
      } else if (name == "abort") {
        auto msgs = runner_->abort(cmd.value("reason", std::string("operator abort")));
        ack(name, cmd, true);
        emit(std::move(msgs));
        after_step();
      } else if (name == "advance_to_natural_hold") {
        auto msgs = runner_->advance_to_natural_hold();
        ack(name, cmd, true);
        emit(std::move(msgs));
        after_step();
      } else {
        throw ProtocolError("unknown command '" + name + "'");
      }
    } catch (const std::exception& e) {
      ack(name, cmd, false, e.what());
    }
  }

  void start(const json& cmd) {
    if (runner_) throw ProtocolError("session already started");
    const std::string mode = cmd.value("mode", std::string("lockstep"));
    if (mode != "lockstep" && mode != "realtime") throw ProtocolError("unknown mode '" + mode + "'");
    runner_ = svc_.factory(cmd);
    if (!runner_) throw Error("session factory returned no runner");
    realtime_ = mode == "realtime";
    {
      std::lock_guard lock(svc_.mu);
      svc_.in_progress = true;
    }
    svc_.note("session started (" + mode + ")");
    ack("start", cmd, true);
    if (realtime_) {
      deadline_ = std::chrono::steady_clock::now();
      tick();
    }
  }

  void set_force(const json& cmd) {
    const double force = cmd.at("force").get<double>();
    if (!std::isfinite(force) || force < 0.0) throw DomainError("force must be finite and >= 0");
    if (realtime_) {
      commanded_ = force;
      ack("set_applied_force", cmd, true);
      return;
    }
    const double dt = 1.0 / runner_->spec().sample_rate;
    const double t = cmd.contains("t") ? cmd["t"].get<double>()
                                       : (runner_->state().last_t ? *runner_->state().last_t + dt : 0.0);
    auto msgs = runner_->push(t, force);
    ack("set_applied_force", cmd, true);
    emit(std::move(msgs));
    after_step();
  }

  void tick() {
    if (closed_ || !runner_ || runner_->finished()) return;
    const SessionSpec& spec = runner_->spec();
    const double dt = 1.0 / spec.sample_rate;
    applied_ = slew_limit(applied_, commanded_, spec.slew_rate, dt);
    try {
      emit(runner_->push(static_cast<double>(ticks_) * dt, applied_));
    } catch (const std::exception& e) {
      svc_.note(std::string("tick failed: ") + e.what());
    }
    ++ticks_;
    after_step();
    if (runner_->finished()) return;
    deadline_ += std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(dt));
    ticker_.expires_at(deadline_);
    ticker_.async_wait([self = shared_from_this()](beast::error_code ec) {
      if (!ec) self->tick();
    });
  }

  void after_step() {
    if (!runner_ || reported_ || !runner_->finished()) return;
    reported_ = true;
    SessionReport rep = runner_->report();
    svc_.note(rep.aborted ? "session aborted: " + rep.abort_reason : "session done");
    std::lock_guard lock(svc_.mu);
    svc_.report = std::move(rep);
    svc_.in_progress = false;
  }

  void ack(const std::string& name, const json& cmd, bool ok, const std::string& error = {}) {
    StreamMessage m;
    m.kind = MessageKind::command_ack;
    m.t = runner_ ? runner_->last_time() : 0.0;
    m.payload = {{"cmd", name}, {"ok", ok}};
    if (cmd.is_object() && cmd.contains("id")) m.payload["id"] = cmd["id"];
    if (!ok) m.payload["error"] = error;
    emit({m});
  }

  void emit(std::vector<StreamMessage> msgs) {
    for (auto& m : msgs) {
      m.seq = seq_++;
      send(to_json(m).dump() + "\n");
    }
  }

  void send(std::string text) {
    if (closed_) return;
    outbox_.push_back(std::move(text));
    if (outbox_.size() == 1) do_write();
  }

  void do_write() {
    ws_.async_write(net::buffer(outbox_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      if (ec) return;
                      self->outbox_.pop_front();
                      if (!self->outbox_.empty() && !self->closed_) self->do_write();
                    });
  }

  void close_out(const std::string& why) {
    if (closed_) return;
    closed_ = true;
    ticker_.cancel();
    if (runner_ && !runner_->finished()) {
      runner_->abort("client disconnected");
      after_step();
    }
    svc_.note(why);
    svc_.client_connected = false;
    std::lock_guard lock(svc_.mu);
    svc_.in_progress = false;
  }

  websocket::stream<beast::tcp_stream> ws_;
  SessionService::Impl& svc_;
  net::steady_timer ticker_;
  beast::flat_buffer in_;
  std::deque<std::string> outbox_;
  std::unique_ptr<SessionRunner> runner_;
  bool realtime_ = false;
  bool reported_ = false;
  bool closed_ = false;
  double commanded_ = 0.0;
  double applied_ = 0.0;
  long long ticks_ = 0;
  std::uint64_t seq_ = 0;
  std::chrono::steady_clock::time_point deadline_;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket socket, SessionService::Impl& svc)
      : stream_(std::move(socket)), svc_(svc) {}

  void run() {
    http::async_read(stream_, buf_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       if (!ec) self->on_request();
                     });
  }

 private:
  void on_request() {
    const std::string target(req_.target());
    if (websocket::is_upgrade(req_)) {
      if (target != "/session") {
        respond(http::status::not_found, "application/json", R"({"error":"no such endpoint"})");
        return;
      }
      if (svc_.client_connected) {
        svc_.note("rejected second client");
        respond(http::status::conflict, "application/json",
                R"({"error":"a client is already connected"})");
        return;
      }
      svc_.client_connected = true;
      std::make_shared<WsSession>(stream_.release_socket(), svc_)->run(std::move(req_));
      return;
    }
    if (req_.method() != http::verb::get) {
      respond(http::status::method_not_allowed, "application/json", R"({"error":"GET only"})");
      return;
    }
    if (target != "/report" && target != "/report.csv") {
      respond(http::status::not_found, "application/json", R"({"error":"no such endpoint"})");
      return;
    }
    std::unique_lock lock(svc_.mu);
    if (svc_.in_progress) {
      lock.unlock();
      respond(http::status::conflict, "application/json", R"({"error":"session in progress"})");
    } else if (!svc_.report) {
      lock.unlock();
      respond(http::status::not_found, "application/json", R"({"error":"no session report yet"})");
    } else if (target == "/report") {
      std::string body = svc_.report->to_json().dump(2) + "\n";
      lock.unlock();
      respond(http::status::ok, "application/json", std::move(body));
    } else {
      std::string body = svc_.report->to_csv();
      lock.unlock();
      respond(http::status::ok, "text/csv", std::move(body));
    }
  }

  void respond(http::status status, const char* type, std::string body) {
    auto res = std::make_shared<http::response<http::string_body>>(status, req_.version());
    res->set(http::field::content_type, type);
    res->set(http::field::access_control_allow_origin, "*");
    res->keep_alive(false);
    res->body() = std::move(body);
    res->prepare_payload();
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code, std::size_t) {
      beast::error_code ignored;
      self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
    });
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buf_;
  http::request<http::string_body> req_;
  SessionService::Impl& svc_;
};

}  // namespace

void SessionService::Impl::accept() {
  acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
    if (!ec) std::make_shared<HttpConnection>(std::move(socket), *this)->run();
    if (acceptor.is_open()) accept();
  });
}

SessionService::SessionService(ServiceConfig cfg, SessionFactory factory, std::ostream* log)
    : impl_(std::make_unique<Impl>(std::move(cfg), std::move(factory), log)) {
  if (!impl_->factory) throw UsageError("session service needs a session factory");
}

SessionService::~SessionService() { stop(); }

unsigned short SessionService::start() {
  if (thread_.joinable()) throw UsageError("service already running");
  beast::error_code ec;
  const auto address = net::ip::make_address(impl_->cfg.address, ec);
  if (ec) throw ConfigError("invalid bind address '" + impl_->cfg.address + "'");
  const tcp::endpoint endpoint(address, impl_->cfg.port);
  auto& acc = impl_->acceptor;
  acc.open(endpoint.protocol());
  acc.set_option(net::socket_base::reuse_address(true));
  acc.bind(endpoint, ec);
  if (ec) {
    acc.close();
    throw ConfigError("cannot bind " + impl_->cfg.address + ":" + std::to_string(impl_->cfg.port) +
                      ": " + ec.message());
  }
  acc.listen();
  port_ = acc.local_endpoint().port();
  impl_->accept();
  thread_ = std::thread([this] { impl_->ioc.run(); });
  impl_->note("listening on " + impl_->cfg.address + ":" + std::to_string(port_));
  return port_;
}

void SessionService::stop() {
  impl_->ioc.stop();
  if (thread_.joinable()) thread_.join();
}

void SessionService::wait() {
  net::post(impl_->ioc, [this] {
    impl_->signals.emplace(impl_->ioc, SIGINT, SIGTERM);
    impl_->signals->async_wait([this](beast::error_code, int) { impl_->ioc.stop(); });
  });
  if (thread_.joinable()) thread_.join();
}

std::optional<SessionReport> SessionService::last_report() const {
  std::lock_guard lock(impl_->mu);
  return impl_->report;
}

}  // namespace curvecal
