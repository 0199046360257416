#pragma once

// Network transport for interactive sessions.
//
//   ws://host:port/session   one client at a time; JSON lines both ways
//   GET /report              last finished session report (JSON)
//   GET /report.csv          same report, table-shaped CSV
//
// Client commands: {"v":1,"cmd":"start","mode":"lockstep"|"realtime",...},
// {"cmd":"set_applied_force","force":F[,"t":T]}, {"cmd":"abort"},
// {"cmd":"advance_to_natural_hold"}. Every command is answered with a
// command_ack. In lockstep mode each set_applied_force is one sample at
// time t; in realtime mode the server samples at the session rate and slews
// toward the last commanded force.

#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>

#include <json.hpp>

#include "curvecal/session.hpp"

namespace curvecal {

struct ServiceConfig {
  std::string address = "127.0.0.1";
  unsigned short port = 8765;  // 0 picks a free port
};

/// Builds a fresh runner from the start command's arguments.
using SessionFactory = std::function<std::unique_ptr<SessionRunner>(const nlohmann::json& start)>;

class SessionService {
 public:
  SessionService(ServiceConfig cfg, SessionFactory factory, std::ostream* log = nullptr);
  ~SessionService();
  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  /// Binds and starts serving on a background thread; returns the port.
  unsigned short start();
  void stop();
  /// Blocks until stop() is called from another thread or a signal handler.
  void wait();

  unsigned short port() const { return port_; }
  std::optional<SessionReport> last_report() const;

  struct Impl;

 private:
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  unsigned short port_ = 0;
};

/// Parses one client command line; throws FormatError on malformed input.
nlohmann::json parse_command(const std::string& line);

}  // namespace curvecal
