#pragma once

// Minimal blocking clients for the session service, used by tests only.

#include <string>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>

namespace curvecal::testing {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

class WsClient {
 public:
  explicit WsClient(unsigned short port) : ws_(ioc_) {
    tcp::resolver resolver(ioc_);
    net::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/session");
    ws_.text(true);
  }

  void send(const nlohmann::json& j) { send_raw(j.dump() + "\n"); }
  void send_raw(const std::string& text) { ws_.write(net::buffer(text)); }

  nlohmann::json receive() {
    beast::flat_buffer buf;
    ws_.read(buf);
    return nlohmann::json::parse(beast::buffers_to_string(buf.data()));
  }

  /// Reads until a command_ack arrives; returns every message read.
  std::vector<nlohmann::json> until_ack() {
    std::vector<nlohmann::json> out;
    for (;;) {
      out.push_back(receive());
      if (out.back()["kind"] == "command_ack") return out;
    }
  }

  void close() { ws_.close(websocket::close_code::normal); }
  void drop() {
    beast::error_code ec;
    ws_.next_layer().shutdown(tcp::socket::shutdown_both, ec);
    ws_.next_layer().close(ec);
  }

 private:
  net::io_context ioc_;
  websocket::stream<tcp::socket> ws_;
};

struct HttpReply {
  int status = 0;
  std::string body;
};

inline HttpReply http_get(unsigned short port, const std::string& target) {
  net::io_context ioc;
  tcp::socket sock(ioc);
  tcp::resolver resolver(ioc);
  net::connect(sock, resolver.resolve("127.0.0.1", std::to_string(port)));
  http::request<http::empty_body> req(http::verb::get, target, 11);
  req.set(http::field::host, "127.0.0.1");
  http::write(sock, req);
  beast::flat_buffer buf;
  http::response<http::string_body> res;
  http::read(sock, buf, res);
  return {static_cast<int>(res.result_int()), res.body()};
}

/// Sends a bare WebSocket upgrade request and returns the HTTP status
/// (101 when accepted).
inline int try_upgrade(unsigned short port) {
  net::io_context ioc;
  tcp::socket sock(ioc);
  tcp::resolver resolver(ioc);
  net::connect(sock, resolver.resolve("127.0.0.1", std::to_string(port)));
  http::request<http::empty_body> req(http::verb::get, "/session", 11);
  req.set(http::field::host, "127.0.0.1");
  req.set(http::field::upgrade, "websocket");
  req.set(http::field::connection, "upgrade");
  req.set(http::field::sec_websocket_key, "dGhlIHNhbXBsZSBub25jZQ==");
  req.set(http::field::sec_websocket_version, "13");
  http::write(sock, req);
  beast::flat_buffer buf;
  http::response_parser<http::empty_body> parser;
  parser.skip(true);  // 101 carries no body
  beast::error_code ec;
  http::read_header(sock, buf, parser, ec);
  return static_cast<int>(parser.get().result_int());
}

}  // namespace curvecal::testing
