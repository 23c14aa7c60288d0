#pragma once

#include "liverdiff/turing.hpp"

#include <memory>
#include <string>

namespace httplib {
class Server;
}

namespace liverdiff::turing {

inline constexpr const char* kAdminSecretHeader = "X-Admin-Secret";
inline constexpr const char* kAdminSecretEnv = "LIVERDIFF_ADMIN_SECRET";

/// HTTP front end for a Service.
///
///   POST /admin/publish                 (admin) test definition -> {"version"}
///   POST /sessions                      {"participant_id"} -> {"token"}
///   GET  /sessions/{token}/next         {"index", "total", "image_png_base64"} | {"complete"}
///   GET  /sessions/{token}/image        current item as image/png
///   POST /sessions/{token}/responses    {"index", "judgment"} -> {"ok", "next_index"}
///   GET  /admin/report[?format=csv][&include_incomplete=1]   (admin)
///
/// Admin routes compare the X-Admin-Secret header with the configured secret;
/// with an empty secret they are disabled.
class HttpServer {
 public:
  HttpServer(Service& service, std::string admin_secret);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds to an ephemeral port and returns it.
  int bind_any_port(const std::string& host = "127.0.0.1");
  bool bind(const std::string& host, int port);
  /// Blocks until stop().
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  void install_routes();
  Service& service_;
  std::string secret_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace liverdiff::turing
