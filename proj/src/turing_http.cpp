#include "liverdiff/turing_http.hpp"

#include <httplib.h>


namespace liverdiff::turing {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, {{"error", message}});
}

bool secrets_equal(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff |= static_cast<unsigned char>(a[i] ^ b[i]);
  return diff == 0;
}

}  // namespace

HttpServer::HttpServer(Service& service, std::string admin_secret)
    : service_(service), secret_(std::move(admin_secret)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
  auto& srv = *server_;
  const auto admin_ok = [this](const httplib::Request& req, httplib::Response& res) {
    if (secret_.empty()) {
      send_error(res, 403, "admin endpoints are disabled");
      return false;
    }
    if (!secrets_equal(req.get_header_value(kAdminSecretHeader), secret_)) {
      send_error(res, 401, "unauthorized");
      return false;
    }
    return true;
  };

  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const UnknownToken& e) {
      send_error(res, 404, e.what());
    } catch (const Conflict& e) {
      send_error(res, 409, e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, std::string("malformed request: ") + e.what());
    } catch (const std::invalid_argument& e) {
      send_error(res, 422, e.what());
    } catch (const std::logic_error& e) {
      send_error(res, 409, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  });

  srv.Post("/admin/publish", [this, admin_ok](const httplib::Request& req, httplib::Response& res) {
    if (!admin_ok(req, res)) return;
    const auto version = service_.publish(definition_from_json(nlohmann::json::parse(req.body)));
    send_json(res, 200, {{"version", version}});
  });

  srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    send_json(res, 201, {{"token", service_.create_session(body.at("participant_id").get<std::string>())}});
  });

  srv.Get(R"(/sessions/([0-9a-f]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, service_.next_item(req.matches[1]));
  });

  srv.Get(R"(/sessions/([0-9a-f]+)/image)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto png = service_.current_png(req.matches[1]);
    if (!png) {
      send_error(res, 404, "session complete");
      return;
    }
    res.set_content(*png, "image/png");
  });

  srv.Post(R"(/sessions/([0-9a-f]+)/responses)", [this](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    const int index = body.at("index").get<int>();
    service_.submit_response(req.matches[1], index, judgment_from_string(body.at("judgment").get<std::string>()));
    send_json(res, 200, {{"ok", true}, {"next_index", index + 1}, {"complete", index + 1 == kTestLength}});
  });

  srv.Get("/admin/report", [this, admin_ok](const httplib::Request& req, httplib::Response& res) {
    if (!admin_ok(req, res)) return;
    const bool incomplete = req.has_param("include_incomplete") && req.get_param_value("include_incomplete") == "1";
    const auto rep = service_.report(incomplete);
    if (req.has_param("format") && req.get_param_value("format") == "csv") {
      res.set_content(report_csv(rep), "text/csv");
      return;
    }
    send_json(res, 200, to_json(rep));
  });
}

int HttpServer::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }
bool HttpServer::bind(const std::string& host, int port) { return server_->bind_to_port(host, port); }
bool HttpServer::listen_after_bind() { return server_->listen_after_bind(); }
void HttpServer::stop() {
  if (server_) server_->stop();
}
void HttpServer::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace liverdiff::turing
