#pragma once

// HTTP routing for Service.

#include <memory>
#include <string>
#include <thread>

#include "coach/error.hpp"
#include "coach/service/api.hpp"
#include "httplib.h"

namespace coach::service {

class HttpServer {
 public:
  explicit HttpServer(std::shared_ptr<Service> service) : service_(std::move(service)) {
    if (!service_) throw ContractViolation("HttpServer: no service");
    routes();
  }

  ~HttpServer() { stop(); }

  // Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    port_ = bound;
    return bound;
  }

  void listen() { server_.listen_after_bind(); }

  // listen() on a background thread; returns once the server accepts.
  void start() {
    thread_ = std::thread([this] { listen(); });
    server_.wait_until_ready();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  static void send(httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  }

  void routes() {
    auto svc = service_;
    server_.Get("/scenes", [svc](const httplib::Request&, httplib::Response& res) { send(res, svc->scenes()); });
    server_.Post("/sessions", [svc](const httplib::Request& req, httplib::Response& res) {
      send(res, svc->create_session(req.body));
    });
    server_.Get(R"(/sessions/([^/]+))", [svc](const httplib::Request& req, httplib::Response& res) {
      send(res, svc->session(req.matches[1]));
    });
    server_.Post(R"(/sessions/([^/]+)/messages)", [svc](const httplib::Request& req, httplib::Response& res) {
      send(res, svc->post_message(req.matches[1], req.body));
    });
    server_.Post(R"(/sessions/([^/]+)/hint)", [svc](const httplib::Request& req, httplib::Response& res) {
      send(res, svc->hint(req.matches[1]));
    });
    server_.Post(R"(/sessions/([^/]+)/close)", [svc](const httplib::Request& req, httplib::Response& res) {
      send(res, svc->close(req.matches[1], req.body));
    });
    server_.Get(R"(/sessions/([^/]+)/score)", [svc](const httplib::Request& req, httplib::Response& res) {
      send(res, svc->score(req.matches[1]));
    });
    server_.Get("/metrics", [svc](const httplib::Request&, httplib::Response& res) { send(res, svc->metrics()); });
    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      ApiError err{ApiCode::Internal, "unknown error"};
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        err = classify(e);
      } catch (...) {
      }
      send(res, {http_status(err.code), err.to_json()});
    });
    server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (!res.body.empty()) return;
      const ApiError err{res.status == 404 ? ApiCode::NotFound : ApiCode::BadRequest, "no such endpoint"};
      res.set_content(err.to_json().dump(), "application/json");
    });
  }

  std::shared_ptr<Service> service_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace coach::service
