#include <httplib.h>

#include "evad/error.hpp"
#include "evad/textio.hpp"
#include "evad/triage.hpp"

namespace evad {

using nlohmann::json;

struct TriageServer::Impl {
  TriageService& service;
  std::size_t default_limit;
  httplib::Server server;

  Impl(TriageService& s, std::size_t limit) : service(s), default_limit(limit) { routes(); }

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <class F>
  static httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const NotFoundError& e) {
        reply(res, 404, {{"error", e.what()}});
      } catch (const ConflictError& e) {
        reply(res, 409, {{"error", e.what()}});
      } catch (const Error& e) {
        reply(res, 400, {{"error", e.what()}});
      } catch (const json::exception& e) {
        reply(res, 400, {{"error", std::string("bad request body: ") + e.what()}});
      } catch (const std::exception& e) {
        reply(res, 500, {{"error", e.what()}});
      }
    };
  }

  static int window_param(const httplib::Request& req) {
    try {
      return static_cast<int>(textio::parse_int(req.matches[1].str()));
    } catch (const DataError&) {
      throw DataError("window must be an integer, got '" + req.matches[1].str() + "'");
    }
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server.Get("/v1/windows", guarded([this](const httplib::Request&, httplib::Response& res) {
      json list = json::array();
      for (const auto& w : service.list_windows()) list.push_back(to_json(w));
      reply(res, 200, {{"windows", list}});
    }));

    server.Get(R"(/v1/windows/([^/]+)/anomalies)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const int window = window_param(req);
      std::size_t limit = default_limit;
      if (req.has_param("limit")) {
        const auto v = textio::parse_int(req.get_param_value("limit"));
        if (v < 0) throw DataError("limit must be non-negative");
        limit = static_cast<std::size_t>(v);
      }
      json items = json::array();
      for (const auto& it : service.top_anomalies(window, limit)) items.push_back(to_json(it));
      reply(res, 200, {{"window", window}, {"items", items}});
    }));

    server.Post(R"(/v1/windows/([^/]+)/verdicts)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const int window = window_param(req);
      const auto body = json::parse(req.body);
      if (!body.is_object() || !body.contains("event_id") || !body.contains("verdict"))
        throw DataError("body needs event_id and verdict");
      const auto id = body.at("event_id").get<std::uint64_t>();
      const auto verdict = parse_verdict(body.at("verdict").get<std::string>());
      const auto note = body.value("note", std::string());
      reply(res, 200, to_json(service.submit_verdict(window, id, verdict, note)));
    }));

    server.Post(R"(/v1/windows/([^/]+)/retrain)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, to_json(service.trigger_retrain(window_param(req))));
    }));

    server.Get("/v1/journal", guarded([this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, {{"entries", service.journal()}});
    }));
  }
};

TriageServer::TriageServer(TriageService& service, std::size_t default_limit)
    : impl_(std::make_unique<Impl>(service, default_limit)) {}

TriageServer::~TriageServer() { stop(); }

bool TriageServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int TriageServer::bind_any(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool TriageServer::run() { return impl_->server.listen_after_bind(); }

void TriageServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace evad
