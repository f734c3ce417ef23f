#include "toxgate/service.hpp"

namespace toxgate::service {

using nlohmann::json;

namespace {

void reply_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

}  // namespace

void install_routes(httplib::Server& server, const pipeline::Detector& detector) {
  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("ok", "text/plain");
  });

  server.Post("/v1/detect", [&detector](const httplib::Request& req, httplib::Response& res) {
    std::string text;
    try {
      const json body = json::parse(req.body);
      if (!body.is_object() || !body.contains("text") || !body.at("text").is_string()) {
        return reply_error(res, 400, "body must be an object with a string field \"text\"");
      }
      text = body.at("text").get<std::string>();
    } catch (const json::exception&) {
      return reply_error(res, 400, "body is not valid JSON");
    }
    if (text.empty()) return reply_error(res, 400, "text is empty");

    try {
      res.set_content(pipeline::to_json(detector.detect(text)).dump(), "application/json");
    } catch (const TransportError& e) {
      reply_error(res, 503, e.what());
    } catch (const embed::CapacityError& e) {
      reply_error(res, 413, e.what());
    } catch (const std::exception& e) {
      reply_error(res, 500, e.what());
    }
  });
}

}  // namespace toxgate::service
