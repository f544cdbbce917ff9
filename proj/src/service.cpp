#include "verisieve/service.hpp"

#include <httplib.h>

#include "verisieve/io.hpp"

namespace verisieve {

namespace {

using io::json;

ServiceResponse reply(int status, const json& body) { return {status, body.dump()}; }

ServiceResponse error_reply(int status, const std::string& message) {
  return reply(status, json{{"error", message}});
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownIdentity:
      return 404;
    case ErrorCode::DuplicateIdentity:
      return 409;
    case ErrorCode::DimensionMismatch:
    case ErrorCode::NonFiniteValue:
    case ErrorCode::EmptyEnrollment:
      return 422;
    default:
      return 400;
  }
}

std::string required_id(const json& doc) {
  if (!doc.contains("id") || !doc["id"].is_string()) {
    throw Error(ErrorCode::MalformedDocument, "request needs a string 'id'");
  }
  return doc["id"].get<std::string>();
}

Vector required_embedding(const json& doc) {
  if (!doc.contains("embedding")) {
    throw Error(ErrorCode::MalformedDocument, "request needs an 'embedding' array");
  }
  return io::vector_from_json(doc["embedding"]);
}

}  // namespace

struct VerificationService::Impl {
  Gallery& gallery;
  ServiceOptions options;
  httplib::Server server;

  Impl(Gallery& g, ServiceOptions o) : gallery(g), options(o) {}

  ServiceResponse enroll(const json& doc) const {
    gallery.enroll(required_id(doc), {required_embedding(doc)});
    return reply(201, json{{"enrolled", doc["id"]}, {"identities", gallery.size()}});
  }

  ServiceResponse verify(const json& doc) const {
    const auto decision = gallery.verify(required_id(doc), required_embedding(doc));
    return reply(200, io::decision_to_json(decision, !options.blackbox));
  }

  ServiceResponse scan(const json& doc) const {
    json hits = json::array();
    for (const auto& h : gallery.scan(required_embedding(doc))) {
      hits.push_back({{"id", h.id}, {"distance", h.distance}});
    }
    return reply(200, json{{"hits", std::move(hits)}});
  }

  ServiceResponse stats() const {
    return reply(200, json{{"identities", gallery.size()},
                           {"dimension", gallery.dimension()},
                           {"threshold", gallery.threshold()},
                           {"mode", std::string(to_string(gallery.mode()))}});
  }
};

VerificationService::VerificationService(Gallery& gallery, ServiceOptions options)
    : impl_(std::make_unique<Impl>(gallery, options)) {
  auto bind_post = [this](const char* path) {
    impl_->server.Post(path, [this, path](const httplib::Request& req, httplib::Response& res) {
      const auto r = handle("POST", path, req.body);
      res.status = r.status;
      res.set_content(r.body, "application/json");
    });
  };
  bind_post("/enroll");
  bind_post("/verify");
  bind_post("/scan");
  impl_->server.Get("/stats", [this](const httplib::Request&, httplib::Response& res) {
    const auto r = handle("GET", "/stats", "");
    res.status = r.status;
    res.set_content(r.body, "application/json");
  });
}

VerificationService::~VerificationService() { stop(); }

ServiceResponse VerificationService::handle(std::string_view method, std::string_view path,
                                            std::string_view body) const {
  const bool post = method == "POST";
  if (method == "GET" && path == "/stats") return impl_->stats();
  if (!post || (path != "/enroll" && path != "/verify" && path != "/scan")) {
    return error_reply(404, "no route for " + std::string(method) + " " + std::string(path));
  }

  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::exception& e) {
    return error_reply(400, std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) return error_reply(400, "request body must be a JSON object");

  try {
    if (path == "/enroll") return impl_->enroll(doc);
    if (path == "/verify") return impl_->verify(doc);
    return impl_->scan(doc);
  } catch (const Error& e) {
    return error_reply(status_for(e.code()), e.what());
  } catch (const json::exception& e) {
    return error_reply(400, e.what());
  }
}

bool VerificationService::listen(const std::string& host, int port) {
  return impl_->server.listen(host, port);
}

int VerificationService::bind_to_any_port(const std::string& host) {
  return impl_->server.bind_to_any_port(host);
}

bool VerificationService::listen_after_bind() { return impl_->server.listen_after_bind(); }

void VerificationService::stop() {
  if (impl_) impl_->server.stop();
}

void VerificationService::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace verisieve
