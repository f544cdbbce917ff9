#include <doctest.h>

#include "service_check.hpp"

using namespace verisieve;
using io::json;

namespace {

json body_of(const ServiceResponse& r) { return json::parse(r.body); }

std::string request(const std::string& id, const Vector& v) {
  return json{{"id", id}, {"embedding", io::vector_to_json(v)}}.dump();
}

}  // namespace

TEST_CASE("service routes and status codes") {
  Gallery g(3);
  VerificationService service(g);

  const auto created = service.handle("POST", "/enroll", request("alice", Vector::Unit(3, 0)));
  CHECK(created.status == 201);
  CHECK(body_of(created)["identities"] == 1);
  CHECK(service.handle("POST", "/enroll", request("alice", Vector::Unit(3, 1))).status == 409);
  CHECK(service.handle("POST", "/enroll", request("bob", Vector::Unit(4, 1))).status == 422);

  const auto verified = service.handle("POST", "/verify", request("alice", Vector::Unit(3, 0)));
  CHECK(verified.status == 200);
  CHECK(body_of(verified)["accepted"] == true);
  CHECK(body_of(verified)["distance"] == 0.0);

  const auto rejected = service.handle("POST", "/verify", request("alice", Vector::Unit(3, 1)));
  CHECK(body_of(rejected)["accepted"] == false);

  CHECK(service.handle("POST", "/verify", request("nobody", Vector::Unit(3, 0))).status == 404);
  CHECK(service.handle("POST", "/verify", request("alice", Vector::Unit(2, 0))).status == 422);
  CHECK(service.handle("POST", "/verify", "{broken").status == 400);
  CHECK(service.handle("POST", "/verify", "[1,2]").status == 400);
  CHECK(service.handle("POST", "/verify", R"({"id": "alice"})").status == 400);
  CHECK(service.handle("POST", "/verify", R"({"id": 5, "embedding": [1,0,0]})").status == 400);
  CHECK(service.handle("GET", "/verify", "").status == 404);
  CHECK(service.handle("POST", "/nowhere", "{}").status == 404);

  const auto scan = body_of(service.handle("POST", "/scan", R"({"embedding": [1, 0, 0]})"));
  REQUIRE(scan["hits"].size() == 1);
  CHECK(scan["hits"][0]["id"] == "alice");

  const auto stats = body_of(service.handle("GET", "/stats", ""));
  CHECK(stats["identities"] == 1);
  CHECK(stats["dimension"] == 3);
  CHECK(stats["threshold"] == 0.7);
  CHECK(stats["mode"] == "threshold");
}

TEST_CASE("blackbox service reveals only the verdict") {
  Gallery g(3, 0.7, VerificationMode::Exclusive);
  g.enroll("alice", {Vector::Unit(3, 0)});
  VerificationService service(g, {.blackbox = true});
  const auto body = body_of(service.handle("POST", "/verify", request("alice", Vector::Unit(3, 0))));
  CHECK(body["accepted"] == true);
  CHECK_FALSE(body.contains("distance"));
  CHECK_FALSE(body.contains("nearest_id"));
}

TEST_CASE("100 concurrent requests equal the serial replay") {
  const auto report = testing::concurrent_replay(71, 100);
  CHECK(report.requests == 100);
  CHECK(report.transport_failures == 0);
  CHECK(report.mismatches == 0);
  CHECK(report.accepted > 0);
}
