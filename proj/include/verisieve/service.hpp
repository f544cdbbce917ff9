#ifndef VERISIEVE_SERVICE_HPP
#define VERISIEVE_SERVICE_HPP

#include <memory>
#include <string>
#include <string_view>

#include "verisieve/gallery.hpp"

namespace verisieve {

struct ServiceOptions {
  /// Omit distances from /verify responses; callers only see the verdict.
  bool blackbox = false;
};

struct ServiceResponse {
  int status = 200;
  std::string body;
};

/// JSON-over-HTTP front end for a gallery.
///
///   POST /enroll {id, embedding}  -> 201, 409 on duplicate id
///   POST /verify {id, embedding}  -> 200 {accepted, distance, threshold, mode}
///   POST /scan   {embedding}      -> 200 {hits: [{id, distance}]}
///   GET  /stats                   -> 200 {identities, dimension, threshold, mode}
///
/// Malformed JSON is 400, an unknown id 404, a dimension mismatch 422.
class VerificationService {
 public:
  VerificationService(Gallery& gallery, ServiceOptions options = {});
  ~VerificationService();
  VerificationService(const VerificationService&) = delete;
  VerificationService& operator=(const VerificationService&) = delete;

  /// Routing and handling without a socket.
  ServiceResponse handle(std::string_view method, std::string_view path,
                         std::string_view body) const;

  /// Binds and serves until stop(); returns false if the address is unavailable.
  bool listen(const std::string& host, int port);
  /// Binds to an ephemeral port and returns it (or -1).
  int bind_to_any_port(const std::string& host);
  /// Serves on a socket bound by bind_to_any_port.
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace verisieve

#endif  // VERISIEVE_SERVICE_HPP
