#pragma once

// Live HTTP(S) transport for the ConceptNet client. Kept out of the core
// headers so only targets that talk to the network pull in cpp-httplib.

#include <string>

#include <httplib.h>

#include "semirnet/conceptnet_client.hpp"
#include "semirnet/error.hpp"

namespace semirnet {

class HttpTransport : public Transport {
 public:
  explicit HttpTransport(int timeout_ms) : timeout_ms_(timeout_ms) {}

  HttpResponse get(const std::string& url) override {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw InvalidArgument("http transport: URL without scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string origin = url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    httplib::Client client(origin);
    const auto sec = timeout_ms_ / 1000;
    const auto usec = (timeout_ms_ % 1000) * 1000;
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_follow_location(true);
    auto res = client.Get(path);
    if (!res) {
      throw RetriableError("http transport: GET " + url + " failed: " + httplib::to_string(res.error()));
    }
    return HttpResponse{res->status, res->body};
  }

 private:
  int timeout_ms_;
};

}  // namespace semirnet
