#include <httplib.h>

#include "scot/triplet_forge.hpp"

namespace scot {

namespace {

class HttpTransport final : public Transport {
 public:
  std::string post(const LlmEndpointConfig& cfg, const std::string& body) override {
    const auto scheme_end = cfg.base_url.find("://");
    const auto path_start =
        cfg.base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    const std::string origin = cfg.base_url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : cfg.base_url.substr(path_start);

    httplib::Client client(origin);
    if (!client.is_valid()) throw Error(ErrorKind::TransportError, "invalid endpoint '" + cfg.base_url + "'");
    const auto secs = static_cast<time_t>(cfg.timeout_s);
    const auto usecs = static_cast<time_t>((cfg.timeout_s - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    if (!cfg.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg.api_key);
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) {
      throw Error(ErrorKind::TransportError, "request to '" + cfg.base_url + "' failed: " +
                                                 httplib::to_string(res.error()));
    }
    if (res->status < 200 || res->status >= 300) {
      throw Error(ErrorKind::TransportError, "HTTP status " + std::to_string(res->status));
    }
    return res->body;
  }
};

}  // namespace

std::unique_ptr<Transport> make_http_transport() { return std::make_unique<HttpTransport>(); }

}  // namespace scot
