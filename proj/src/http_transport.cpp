#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "rpm/error.hpp"
#include "rpm/gateway.hpp"

namespace rpm {

HttpTransport::HttpTransport(std::string base_url, double timeout_s) : timeout_s_(timeout_s) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base_url needs a scheme: " + base_url);
  const auto path_start = base_url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    origin_ = base_url;
  } else {
    origin_ = base_url.substr(0, path_start);
    prefix_ = base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
  }
}

HttpResponse HttpTransport::post(const std::string& path, const std::string& body, const HttpHeaders& headers) {
  httplib::Client client(origin_);
  const auto secs = static_cast<time_t>(timeout_s_);
  client.set_connection_timeout(secs, 0);
  client.set_read_timeout(secs, 0);
  client.set_write_timeout(secs, 0);

  httplib::Headers hdrs;
  std::string content_type = "application/json";
  for (const auto& [k, v] : headers) {
    if (k == "Content-Type") {
      content_type = v;
    } else {
      hdrs.emplace(k, v);
    }
  }
  auto res = client.Post(prefix_ + path, hdrs, body, content_type);
  if (!res) throw TransportError("POST " + origin_ + prefix_ + path + " failed: " + httplib::to_string(res.error()));
  return HttpResponse{res->status, res->body};
}

}  // namespace rpm
