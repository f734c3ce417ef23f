#include "http_util.hpp"

#include "toxgate/common.hpp"

namespace toxgate::detail {

ParsedUrl parse_base_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error("base URL needs a scheme: " + base_url);
  }
  const auto path_start = base_url.find('/', scheme_end + 3);
  ParsedUrl out;
  if (path_start == std::string::npos) {
    out.origin = base_url;
  } else {
    out.origin = base_url.substr(0, path_start);
    out.path_prefix = base_url.substr(path_start);
    while (!out.path_prefix.empty() && out.path_prefix.back() == '/') {
      out.path_prefix.pop_back();
    }
  }
  return out;
}

std::unique_ptr<httplib::Client> make_http_client(const ParsedUrl& url,
                                                  int timeout_ms) {
  auto client = std::make_unique<httplib::Client>(url.origin);
  if (!client->is_valid()) throw Error("unsupported URL: " + url.origin);
  const auto sec = timeout_ms / 1000;
  const auto usec = (timeout_ms % 1000) * 1000;
  client->set_connection_timeout(sec, usec);
  client->set_read_timeout(sec, usec);
  client->set_write_timeout(sec, usec);
  return client;
}

}  // namespace toxgate::detail
