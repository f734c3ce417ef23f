#pragma once

#include <memory>
#include <string>

#include "httplib.h"

namespace toxgate::detail {

struct ParsedUrl {
  std::string origin;       // scheme://host[:port]
  std::string path_prefix;  // no trailing slash, may be empty
};

ParsedUrl parse_base_url(const std::string& base_url);

std::unique_ptr<httplib::Client> make_http_client(const ParsedUrl& url,
                                                  int timeout_ms);

}  // namespace toxgate::detail
