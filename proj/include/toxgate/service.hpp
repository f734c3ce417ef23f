#pragma once

#include "httplib.h"
#include "toxgate/pipeline.hpp"

namespace toxgate::service {

// Registers POST /v1/detect and GET /healthz. The detector must outlive
// the server; it is shared read-only across request threads.
void install_routes(httplib::Server& server, const pipeline::Detector& detector);

}  // namespace toxgate::service
