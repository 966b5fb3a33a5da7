#pragma once

#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "hlmbo/orchestrator.hpp"

namespace httplib {
class Server;
}

namespace hlmbo {

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// Transport-independent router for the session API:
///   POST   /sessions                      create, body = SessionConfig JSON
///   GET    /sessions                      list ids
///   GET    /sessions/{id}                 state
///   POST   /sessions/{id}/preferences     {"labels":[0|1,...]}
///   GET    /sessions/{id}/candidates      current pair + explanations
///   POST   /sessions/{id}/choice          {"side":"first"|"second"}
///   GET    /sessions/{id}/heatmap         ?d1=&d2=&res=
///   GET    /sessions/{id}/record          run record so far
///   DELETE /sessions/{id}                 abort
/// Errors map to 400 (bad request/config), 404 (unknown id), 409 (phase),
/// 500 (anything else), with body {"error": kind, "message": text}.
ApiResponse handle_request(SessionManager& manager, const std::string& method,
                           const std::string& path,
                           const std::map<std::string, std::string>& query,
                           const std::string& body);

/// Wires handle_request into an HTTP server, optionally serving static files
/// (the browser console) from `static_dir`.
void install_routes(httplib::Server& server, SessionManager& manager,
                    const std::optional<std::string>& static_dir = std::nullopt);

/// Blocks serving on host:port until the server is stopped.
bool serve(SessionManager& manager, const std::string& host, int port,
           const std::optional<std::string>& static_dir = std::nullopt);

}  // namespace hlmbo
