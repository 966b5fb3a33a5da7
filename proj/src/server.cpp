#include "hlmbo/server.hpp"

#include <httplib.h>

#include <regex>

#include "hlmbo/errors.hpp"

namespace hlmbo {

using nlohmann::json;

namespace {

ApiResponse error_response(int status, const std::string& kind, const std::string& msg) {
  return {status, {{"error", kind}, {"message", msg}}};
}

json parse_body(const std::string& body) {
  if (body.empty()) return json::object();
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw BadRequest(std::string("request body is not JSON: ") + e.what());
  }
}

std::size_t query_size(const std::map<std::string, std::string>& q, const std::string& key,
                       std::size_t fallback) {
  const auto it = q.find(key);
  if (it == q.end() || it->second.empty()) return fallback;
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(it->second, &pos);
    if (pos != it->second.size() || v < 0) throw BadRequest("bad integer for '" + key + "'");
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw BadRequest("bad integer for '" + key + "'");
  }
}

ApiResponse dispatch(SessionManager& m, const std::string& method, const std::string& path,
                     const std::map<std::string, std::string>& query,
                     const std::string& body) {
  static const std::regex item(R"(^/sessions/([A-Za-z0-9_-]+)(/([a-z]+))?/?$)");
  if (path == "/sessions" || path == "/sessions/") {
    if (method == "POST") {
      const auto cfg = parse_body(body).get<SessionConfig>();
      const auto id = m.create(cfg);
      return {201, m.state(id)};
    }
    if (method == "GET") return {200, {{"sessions", m.ids()}}};
    return error_response(405, "MethodNotAllowed", method + " " + path);
  }
  std::smatch match;
  if (!std::regex_match(path, match, item))
    return error_response(404, "NotFound", "no route for " + path);
  const std::string id = match[1];
  const std::string sub = match[3];
  if (sub.empty()) {
    if (method == "GET") return {200, m.state(id)};
    if (method == "DELETE") return {200, m.abort(id)};
  } else if (sub == "preferences" && method == "POST") {
    const auto j = parse_body(body);
    if (!j.contains("labels") || !j["labels"].is_array())
      throw BadRequest("expected {\"labels\": [0|1, ...]}");
    std::vector<int> labels;
    for (const auto& v : j["labels"]) {
      if (!v.is_number_integer()) throw BadRequest("labels must be integers 0 or 1");
      labels.push_back(v.get<int>());
    }
    return {200, m.submit_preferences(id, labels)};
  } else if (sub == "candidates" && method == "GET") {
    return {200, m.candidates(id)};
  } else if (sub == "choice" && method == "POST") {
    const auto j = parse_body(body);
    if (!j.contains("side") || !j["side"].is_string())
      throw BadRequest("expected {\"side\": \"first\"|\"second\"}");
    const auto side = j["side"].get<std::string>();
    if (side != "first" && side != "second") throw BadRequest("side must be first or second");
    return {200, m.choose(id, choice_from_string(side))};
  } else if (sub == "heatmap" && method == "GET") {
    std::optional<std::pair<std::size_t, std::size_t>> dims;
    if (query.count("d1") || query.count("d2"))
      dims = std::pair{query_size(query, "d1", 0), query_size(query, "d2", 1)};
    return {200, m.heatmap(id, dims, query_size(query, "res", 25))};
  } else if (sub == "record" && method == "GET") {
    return {200, record_to_json(m.record(id))};
  }
  return error_response(405, "MethodNotAllowed", method + " " + path);
}

}  // namespace

ApiResponse handle_request(SessionManager& manager, const std::string& method,
                           const std::string& path,
                           const std::map<std::string, std::string>& query,
                           const std::string& body) {
  try {
    return dispatch(manager, method, path, query, body);
  } catch (const PhaseError& e) {
    return error_response(409, e.kind(), e.what());
  } catch (const NotFound& e) {
    return error_response(404, e.kind(), e.what());
  } catch (const BadRequest& e) {
    return error_response(400, e.kind(), e.what());
  } catch (const InvalidConfig& e) {
    return error_response(400, e.kind(), e.what());
  } catch (const ShapeError& e) {
    return error_response(400, e.kind(), e.what());
  } catch (const DomainError& e) {
    return error_response(400, e.kind(), e.what());
  } catch (const Error& e) {
    return error_response(500, e.kind(), e.what());
  } catch (const json::exception& e) {
    return error_response(400, "BadRequest", e.what());
  } catch (const std::exception& e) {
    return error_response(500, "InternalError", e.what());
  }
}

void install_routes(httplib::Server& server, SessionManager& manager,
                    const std::optional<std::string>& static_dir) {
  auto handler = [&manager](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    const auto out = handle_request(manager, req.method, req.path, query, req.body);
    res.status = out.status;
    res.set_content(out.body.dump(), "application/json");
  };
  const std::string pattern = R"(/sessions(/.*)?)";
  server.Get(pattern, handler);
  server.Post(pattern, handler);
  server.Delete(pattern, handler);
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  server.Options(pattern, [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  if (static_dir) server.set_mount_point("/", *static_dir);
}

bool serve(SessionManager& manager, const std::string& host, int port,
           const std::optional<std::string>& static_dir) {
  httplib::Server server;
  install_routes(server, manager, static_dir);
  return server.listen(host, port);
}

}  // namespace hlmbo
