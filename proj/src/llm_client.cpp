#include "toxgate/llm_client.hpp"

#include <cctype>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "http_util.hpp"
#include "json.hpp"

namespace toxgate::llm {

using nlohmann::json;

void ChatRequest::validate() const {
  if (user_text.empty()) throw Error("chat request has empty user text");
  if (max_tokens < 1) throw Error("chat request max_tokens must be >= 1");
  if (!(temperature >= 0.0 && temperature <= 2.0)) {
    throw Error("chat request temperature must lie in [0, 2]");
  }
}

ScriptedClient::ScriptedClient(ScriptedClientSpec spec) : spec_(std::move(spec)) {
  if (spec_.on_exhaustion == OnExhaustion::repeat_last && spec_.responses.empty()) {
    throw Error("scripted client with repeat_last needs at least one response");
  }
}

ChatResponse ScriptedClient::complete(const ChatRequest& request) {
  request.validate();
  std::lock_guard lock(mutex_);
  requests_.push_back(request);
  ChatResponse out;
  out.model_id = "scripted";
  if (next_ < spec_.responses.size()) {
    out.text = spec_.responses[next_++];
    return out;
  }
  if (spec_.on_exhaustion == OnExhaustion::repeat_last) {
    ++next_;
    out.text = spec_.responses.back();
    return out;
  }
  throw ScriptExhaustedError("scripted client exhausted after " +
                             std::to_string(spec_.responses.size()) + " responses");
}

std::size_t ScriptedClient::calls() const {
  std::lock_guard lock(mutex_);
  return requests_.size();
}

RemoteChatClient::RemoteChatClient(RemoteClientConfig config)
    : config_(std::move(config)) {
  if (config_.api_key.empty()) {
    if (const char* key = std::getenv(kApiKeyEnv)) config_.api_key = key;
  }
  if (config_.retry.max_attempts < 1) config_.retry.max_attempts = 1;
}

ChatResponse RemoteChatClient::complete(const ChatRequest& request) {
  request.validate();
  const auto url = detail::parse_base_url(config_.base_url);

  json body = {{"model", config_.model},
               {"temperature", request.temperature},
               {"max_tokens", request.max_tokens}};
  json messages = json::array();
  if (!request.system_text.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system_text}});
  }
  messages.push_back({{"role", "user"}, {"content", request.user_text}});
  body["messages"] = std::move(messages);
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!config_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.api_key);
  }

  auto backoff = config_.retry.initial_backoff;
  std::string last_failure;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    auto client = detail::make_http_client(url, config_.timeout_ms);
    const auto start = std::chrono::steady_clock::now();
    auto res = client->Post(url.path_prefix + "/v1/chat/completions", headers,
                            payload, "application/json");
    const auto elapsed = std::chrono::steady_clock::now() - start;

    if (!res) {
      last_failure = httplib::to_string(res.error());
    } else if (res->status >= 500 || res->status == 429) {
      last_failure = "HTTP " + std::to_string(res->status);
    } else if (res->status != 200) {
      throw Error("chat completion rejected with HTTP " +
                  std::to_string(res->status) + ": " + res->body);
    } else {
      try {
        const json reply = json::parse(res->body);
        ChatResponse out;
        out.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
        out.model_id = reply.value("model", config_.model);
        out.latency_ms =
            std::chrono::duration<double, std::milli>(elapsed).count();
        return out;
      } catch (const json::exception& e) {
        throw Error(std::string("malformed chat completion: ") + e.what());
      }
    }
    if (attempt < config_.retry.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw TransportError("chat completion failed after " +
                           std::to_string(config_.retry.max_attempts) +
                           " attempts: " + last_failure,
                       config_.retry.max_attempts);
}

namespace {

// Returns the offset just past an enumeration marker and its trailing
// whitespace, or 0 if the line carries no marker.
std::size_t marker_length(std::string_view line) {
  if (line.empty()) return 0;
  std::size_t i = 0;
  if (line[0] == '-' || line[0] == '*') {
    i = 1;
  } else {
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i == 0 || i >= line.size() || (line[i] != '.' && line[i] != ')')) return 0;
    ++i;
  }
  while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
  return i;
}

}  // namespace

std::vector<std::string> parse_description_list(std::string_view text,
                                                std::size_t expected) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= text.size() && out.size() < expected) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string line = trim(text.substr(pos, end - pos));
    std::string item = trim(std::string_view(line).substr(marker_length(line)));
    if (!item.empty()) out.push_back(std::move(item));
    pos = end + 1;
  }
  if (out.empty()) throw ParseError(std::string(text));
  return out;
}

std::string format_description_list(const std::vector<std::string>& items) {
  std::ostringstream out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out << '\n';
    out << (i + 1) << ". " << items[i];
  }
  return out.str();
}

}  // namespace toxgate::llm
