#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "toxgate/common.hpp"

namespace toxgate::llm {

// Extraction wants one canonical answer; augmentation wants spread.
inline constexpr double kExtractionTemperature = 0.0;
inline constexpr double kAugmentationTemperature = 0.7;

struct ChatRequest {
  std::string system_text;
  std::string user_text;
  double temperature = kAugmentationTemperature;
  int max_tokens = 512;

  // Throws Error when user_text is empty, max_tokens < 1 or the
  // temperature is outside [0, 2].
  void validate() const;
};

struct ChatResponse {
  std::string text;  // raw completion, untrimmed
  std::string model_id;
  double latency_ms = 0.0;
};

class ScriptExhaustedError : public Error {
 public:
  using Error::Error;
};

// The completion did not contain a single usable description.
class ParseError : public Error {
 public:
  explicit ParseError(std::string raw)
      : Error("no descriptions found in completion"), raw_(std::move(raw)) {}
  const std::string& raw_text() const { return raw_; }

 private:
  std::string raw_;
};

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

enum class OnExhaustion { repeat_last, error };

struct ScriptedClientSpec {
  std::vector<std::string> responses;
  OnExhaustion on_exhaustion = OnExhaustion::error;
};

// Replays canned responses in FIFO order. Calls are serialized internally.
class ScriptedClient final : public ChatClient {
 public:
  explicit ScriptedClient(ScriptedClientSpec spec);

  ChatResponse complete(const ChatRequest& request) override;

  std::size_t calls() const;
  const std::vector<ChatRequest>& requests() const { return requests_; }

 private:
  ScriptedClientSpec spec_;
  mutable std::mutex mutex_;
  std::size_t next_ = 0;
  std::vector<ChatRequest> requests_;
};

struct RetryPolicy {
  int max_attempts = 3;
  // Doubles after every failed attempt.
  std::chrono::milliseconds initial_backoff{500};
};

struct RemoteClientConfig {
  std::string base_url;
  std::string model = "gpt-4o";
  // Read from TOXGATE_LLM_API_KEY when empty.
  std::string api_key;
  int timeout_ms = 60000;
  RetryPolicy retry;
};

inline constexpr const char* kApiKeyEnv = "TOXGATE_LLM_API_KEY";

// OpenAI-compatible chat-completions client. Stateless per request, so
// safe to share across threads.
class RemoteChatClient final : public ChatClient {
 public:
  explicit RemoteChatClient(RemoteClientConfig config);

  ChatResponse complete(const ChatRequest& request) override;

 private:
  RemoteClientConfig config_;
};

// Splits an enumerated completion into at most `expected` descriptions.
// Leading "1." / "1)" / "-" / "*" markers and blank lines are dropped.
std::vector<std::string> parse_description_list(std::string_view text,
                                                std::size_t expected);

// "1. a\n2. b\n..." -- the inverse of parse_description_list for clean items.
std::string format_description_list(const std::vector<std::string>& items);

}  // namespace toxgate::llm
