#pragma once

#include <chrono>
#include <map>
#include <string>

#include "scoreflow/runtime.hpp"

namespace scoreflow {

struct EndpointConfig {
  /// Full URL of a chat-completions endpoint, e.g. https://host/v1/chat/completions.
  std::string url;
  std::string model = "gpt-4o-mini";
  std::string api_key_env = "SCOREFLOW_API_KEY";
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::milliseconds request_timeout{60'000};
  /// System prompt per operator; falls back to default_operator_prompts().
  std::map<std::string, std::string> operator_prompts;
};

const std::map<std::string, std::string>& default_operator_prompts();

/// Reads a JSON object {operator: system prompt}. Throws IoError/ConfigError.
std::map<std::string, std::string> load_operator_prompts(const std::string& path);

/// One chat-completion HTTP call per operator invocation, with exponential
/// backoff on transport errors, 429 and 5xx.
class RemoteExecutor final : public Executor {
 public:
  /// Throws CredentialMissing when the key variable is unset or empty.
  explicit RemoteExecutor(EndpointConfig config);

  ExecutorResponse call(const ExecutorRequest& request) override;

  const EndpointConfig& config() const noexcept { return config_; }

 private:
  std::string render_user_content(const ExecutorRequest& request) const;

  EndpointConfig config_;
  std::string api_key_;
  std::string scheme_host_port_;
  std::string path_;
};

}  // namespace scoreflow
