#include "scoreflow/remote.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "scoreflow/errors.hpp"
#include "scoreflow/scoring.hpp"

namespace scoreflow {

using nlohmann::json;

namespace {

std::int64_t word_count(const std::string& s) {
  std::istringstream in(s);
  std::int64_t n = 0;
  std::string w;
  while (in >> w) {
    ++n;
  }
  return n;
}

bool retryable(int status) { return status == 429 || status >= 500; }

}  // namespace

const std::map<std::string, std::string>& default_operator_prompts() {
  static const std::map<std::string, std::string> kPrompts = {
      {"custom", "Follow the instruction below to work on the problem. Return your full response."},
      {"answer_generate", "Think step by step and answer the problem. End with the final answer."},
      {"code_generate", "Write a complete solution in code for the problem, following the instruction."},
      {"programmer",
       "Write a program that solves the problem using the given analysis, reason about its output, and "
       "return the final solution."},
      {"sc_ensemble",
       "Several candidate solutions follow. Identify the answer most candidates agree on and return that "
       "solution."},
      {"review", "Review the previous solution for mistakes and return a corrected, complete solution."},
      {"test",
       "For each test input listed, state the output the given solution produces, one per line, in order. "
       "Output nothing else."},
      {"extract_answer", "Return only the final answer contained in the solution, with no explanation."},
  };
  return kPrompts;
}

std::map<std::string, std::string> load_operator_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open prompt file " + path);
  }
  try {
    return json::parse(in).get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError("prompt file " + path + ": " + e.what());
  }
}

RemoteExecutor::RemoteExecutor(EndpointConfig config) : config_(std::move(config)) {
  const char* key = std::getenv(config_.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw CredentialMissing("environment variable " + config_.api_key_env + " is not set");
  }
  api_key_ = key;
  const auto scheme_end = config_.url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint url needs a scheme: " + config_.url);
  }
  const auto path_start = config_.url.find('/', scheme_end + 3);
  scheme_host_port_ = config_.url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : config_.url.substr(path_start);
  if (config_.max_attempts < 1) {
    throw ConfigError("max_attempts must be at least 1");
  }
}

std::string RemoteExecutor::render_user_content(const ExecutorRequest& request) const {
  std::string out = "Problem:\n" + request.task_prompt;
  for (const auto& [name, value] : request.kwarg_values) {
    out += "\n\n" + name + ":\n";
    if (const auto* s = std::get_if<std::string>(&value)) {
      out += *s;
    } else {
      const auto& items = std::get<std::vector<std::string>>(value);
      for (std::size_t i = 0; i < items.size(); ++i) {
        out += "[" + std::to_string(i + 1) + "] " + items[i] + "\n";
      }
    }
  }
  if (request.operator_name == "test" && request.task != nullptr) {
    out += "\n\nTest inputs:\n";
    for (const auto& t : request.task->public_tests) {
      out += t.input + "\n";
    }
  }
  return out;
}

ExecutorResponse RemoteExecutor::call(const ExecutorRequest& request) {
  std::string system_prompt;
  if (auto it = config_.operator_prompts.find(request.operator_name); it != config_.operator_prompts.end()) {
    system_prompt = it->second;
  } else if (auto dit = default_operator_prompts().find(request.operator_name);
             dit != default_operator_prompts().end()) {
    system_prompt = dit->second;
  } else {
    system_prompt = "You are the '" + request.operator_name + "' operator of a workflow.";
  }
  const std::string user_content = render_user_content(request);
  const json body = {
      {"model", config_.model},
      {"temperature", request.temperature},
      {"messages", json::array({{{"role", "system"}, {"content", system_prompt}},
                                {{"role", "user"}, {"content", user_content}}})},
  };
  const std::string payload = body.dump();

  httplib::Client client(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.request_timeout);
  client.set_read_timeout(secs.count() > 0 ? secs.count() : 1, 0);
  client.set_connection_timeout(secs.count() > 0 ? secs.count() : 1, 0);
  const httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};

  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(config_.initial_backoff * (1 << (attempt - 2)));
    }
    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      if (retryable(res->status)) {
        continue;
      }
      break;
    }
    ExecutorResponse out;
    out.attempts = attempt;
    try {
      const json reply = json::parse(res->body);
      out.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
      if (reply.contains("usage") && reply["usage"].is_object()) {
        out.prompt_tokens = reply["usage"].value("prompt_tokens", std::int64_t{0});
        out.completion_tokens = reply["usage"].value("completion_tokens", std::int64_t{0});
      } else {
        out.prompt_tokens = word_count(system_prompt) + word_count(user_content);
        out.completion_tokens = word_count(out.text);
      }
    } catch (const json::exception& e) {
      throw ExecutorFault(std::string("malformed chat-completion response: ") + e.what());
    }
    if (request.operator_name == "test") {
      const auto* solution =
          request.kwarg_values.empty() ? nullptr : std::get_if<std::string>(&request.kwarg_values.front().second);
      bool pass = true;
      if (request.task != nullptr) {
        std::istringstream lines(out.text);
        std::string line;
        for (const auto& t : request.task->public_tests) {
          if (!std::getline(lines, line) || normalize_answer(line) != normalize_answer(t.expected)) {
            pass = false;
            break;
          }
        }
      }
      out.verdict = pass;
      out.text = solution != nullptr ? *solution : std::string{};
    }
    return out;
  }
  throw ExecutorFault("chat completion failed after " + std::to_string(config_.max_attempts) +
                      " attempts: " + last_error);
}

}  // namespace scoreflow
