#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "scoreflow/workflow_lang.hpp"

namespace scoreflow {

/// Task-conditioning features. Entry 0 is a constant 1 bias by convention.
using FeatureVector = std::vector<double>;

struct PublicTest {
  std::string input;
  std::string expected;
};

struct Task {
  std::string id;
  std::string category;
  std::string prompt;
  std::string gold;
  FeatureVector features;
  std::vector<PublicTest> public_tests;
};

/// JSON Lines, one task per line. Throws IoError / ConfigError.
std::vector<Task> load_tasks(const std::string& path);
std::vector<Task> parse_tasks(const std::string& jsonl);
std::string dump_tasks(const std::vector<Task>& tasks);

/// What an executor may know about the program being run.
struct WorkflowProfile {
  std::string digest;
  std::int64_t static_call_count = 0;
  std::set<std::string> operators;

  static WorkflowProfile of(const WorkflowAst& ast);
};

using Value = std::variant<std::string, std::vector<std::string>>;

struct ExecutorRequest {
  std::string operator_name;
  std::string task_prompt;
  std::vector<std::pair<std::string, Value>> kwarg_values;
  double temperature = 0.0;

  // Evaluation context. `salt` separates repeated evaluations of the same
  // (task, workflow) so planted noise stays keyed by data, not scheduling.
  const Task* task = nullptr;
  const WorkflowProfile* workflow = nullptr;
  std::uint64_t salt = 0;

  /// Stable digest of operator, prompt and arguments.
  std::string digest() const;
};

struct ExecutorResponse {
  std::string text;
  std::optional<bool> verdict;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  int attempts = 1;
};

/// Executors must tolerate concurrent calls.
class Executor {
 public:
  virtual ~Executor() = default;
  /// Throws ExecutorFault on transport or protocol failure.
  virtual ExecutorResponse call(const ExecutorRequest& request) = 0;
};

struct TraceEntry {
  std::string operator_name;
  std::string request_digest;
  std::string response_digest;
  std::chrono::nanoseconds elapsed{0};
  int attempts = 1;
};

struct TokenCost {
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;

  std::int64_t total() const { return prompt_tokens + completion_tokens; }
  TokenCost& operator+=(const TokenCost& o) {
    prompt_tokens += o.prompt_tokens;
    completion_tokens += o.completion_tokens;
    return *this;
  }
};

struct ExecutionResult {
  std::string output;
  std::vector<TraceEntry> per_call_trace;
  std::chrono::nanoseconds total_elapsed{0};
  TokenCost token_cost;
  std::map<std::string, bool> verdicts;
};

enum class FaultKind { Timeout, ExecutorFault, UnboundVariable, UnknownOperator };

const char* to_string(FaultKind kind);

struct RuntimeFault {
  FaultKind kind;
  std::string message;
  std::int64_t calls_made = 0;
  TokenCost token_cost;
};

using ExecutionOutcome = std::variant<ExecutionResult, RuntimeFault>;

struct InterpretOptions {
  double temperature = 0.0;
  std::uint64_t salt = 0;
  // When set, calls to unregistered operators fault instead of dispatching.
  const OperatorRegistry* registry = nullptr;
};

/// Runs a validated workflow on one task. The returned variable is passed
/// through extract_answer to form the final output.
ExecutionOutcome interpret(const WorkflowAst& ast, const Task& task, Executor& executor, const Limits& limits,
                           const InterpretOptions& options = {});

}  // namespace scoreflow
