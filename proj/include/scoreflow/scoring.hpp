#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "scoreflow/runtime.hpp"

namespace scoreflow {

enum class MetricKind { TokenF1, ExactMatch };

const char* to_string(MetricKind kind);
MetricKind metric_kind_from_string(const std::string& s);

struct Metric {
  MetricKind kind = MetricKind::ExactMatch;
  int repeats = 3;
};

struct Score {
  double value = 0.0;
  int repeats_used = 0;
  std::vector<double> per_repeat;
};

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, split on
/// whitespace.
std::vector<std::string> normalize_answer(std::string_view text);

/// Bag-of-tokens F1 over normalized tokens. Both empty scores 1; exactly
/// one empty scores 0.
double token_f1(std::string_view prediction, std::string_view gold);

/// 1 when the normalized token lists agree, or when both sides read as plain
/// decimals (an optional trailing '%' divides by 100) equal to 1e-9 relative.
double exact_match(std::string_view prediction, std::string_view gold);

double score_output(const Metric& metric, std::string_view prediction, std::string_view gold);

struct WorkflowEvaluation {
  Score score;
  /// Every repeat faulted: the candidate fails the runtime executability check.
  bool cstar_failed = false;
  int faulted_repeats = 0;
  std::int64_t executor_calls = 0;
  TokenCost token_cost;
};

/// Interprets `metric.repeats` times; repeat r runs with salt
/// splitmix64(base_salt + r). Faulted repeats score 0.
WorkflowEvaluation evaluate_workflow(const WorkflowAst& ast, const Task& task, Executor& executor,
                                     const Metric& metric, const Limits& limits, std::uint64_t base_salt = 0);

}  // namespace scoreflow
