#include "scoreflow/scoring.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>

#include "scoreflow/errors.hpp"
#include "scoreflow/random.hpp"

namespace scoreflow {

const char* to_string(MetricKind kind) { return kind == MetricKind::TokenF1 ? "token_f1" : "exact_match"; }

MetricKind metric_kind_from_string(const std::string& s) {
  if (s == "token_f1") {
    return MetricKind::TokenF1;
  }
  if (s == "exact_match") {
    return MetricKind::ExactMatch;
  }
  throw ConfigError("unknown metric kind '" + s + "'");
}

std::vector<std::string> normalize_answer(std::string_view text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (u < 0x80 && std::ispunct(u)) {
      continue;
    }
    cleaned.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : c);
  }
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty() && current != "a" && current != "an" && current != "the") {
      tokens.push_back(current);
    }
    current.clear();
  };
  for (char c : cleaned) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else {
      current.push_back(c);
    }
  }
  flush();
  return tokens;
}

double token_f1(std::string_view prediction, std::string_view gold) {
  const auto pred = normalize_answer(prediction);
  const auto ref = normalize_answer(gold);
  if (pred.empty() && ref.empty()) {
    return 1.0;
  }
  if (pred.empty() || ref.empty()) {
    return 0.0;
  }
  std::map<std::string, int> counts;
  for (const auto& t : ref) {
    ++counts[t];
  }
  int overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) {
    return 0.0;
  }
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

namespace {

std::optional<double> parse_plain_decimal(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  double scale = 1.0;
  if (!s.empty() && s.back() == '%') {
    scale = 0.01;
    s.remove_suffix(1);
  }
  if (s.empty()) {
    return std::nullopt;
  }
  // Plain decimals only: optional sign, digits with at most one point.
  std::size_t i = (s.front() == '+' || s.front() == '-') ? 1 : 0;
  bool digit = false;
  bool point = false;
  for (std::size_t j = i; j < s.size(); ++j) {
    if (std::isdigit(static_cast<unsigned char>(s[j]))) {
      digit = true;
    } else if (s[j] == '.' && !point) {
      point = true;
    } else {
      return std::nullopt;
    }
  }
  if (!digit) {
    return std::nullopt;
  }
  if (s.front() == '+') {
    s.remove_prefix(1);
  }
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    return std::nullopt;
  }
  return value * scale;
}

}  // namespace

double exact_match(std::string_view prediction, std::string_view gold) {
  if (normalize_answer(prediction) == normalize_answer(gold)) {
    return 1.0;
  }
  const auto a = parse_plain_decimal(prediction);
  const auto b = parse_plain_decimal(gold);
  if (a && b) {
    const double scale = std::max(std::fabs(*a), std::fabs(*b));
    if (*a == *b || std::fabs(*a - *b) <= 1e-9 * scale) {
      return 1.0;
    }
  }
  return 0.0;
}

double score_output(const Metric& metric, std::string_view prediction, std::string_view gold) {
  return metric.kind == MetricKind::TokenF1 ? token_f1(prediction, gold) : exact_match(prediction, gold);
}

WorkflowEvaluation evaluate_workflow(const WorkflowAst& ast, const Task& task, Executor& executor,
                                     const Metric& metric, const Limits& limits, std::uint64_t base_salt) {
  if (metric.repeats < 1) {
    throw DomainError("metric repeats must be at least 1");
  }
  WorkflowEvaluation out;
  out.score.repeats_used = metric.repeats;
  double sum = 0.0;
  for (int r = 0; r < metric.repeats; ++r) {
    InterpretOptions options;
    options.salt = splitmix64(base_salt + static_cast<std::uint64_t>(r));
    const ExecutionOutcome outcome = interpret(ast, task, executor, limits, options);
    double value = 0.0;
    if (const auto* result = std::get_if<ExecutionResult>(&outcome)) {
      value = score_output(metric, result->output, task.gold);
      out.executor_calls += static_cast<std::int64_t>(result->per_call_trace.size());
      out.token_cost += result->token_cost;
    } else {
      const auto& fault = std::get<RuntimeFault>(outcome);
      ++out.faulted_repeats;
      out.executor_calls += fault.calls_made;
      out.token_cost += fault.token_cost;
    }
    out.score.per_repeat.push_back(value);
    sum += value;
  }
  out.score.value = sum / static_cast<double>(metric.repeats);
  out.cstar_failed = out.faulted_repeats == metric.repeats;
  return out;
}

}  // namespace scoreflow
