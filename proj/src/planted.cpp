#include "scoreflow/planted.hpp"

#include <algorithm>
#include <sstream>

#include "scoreflow/digest.hpp"
#include "scoreflow/errors.hpp"
#include "scoreflow/random.hpp"

namespace scoreflow {

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

std::int64_t word_count(const std::string& s) {
  std::istringstream in(s);
  std::int64_t n = 0;
  std::string w;
  while (in >> w) {
    ++n;
  }
  return n;
}

}  // namespace

bool PlantedRule::accepts(const WorkflowProfile& profile) const {
  if (max_calls && profile.static_call_count > *max_calls) {
    return false;
  }
  if (min_calls && profile.static_call_count < *min_calls) {
    return false;
  }
  return std::includes(profile.operators.begin(), profile.operators.end(), requires_ops.begin(),
                       requires_ops.end());
}

PlantedRule PlantedRule::parse(const std::string& text) {
  PlantedRule rule;
  std::istringstream clauses(text);
  std::string clause;
  while (std::getline(clauses, clause, ';')) {
    clause = trim(clause);
    if (clause.empty()) {
      continue;
    }
    const auto space = clause.find(' ');
    const std::string key = clause.substr(0, space);
    const std::string arg = space == std::string::npos ? "" : trim(clause.substr(space + 1));
    try {
      if (key == "max_calls") {
        rule.max_calls = std::stoll(arg);
      } else if (key == "min_calls") {
        rule.min_calls = std::stoll(arg);
      } else if (key == "requires") {
        std::istringstream ops(arg);
        std::string op;
        while (std::getline(ops, op, ',')) {
          op = trim(op);
          if (!op.empty()) {
            rule.requires_ops.insert(op);
          }
        }
      } else {
        throw ConfigError("unknown planted rule clause '" + key + "'");
      }
    } catch (const std::logic_error&) {
      throw ConfigError("bad planted rule clause '" + clause + "'");
    }
  }
  return rule;
}

std::string PlantedRule::to_string() const {
  std::string out;
  auto sep = [&] { return out.empty() ? "" : "; "; };
  if (max_calls) {
    out += sep() + std::string("max_calls ") + std::to_string(*max_calls);
  }
  if (min_calls) {
    out += sep() + std::string("min_calls ") + std::to_string(*min_calls);
  }
  if (!requires_ops.empty()) {
    std::string ops;
    for (const auto& op : requires_ops) {
      ops += (ops.empty() ? "" : ",") + op;
    }
    out += sep() + std::string("requires ") + ops;
  }
  return out;
}

PlantedWorldSpec PlantedWorldSpec::adaptivity(double noise_flip_prob, std::uint64_t seed) {
  PlantedWorldSpec spec;
  spec.rules["simple"] = PlantedRule::parse("max_calls 2");
  spec.rules["complex"] = PlantedRule::parse("requires programmer,sc_ensemble");
  spec.noise_flip_prob = noise_flip_prob;
  spec.seed = seed;
  return spec;
}

PlantedExecutor::PlantedExecutor(PlantedWorldSpec spec) : spec_(std::move(spec)) {
  if (!(spec_.noise_flip_prob >= 0.0 && spec_.noise_flip_prob < 0.5)) {
    throw DomainError("noise_flip_prob must lie in [0, 0.5)");
  }
}

bool PlantedExecutor::rule_verdict(const Task& task, const WorkflowProfile& profile) const {
  auto it = spec_.rules.find(task.category);
  return it != spec_.rules.end() && it->second.accepts(profile);
}

bool PlantedExecutor::flipped(const Task& task, const WorkflowProfile& profile, std::uint64_t salt) const {
  if (spec_.noise_flip_prob <= 0.0) {
    return false;
  }
  std::uint64_t h = splitmix64(spec_.seed);
  h = splitmix64(h ^ fnv1a64(task.id));
  h = splitmix64(h ^ fnv1a64(profile.digest));
  h = splitmix64(h ^ salt);
  return unit_from_bits(h) < spec_.noise_flip_prob;
}

ExecutorResponse PlantedExecutor::call(const ExecutorRequest& request) {
  if (request.task == nullptr || request.workflow == nullptr) {
    throw ExecutorFault("planted executor needs task and workflow context");
  }
  const Task& task = *request.task;
  ExecutorResponse resp;
  std::string first_arg;
  if (!request.kwarg_values.empty()) {
    if (const auto* s = std::get_if<std::string>(&request.kwarg_values.front().second)) {
      first_arg = *s;
    }
  }
  if (request.operator_name == "extract_answer") {
    const bool correct = rule_verdict(task, *request.workflow) != flipped(task, *request.workflow, request.salt);
    resp.text = correct ? task.gold : kPlantedWrongAnswer;
  } else if (request.operator_name == "test") {
    resp.verdict = first_arg == task.gold;
    resp.text = first_arg;
  } else {
    resp.text = request.operator_name + "#" + request.digest().substr(0, 8);
  }
  std::int64_t prompt_words = word_count(request.task_prompt);
  for (const auto& [name, value] : request.kwarg_values) {
    if (const auto* s = std::get_if<std::string>(&value)) {
      prompt_words += word_count(*s);
    } else {
      for (const auto& item : std::get<std::vector<std::string>>(value)) {
        prompt_words += word_count(item);
      }
    }
  }
  resp.prompt_tokens = prompt_words;
  resp.completion_tokens = word_count(resp.text);
  return resp;
}

}  // namespace scoreflow
