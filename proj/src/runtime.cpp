#include "scoreflow/runtime.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "scoreflow/digest.hpp"
#include "scoreflow/errors.hpp"

namespace scoreflow {

using nlohmann::json;

const char* to_string(FaultKind kind) {
  switch (kind) {
    case FaultKind::Timeout:
      return "Timeout";
    case FaultKind::ExecutorFault:
      return "ExecutorFault";
    case FaultKind::UnboundVariable:
      return "UnboundVariable";
    case FaultKind::UnknownOperator:
      return "UnknownOperator";
  }
  return "?";
}

WorkflowProfile WorkflowProfile::of(const WorkflowAst& ast) {
  return {workflow_digest(ast), scoreflow::static_call_count(ast), operators_used(ast)};
}

std::string ExecutorRequest::digest() const {
  std::uint64_t h = fnv1a64(operator_name);
  h = fnv1a64("\x1f", h);
  h = fnv1a64(task_prompt, h);
  for (const auto& [name, value] : kwarg_values) {
    h = fnv1a64("\x1e", h);
    h = fnv1a64(name, h);
    if (const auto* s = std::get_if<std::string>(&value)) {
      h = fnv1a64("\x1d", h);
      h = fnv1a64(*s, h);
    } else {
      for (const auto& item : std::get<std::vector<std::string>>(value)) {
        h = fnv1a64("\x1c", h);
        h = fnv1a64(item, h);
      }
    }
  }
  return hex64(h);
}

// ------------------------------------------------------------------ tasks

namespace {

Task task_from_json(const json& j) {
  Task t;
  t.id = j.at("id").get<std::string>();
  t.category = j.at("category").get<std::string>();
  t.prompt = j.at("prompt").get<std::string>();
  t.gold = j.at("gold").get<std::string>();
  t.features = j.at("features").get<std::vector<double>>();
  if (j.contains("public_tests") && !j.at("public_tests").is_null()) {
    for (const auto& pt : j.at("public_tests")) {
      t.public_tests.push_back({pt.at("input").get<std::string>(), pt.at("expected").get<std::string>()});
    }
  }
  return t;
}

json task_to_json(const Task& t) {
  json j = {{"id", t.id}, {"category", t.category}, {"prompt", t.prompt}, {"gold", t.gold}, {"features", t.features}};
  if (!t.public_tests.empty()) {
    json tests = json::array();
    for (const auto& pt : t.public_tests) {
      tests.push_back({{"input", pt.input}, {"expected", pt.expected}});
    }
    j["public_tests"] = std::move(tests);
  }
  return j;
}

}  // namespace

std::vector<Task> parse_tasks(const std::string& jsonl) {
  std::vector<Task> out;
  std::set<std::string> ids;
  std::istringstream in(jsonl);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      Task t = task_from_json(json::parse(line));
      if (t.prompt.empty()) {
        throw ConfigError("empty prompt");
      }
      if (!ids.insert(t.id).second) {
        throw ConfigError("duplicate task id " + t.id);
      }
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw ConfigError("tasks line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError("tasks line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<Task> load_tasks(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open tasks file " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_tasks(buf.str());
}

std::string dump_tasks(const std::vector<Task>& tasks) {
  std::string out;
  for (const auto& t : tasks) {
    out += task_to_json(t).dump() + "\n";
  }
  return out;
}

// ------------------------------------------------------------ interpreter

namespace {

struct Abort {
  RuntimeFault fault;
};

class Interpreter {
 public:
  Interpreter(const WorkflowAst& ast, const Task& task, Executor& executor, const Limits& limits,
              const InterpretOptions& options)
      : ast_(ast), task_(task), executor_(executor), limits_(limits), options_(options),
        profile_(WorkflowProfile::of(ast)), start_(std::chrono::steady_clock::now()) {}

  ExecutionOutcome run() {
    try {
      block(ast_.statements);
      const std::string& final_value = string_var(ast_.return_var);
      const ExecutorResponse answer = dispatch("extract_answer", {{"solution", final_value}});
      result_.output = answer.text;
      result_.total_elapsed = std::chrono::steady_clock::now() - start_;
      return std::move(result_);
    } catch (Abort& a) {
      a.fault.calls_made = static_cast<std::int64_t>(result_.per_call_trace.size());
      a.fault.token_cost = result_.token_cost;
      return std::move(a.fault);
    }
  }

 private:
  [[noreturn]] static void abort(FaultKind kind, std::string message) { throw Abort{{kind, std::move(message), 0, {}}}; }

  const Value& lookup(const std::string& name) const {
    auto it = env_.find(name);
    if (it == env_.end()) {
      abort(FaultKind::UnboundVariable, "variable '" + name + "' is unbound");
    }
    return it->second;
  }

  const std::string& string_var(const std::string& name) const {
    const Value& v = lookup(name);
    if (const auto* s = std::get_if<std::string>(&v)) {
      return *s;
    }
    abort(FaultKind::UnboundVariable, "variable '" + name + "' holds a list");
  }

  ExecutorResponse dispatch(const std::string& op, std::vector<std::pair<std::string, Value>> args) {
    if (options_.registry != nullptr && !options_.registry->contains(op)) {
      abort(FaultKind::UnknownOperator, "operator '" + op + "' is not registered");
    }
    ExecutorRequest req;
    req.operator_name = op;
    req.task_prompt = task_.prompt;
    req.kwarg_values = std::move(args);
    req.temperature = options_.temperature;
    req.task = &task_;
    req.workflow = &profile_;
    req.salt = options_.salt;

    const auto t0 = std::chrono::steady_clock::now();
    ExecutorResponse resp;
    try {
      resp = executor_.call(req);
    } catch (const ExecutorFault& e) {
      abort(FaultKind::ExecutorFault, e.what());
    }
    const auto t1 = std::chrono::steady_clock::now();
    result_.per_call_trace.push_back({op, req.digest(), digest_of(resp.text), t1 - t0, resp.attempts});
    result_.token_cost += {resp.prompt_tokens, resp.completion_tokens};
    if (t1 - start_ > limits_.wall_clock_timeout) {
      abort(FaultKind::Timeout, "wall-clock budget exhausted after " +
                                    std::to_string(result_.per_call_trace.size()) + " calls");
    }
    return resp;
  }

  void block(const Block& b) {
    for (const auto& st : b) {
      statement(st);
    }
  }

  void statement(const Statement& st) {
    if (const auto* let = std::get_if<Let>(&st.node)) {
      std::vector<std::pair<std::string, Value>> args;
      for (const auto& k : let->call.kwargs) {
        args.emplace_back(k.name, resolve(k.value));
      }
      ExecutorResponse resp = dispatch(let->call.op, std::move(args));
      if (resp.verdict.has_value()) {
        result_.verdicts[let->name] = *resp.verdict;
      }
      env_[let->name] = std::move(resp.text);
    } else if (const auto* empty = std::get_if<LetEmptyList>(&st.node)) {
      env_[empty->name] = std::vector<std::string>{};
    } else if (const auto* push = std::get_if<Push>(&st.node)) {
      std::string item = string_var(push->value);
      auto it = env_.find(push->list);
      if (it == env_.end() || !std::holds_alternative<std::vector<std::string>>(it->second)) {
        abort(FaultKind::UnboundVariable, "list '" + push->list + "' is unbound");
      }
      std::get<std::vector<std::string>>(it->second).push_back(std::move(item));
    } else if (const auto* rep = std::get_if<Repeat>(&st.node)) {
      for (int i = 0; i < rep->count; ++i) {
        block(rep->body);
      }
    } else if (const auto* cond = std::get_if<IfTest>(&st.node)) {
      const ExecutorResponse resp = dispatch("test", {{"solution", string_var(cond->subject)}});
      const bool pass = resp.verdict.value_or(false);
      result_.verdicts[cond->subject] = pass;
      block(pass ? cond->then_body : cond->else_body);
    }
  }

  Value resolve(const ArgValue& v) const {
    if (const auto* s = std::get_if<StringLit>(&v)) {
      return s->value;
    }
    if (const auto* r = std::get_if<VarRef>(&v)) {
      return lookup(r->name);
    }
    std::vector<std::string> items;
    for (const auto& n : std::get<ListExpr>(v).names) {
      items.push_back(string_var(n));
    }
    return items;
  }

  const WorkflowAst& ast_;
  const Task& task_;
  Executor& executor_;
  const Limits& limits_;
  const InterpretOptions& options_;
  WorkflowProfile profile_;
  std::chrono::steady_clock::time_point start_;
  std::map<std::string, Value> env_;
  ExecutionResult result_;
};

}  // namespace

ExecutionOutcome interpret(const WorkflowAst& ast, const Task& task, Executor& executor, const Limits& limits,
                           const InterpretOptions& options) {
  return Interpreter(ast, task, executor, limits, options).run();
}

}  // namespace scoreflow
