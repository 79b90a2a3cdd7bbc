#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "scoreflow/errors.hpp"
#include "scoreflow/operators.hpp"
#include "scoreflow/planted.hpp"
#include "scoreflow/policy.hpp"
#include "scoreflow/remote.hpp"
#include "scoreflow/runtime.hpp"

using namespace scoreflow;

namespace {

const WorkflowBank& bank() {
  static const WorkflowBank b = WorkflowBank::load(SCOREFLOW_DATA_DIR "/default_bank.flows", OperatorRegistry{}, {});
  return b;
}

const std::vector<Task>& tasks() {
  static const std::vector<Task> t = load_tasks(SCOREFLOW_DATA_DIR "/planted_tasks.jsonl");
  return t;
}

const Task& task_by_id(const std::string& id) {
  for (const auto& t : tasks()) {
    if (t.id == id) {
      return t;
    }
  }
  throw std::runtime_error("missing task " + id);
}

class EchoExecutor : public Executor {
 public:
  ExecutorResponse call(const ExecutorRequest& r) override {
    ExecutorResponse out;
    out.text = r.operator_name;
    if (r.operator_name == "test") {
      out.verdict = true;
    }
    return out;
  }
};

class SleepyExecutor : public Executor {
 public:
  ExecutorResponse call(const ExecutorRequest& r) override {
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    return {r.operator_name, std::nullopt, 0, 0, 1};
  }
};

class FailingExecutor : public Executor {
 public:
  ExecutorResponse call(const ExecutorRequest&) override { throw ExecutorFault("connection reset"); }
};

}  // namespace

TEST(Operators, CatalogHasEightEntries) {
  const OperatorRegistry reg;
  EXPECT_EQ(reg.size(), 8u);
  for (const char* name : {"custom", "answer_generate", "code_generate", "programmer", "sc_ensemble", "review", "test",
                           "extract_answer"}) {
    EXPECT_TRUE(reg.contains(name)) << name;
  }
  EXPECT_TRUE(reg.find("test")->produces_boolean);
  EXPECT_FALSE(reg.find("review")->produces_boolean);
}

TEST(Operators, ExtensionAndDuplicate) {
  const std::vector<OperatorSpec> ext = {{"reviser", {{"draft", ArgKind::Var}}, false}};
  OperatorRegistry reg = build_registry(ext);
  EXPECT_EQ(reg.size(), 9u);
  EXPECT_EQ(reg.find("reviser")->kwarg_schema.at(0).kind, ArgKind::Var);
  EXPECT_THROW(reg.add({"custom", {}, false}), DuplicateOperator);
  EXPECT_EQ(OperatorRegistry{}.size(), 8u);
}

TEST(Tasks, LoadAndRoundTrip) {
  ASSERT_EQ(tasks().size(), 40u);
  const auto again = parse_tasks(dump_tasks(tasks()));
  ASSERT_EQ(again.size(), tasks().size());
  EXPECT_EQ(again[7].id, tasks()[7].id);
  EXPECT_EQ(again[7].features, tasks()[7].features);
  EXPECT_THROW(parse_tasks("{\"id\": 3}\n"), ConfigError);
}

TEST(Interpret, TemplateTraceAndGold) {
  PlantedExecutor exec(PlantedWorldSpec::adaptivity(0.0, 1));
  const Task& t = task_by_id("simple-00");
  const auto outcome = interpret(bank()[0].ast, t, exec, {});
  const auto* r = std::get_if<ExecutionResult>(&outcome);
  ASSERT_NE(r, nullptr);
  ASSERT_EQ(r->per_call_trace.size(), 2u);
  EXPECT_EQ(r->per_call_trace[0].operator_name, "answer_generate");
  EXPECT_EQ(r->per_call_trace[1].operator_name, "extract_answer");
  EXPECT_EQ(r->output, t.gold);
  EXPECT_GT(r->token_cost.total(), 0);
}

TEST(Interpret, WholeBankRunsWithoutFaults) {
  EchoExecutor exec;
  for (std::size_t i = 0; i < bank().size(); ++i) {
    const auto outcome = interpret(bank()[i].ast, tasks()[0], exec, {});
    ASSERT_TRUE(std::holds_alternative<ExecutionResult>(outcome)) << "bank " << i;
    const auto& r = std::get<ExecutionResult>(outcome);
    // Each static call runs exactly once plus the final extraction.
    EXPECT_EQ(static_cast<std::int64_t>(r.per_call_trace.size()), bank()[i].report.static_call_count + 1)
        << "bank " << i;
  }
}

TEST(Interpret, ConditionalFollowsVerdict) {
  const WorkflowAst ast = parse(
      "workflow { let s = answer_generate() if test(s) { let t = review(pre_solution=s) } "
      "else { let t = custom(instruction=\"x\") } return t }");
  EchoExecutor exec;
  const auto r = std::get<ExecutionResult>(interpret(ast, tasks()[0], exec, {}));
  ASSERT_EQ(r.per_call_trace.size(), 4u);
  EXPECT_EQ(r.per_call_trace[2].operator_name, "review");
  EXPECT_TRUE(r.verdicts.at("s"));
}

TEST(Interpret, WallClockTimeout) {
  SleepyExecutor exec;
  Limits limits;
  limits.wall_clock_timeout = std::chrono::milliseconds(50);
  const auto outcome = interpret(bank()[10].ast, tasks()[0], exec, limits);
  const auto* f = std::get_if<RuntimeFault>(&outcome);
  ASSERT_NE(f, nullptr);
  EXPECT_EQ(f->kind, FaultKind::Timeout);
  EXPECT_GE(f->calls_made, 1);
  EXPECT_LT(f->calls_made, 8);
}

TEST(Interpret, ExecutorFaultBecomesRuntimeFault) {
  FailingExecutor exec;
  const auto outcome = interpret(bank()[3].ast, tasks()[0], exec, {});
  const auto* f = std::get_if<RuntimeFault>(&outcome);
  ASSERT_NE(f, nullptr);
  EXPECT_EQ(f->kind, FaultKind::ExecutorFault);
  EXPECT_EQ(f->calls_made, 0);
  EXPECT_NE(f->message.find("connection reset"), std::string::npos);
}

TEST(Interpret, UnregisteredOperatorFaultsWithRegistry) {
  const WorkflowAst ast = parse("workflow { let s = reviser(draft=\"x\") return s }");
  EchoExecutor exec;
  const OperatorRegistry reg;
  InterpretOptions opts;
  opts.registry = &reg;
  const auto outcome = interpret(ast, tasks()[0], exec, {}, opts);
  ASSERT_TRUE(std::holds_alternative<RuntimeFault>(outcome));
  EXPECT_EQ(std::get<RuntimeFault>(outcome).kind, FaultKind::UnknownOperator);
}

TEST(Planted, RuleParsing) {
  const PlantedRule r = PlantedRule::parse("max_calls 2; requires programmer,sc_ensemble");
  EXPECT_EQ(r.max_calls, 2);
  EXPECT_EQ(r.requires_ops, (std::set<std::string>{"programmer", "sc_ensemble"}));
  EXPECT_EQ(PlantedRule::parse(r.to_string()).to_string(), r.to_string());
  EXPECT_THROW(PlantedRule::parse("at_most 2"), ConfigError);
}

TEST(Planted, AdaptivityRules) {
  PlantedExecutor exec(PlantedWorldSpec::adaptivity(0.0, 1));
  const Task& simple = task_by_id("simple-03");
  const Task& complex = task_by_id("complex-04");
  for (std::size_t i = 0; i < bank().size(); ++i) {
    const auto profile = WorkflowProfile::of(bank()[i].ast);
    const bool wants_simple = profile.static_call_count <= 2;
    const bool wants_complex = profile.operators.count("programmer") && profile.operators.count("sc_ensemble");
    EXPECT_EQ(exec.rule_verdict(simple, profile), wants_simple) << i;
    EXPECT_EQ(exec.rule_verdict(complex, profile), wants_complex) << i;
  }
  const auto r = std::get<ExecutionResult>(interpret(bank()[6].ast, complex, exec, {}));
  EXPECT_EQ(r.output, complex.gold);
  const auto wrong = std::get<ExecutionResult>(interpret(bank()[0].ast, complex, exec, {}));
  EXPECT_EQ(wrong.output, kPlantedWrongAnswer);
}

TEST(Planted, NoiseIsReproducibleAndNearRate) {
  PlantedExecutor a(PlantedWorldSpec::adaptivity(0.2, 99));
  PlantedExecutor b(PlantedWorldSpec::adaptivity(0.2, 99));
  PlantedExecutor c(PlantedWorldSpec::adaptivity(0.2, 100));
  const auto profile = WorkflowProfile::of(bank()[4].ast);
  int flips = 0;
  int differs = 0;
  const int n = 20000;
  for (int s = 0; s < n; ++s) {
    const Task& t = tasks()[static_cast<std::size_t>(s) % tasks().size()];
    const bool fa = a.flipped(t, profile, static_cast<std::uint64_t>(s));
    EXPECT_EQ(fa, b.flipped(t, profile, static_cast<std::uint64_t>(s)));
    flips += fa;
    differs += fa != c.flipped(t, profile, static_cast<std::uint64_t>(s));
  }
  EXPECT_NEAR(static_cast<double>(flips) / n, 0.2, 0.02);
  EXPECT_GT(differs, 0);
  EXPECT_THROW(PlantedExecutor(PlantedWorldSpec::adaptivity(0.5, 1)), DomainError);
}

namespace {

// Loopback chat-completions stub. Responds with the queued statuses in order,
// then 200 with canned content.
class StubServer {
 public:
  explicit StubServer(std::vector<int> statuses) : statuses_(std::move(statuses)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body);
      last_model_ = body.at("model").get<std::string>();
      auth_ = req.get_header_value("Authorization");
      const std::size_t n = hits_++;
      if (n < statuses_.size()) {
        res.status = statuses_[n];
        res.set_content("{}", "application/json");
        return;
      }
      nlohmann::json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "canned answer"}}}}}},
                              {"usage", {{"prompt_tokens", 11}, {"completion_tokens", 2}}}};
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  EndpointConfig endpoint() const {
    EndpointConfig cfg;
    cfg.url = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
    cfg.model = "stub-model";
    cfg.api_key_env = "SCOREFLOW_TEST_KEY";
    cfg.initial_backoff = std::chrono::milliseconds(1);
    cfg.request_timeout = std::chrono::milliseconds(5000);
    return cfg;
  }

  std::size_t hits() const { return hits_; }
  std::string last_model_;
  std::string auth_;

 private:
  httplib::Server server_;
  std::vector<int> statuses_;
  std::atomic<std::size_t> hits_{0};
  int port_ = 0;
  std::thread thread_;
};

ExecutorRequest sample_request() {
  ExecutorRequest r;
  r.operator_name = "review";
  r.task_prompt = "What is 2 + 2?";
  r.kwarg_values = {{"pre_solution", std::string("4")}};
  return r;
}

}  // namespace

TEST(Remote, ReturnsCannedContent) {
  ::setenv("SCOREFLOW_TEST_KEY", "sk-test", 1);
  StubServer stub({});
  RemoteExecutor exec(stub.endpoint());
  const ExecutorResponse r = exec.call(sample_request());
  EXPECT_EQ(r.text, "canned answer");
  EXPECT_EQ(r.attempts, 1);
  EXPECT_EQ(r.prompt_tokens, 11);
  EXPECT_EQ(r.completion_tokens, 2);
  EXPECT_EQ(stub.last_model_, "stub-model");
  EXPECT_EQ(stub.auth_, "Bearer sk-test");
}

TEST(Remote, RetriesServerErrors) {
  ::setenv("SCOREFLOW_TEST_KEY", "sk-test", 1);
  StubServer stub({500, 500});
  RemoteExecutor exec(stub.endpoint());
  const ExecutorResponse r = exec.call(sample_request());
  EXPECT_EQ(r.text, "canned answer");
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(stub.hits(), 3u);
}

TEST(Remote, GivesUpAfterMaxAttempts) {
  ::setenv("SCOREFLOW_TEST_KEY", "sk-test", 1);
  StubServer stub({503, 503, 503, 503});
  RemoteExecutor exec(stub.endpoint());
  EXPECT_THROW(exec.call(sample_request()), ExecutorFault);
  EXPECT_EQ(stub.hits(), 3u);
}

TEST(Remote, ClientErrorIsNotRetried) {
  ::setenv("SCOREFLOW_TEST_KEY", "sk-test", 1);
  StubServer stub({400});
  RemoteExecutor exec(stub.endpoint());
  EXPECT_THROW(exec.call(sample_request()), ExecutorFault);
  EXPECT_EQ(stub.hits(), 1u);
}

TEST(Remote, MissingCredential) {
  EndpointConfig cfg;
  cfg.url = "http://127.0.0.1:9/v1/chat/completions";
  cfg.api_key_env = "SCOREFLOW_SURELY_UNSET_KEY";
  ::unsetenv("SCOREFLOW_SURELY_UNSET_KEY");
  EXPECT_THROW(RemoteExecutor{cfg}, CredentialMissing);
}
