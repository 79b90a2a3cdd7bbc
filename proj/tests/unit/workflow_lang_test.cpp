#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "../support/test_support.hpp"
#include "scoreflow/errors.hpp"
#include "scoreflow/policy.hpp"
#include "scoreflow/workflow_lang.hpp"

using namespace scoreflow;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

ValidationReport check(const std::string& src, Limits limits = {}) {
  return validate(parse(src), OperatorRegistry{}, limits);
}

}  // namespace

TEST(Parse, MinimalTemplate) {
  const WorkflowAst ast = parse("workflow { let s = answer_generate() return s }");
  ASSERT_EQ(ast.statements.size(), 1u);
  const auto* let = std::get_if<Let>(&ast.statements[0].node);
  ASSERT_NE(let, nullptr);
  EXPECT_EQ(let->name, "s");
  EXPECT_EQ(let->call.op, "answer_generate");
  EXPECT_TRUE(let->call.kwargs.empty());
  EXPECT_EQ(ast.return_var, "s");
}

TEST(Parse, UnboundReturnIsGrammatical) {
  const WorkflowAst ast = parse("workflow { return s }");
  EXPECT_TRUE(ast.statements.empty());
  const auto report = validate(ast, OperatorRegistry{}, Limits{});
  EXPECT_FALSE(report.ok);
  EXPECT_TRUE(report.has(ViolationCode::UnboundReturn));
  EXPECT_EQ(report.static_call_count, 0);
}

TEST(Parse, UnclosedParenReportsPosition) {
  try {
    parse("workflow { let s = custom(instruction=\"x\" }");
    FAIL() << "expected SyntaxError";
  } catch (const SyntaxError& e) {
    EXPECT_EQ(e.line(), 1);
    EXPECT_EQ(e.column(), 43);
    EXPECT_NE(e.expected().find(")"), std::string::npos);
  }
}

TEST(Parse, CommentsAndEscapes) {
  const WorkflowAst ast = parse(
      "# header\nworkflow {  # trailing\n let s = custom(instruction=\"say \\\"hi\\\" \\\\ now\")\n return s }");
  const auto& call = std::get<Let>(ast.statements[0].node).call;
  EXPECT_EQ(std::get<StringLit>(call.kwargs[0].value).value, "say \"hi\" \\ now");
}

TEST(Parse, RejectsMalformedInputs) {
  for (const char* src : {"", "workflow", "workflow { }", "workflow { let = custom() return s }",
                          "workflow { repeat 0 { } return s }", "workflow { let s = custom(x=1) return s }",
                          "workflow { let s = answer_generate() return s } extra", "workflow { let S = a() return S }",
                          "workflow { let s = custom(instruction=\"unterminated) return s }",
                          "workflow { if test(s) { } return s }", "workflow { let return = a() return s }"}) {
    EXPECT_THROW(parse(src), SyntaxError) << src;
  }
}

TEST(Parse, ConditionalAndLoop) {
  const WorkflowAst ast = parse(R"(workflow {
    let l = []
    repeat 3 { let s = answer_generate() push l, s }
    let e = sc_ensemble(solutions=l)
    if test(e) { let f = review(pre_solution=e) } else { let f = custom(instruction="retry") }
    return f
  })");
  ASSERT_EQ(ast.statements.size(), 4u);
  EXPECT_EQ(std::get<Repeat>(ast.statements[1].node).count, 3);
  const auto& cond = std::get<IfTest>(ast.statements[3].node);
  EXPECT_EQ(cond.subject, "e");
  EXPECT_EQ(cond.then_body.size(), 1u);
  EXPECT_EQ(cond.else_body.size(), 1u);
}

TEST(Print, MinimalTemplateCanonical) {
  EXPECT_EQ(print(parse("workflow {\n  let s = answer_generate()\n  return s\n}")),
            "workflow { let s = answer_generate() return s }");
}

TEST(Print, CodingTwoGolden) {
  const auto bank = parse_bank(slurp(SCOREFLOW_DATA_DIR "/default_bank.flows"));
  ASSERT_EQ(bank.size(), 11u);
  std::string golden = slurp(SCOREFLOW_TEST_DIR "/golden/coding_2.canonical");
  while (!golden.empty() && golden.back() == '\n') {
    golden.pop_back();
  }
  EXPECT_EQ(print(bank[10]), golden);
}

TEST(Print, BankRoundTrip) {
  const auto bank = parse_bank(slurp(SCOREFLOW_DATA_DIR "/default_bank.flows"));
  for (const auto& ast : bank) {
    EXPECT_EQ(parse(print(ast)), ast);
  }
  EXPECT_EQ(parse_bank(print_bank(bank)), bank);
}

TEST(Print, FuzzedAstRoundTrip) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const WorkflowAst ast = support::random_ast(rng);
    const std::string text = print(ast);
    ASSERT_EQ(parse(text), ast) << text;
    ASSERT_EQ(print(parse(text)), text);
  }
}

TEST(Parse, SurvivesRandomBytes) {
  Rng rng(5);
  int accepted = 0;
  for (int i = 0; i < 100000; ++i) {
    std::string s(uniform_index(rng, 64), '\0');
    for (char& c : s) {
      c = static_cast<char>(uniform_index(rng, 256));
    }
    try {
      parse(s);
      ++accepted;
    } catch (const SyntaxError&) {
    }
  }
  EXPECT_EQ(accepted, 0);
}

TEST(Parse, SurvivesMutatedPrograms) {
  const std::string base = slurp(SCOREFLOW_DATA_DIR "/default_bank.flows");
  Rng rng(9);
  for (int i = 0; i < 5000; ++i) {
    std::string s = base.substr(0, uniform_index(rng, base.size()));
    if (!s.empty()) {
      s[uniform_index(rng, s.size())] = static_cast<char>(uniform_index(rng, 128));
    }
    try {
      parse_bank(s);
    } catch (const SyntaxError&) {
    }
  }
  SUCCEED();
}

TEST(Parse, DeepNestingIsAnErrorNotACrash) {
  std::string src = "workflow { ";
  for (int i = 0; i < 5000; ++i) {
    src += "repeat 1 { ";
  }
  EXPECT_THROW(parse(src), SyntaxError);
}

TEST(Validate, TemplateIsValid) {
  const auto r = check("workflow { let s = answer_generate() return s }");
  EXPECT_TRUE(r.ok);
  EXPECT_TRUE(r.violations.empty());
  EXPECT_EQ(r.static_call_count, 1);
}

TEST(Validate, UnknownOperator) {
  const auto r = check("workflow { let s = magic() return s }");
  EXPECT_FALSE(r.ok);
  EXPECT_TRUE(r.has(ViolationCode::UnknownOperator));
}

TEST(Validate, UnboundVariable) {
  const auto r = check("workflow { let s = review(pre_solution=t) return s }");
  EXPECT_FALSE(r.ok);
  EXPECT_TRUE(r.has(ViolationCode::UnboundVariable));
}

TEST(Validate, BadKwarg) {
  EXPECT_TRUE(check("workflow { let s = custom(prompt=\"x\") return s }").has(ViolationCode::BadKwarg));
  EXPECT_TRUE(check("workflow { let s = custom() return s }").has(ViolationCode::BadKwarg));
  EXPECT_TRUE(check("workflow { let s = answer_generate(x=\"y\") return s }").has(ViolationCode::BadKwarg));
  EXPECT_TRUE(check("workflow { let s = custom(instruction=\"a\", instruction=\"b\") return s }")
                  .has(ViolationCode::BadKwarg));
}

TEST(Validate, KindMismatch) {
  const auto r = check("workflow { let l = [] let s = review(pre_solution=l) return s }");
  EXPECT_FALSE(r.ok);
  EXPECT_TRUE(r.has(ViolationCode::KindMismatch) || r.has(ViolationCode::BadKwarg));
}

TEST(Validate, LoopBoundExceeded) {
  const auto r = check("workflow { repeat 11 { let s = answer_generate() } return s }");
  EXPECT_FALSE(r.ok);
  EXPECT_TRUE(r.has(ViolationCode::LoopBoundExceeded));
}

TEST(Validate, CallBudgetExceeded) {
  const auto r = check(
      "workflow { let l = [] repeat 10 { repeat 6 { let s = answer_generate() push l, s } } "
      "let e = sc_ensemble(solutions=l) return e }");
  EXPECT_FALSE(r.ok);
  EXPECT_TRUE(r.has(ViolationCode::CallBudgetExceeded));
  EXPECT_EQ(r.static_call_count, 61);
}

TEST(Validate, LoopWeightedCount) {
  const auto r = check(
      "workflow { let l = [] repeat 3 { let a = answer_generate() let b = review(pre_solution=a) push l, b } "
      "let e = sc_ensemble(solutions=l) return e }");
  EXPECT_TRUE(r.ok);
  EXPECT_EQ(r.static_call_count, 7);
}

TEST(Validate, ConditionalCountsLargerBranch) {
  const WorkflowAst ast = parse(R"(workflow {
    let s = answer_generate()
    if test(s) {
      let a = review(pre_solution=s)
      let b = review(pre_solution=a)
    } else {
      let a = custom(instruction="1")
      let b = custom(instruction="2")
      let c = custom(instruction="3")
      let d = custom(instruction="4")
      let e = custom(instruction="5")
    }
    return s
  })");
  // 1 + max(2, 5); the implicit test call is not a Call node.
  EXPECT_EQ(static_call_count(ast), 6);
}

TEST(Validate, BranchScopesIntersect) {
  EXPECT_TRUE(check("workflow { let s = answer_generate() if test(s) { let f = review(pre_solution=s) } "
                    "else { let f = custom(instruction=\"x\") } return f }")
                  .ok);
  EXPECT_TRUE(check("workflow { let s = answer_generate() if test(s) { let f = review(pre_solution=s) } "
                    "else { } return f }")
                  .has(ViolationCode::UnboundReturn));
}

TEST(Validate, LoopBodyRunsAtLeastOnce) {
  EXPECT_TRUE(check("workflow { repeat 2 { let s = answer_generate() } return s }").ok);
}

TEST(Validate, CodingOneCountsSix) {
  const auto bank = parse_bank(slurp(SCOREFLOW_DATA_DIR "/default_bank.flows"));
  EXPECT_EQ(static_call_count(bank[9]), 6);
  EXPECT_EQ(static_call_count(bank[10]), 7);
}

TEST(Validate, InvalidLimits) {
  Limits limits;
  limits.max_loop_bound = 0;
  EXPECT_TRUE(check("workflow { let s = answer_generate() return s }", limits).has(ViolationCode::InvalidLimits));
}

TEST(Validate, DeterministicAndOkIffEmpty) {
  Rng rng(3);
  const OperatorRegistry registry;
  for (int i = 0; i < 500; ++i) {
    const WorkflowAst ast = support::random_ast(rng);
    const auto a = validate(ast, registry, Limits{});
    const auto b = validate(ast, registry, Limits{});
    EXPECT_EQ(a.ok, a.violations.empty());
    EXPECT_EQ(a.ok, b.ok);
    EXPECT_EQ(a.violations.size(), b.violations.size());
    EXPECT_EQ(a.static_call_count, b.static_call_count);
  }
}

TEST(Bank, DefaultBankValidAndUnique) {
  const auto bank = WorkflowBank::load(SCOREFLOW_DATA_DIR "/default_bank.flows", OperatorRegistry{}, Limits{});
  EXPECT_EQ(bank.size(), 11u);
  EXPECT_TRUE(bank.all_valid());
  EXPECT_EQ(bank[0].canonical_text, "workflow { let solution = answer_generate() return solution }");
}

TEST(Bank, DuplicateProgramsRejected) {
  const auto a = parse("workflow { let s = answer_generate() return s }");
  EXPECT_THROW(WorkflowBank({a, a}, OperatorRegistry{}, Limits{}), ConfigError);
  EXPECT_THROW(WorkflowBank({a}, OperatorRegistry{}, Limits{}), ConfigError);
}

TEST(Digest, StableAndLayoutIndependent) {
  const auto a = parse("workflow { let s = answer_generate() return s }");
  const auto b = parse("workflow {\n  # same program\n  let s = answer_generate()\n  return s\n}");
  EXPECT_EQ(workflow_digest(a), workflow_digest(b));
  EXPECT_EQ(workflow_digest(a).size(), 16u);
}
