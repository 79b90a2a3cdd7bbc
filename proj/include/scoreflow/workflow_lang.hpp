#pragma once

// The workflow description language: a closed DSL with sequences, bounded
// loops, test-gated conditionals and list ensembling.
//
//   workflow := "workflow" "{" stmt* "return" expr "}"
//   stmt     := "let" IDENT "=" call | "let" IDENT "=" "[" "]" | "push" IDENT "," expr
//             | "repeat" INT "{" stmt* "}"
//             | "if" "test" "(" expr ")" "{" stmt* "}" "else" "{" stmt* "}"
//   call     := IDENT "(" (kwarg ("," kwarg)*)? ")"
//   kwarg    := IDENT "=" (STRING | IDENT | "[" IDENT ("," IDENT)* "]")
//   expr     := IDENT
//
// STRING is double-quoted with \\ and \" escapes; "#" starts a line comment.

#include <chrono>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "scoreflow/operators.hpp"

namespace scoreflow {

struct SourceSpan {
  int line = 0;
  int column = 0;

  // Spans are diagnostics only; they never take part in structural equality.
  friend bool operator==(const SourceSpan&, const SourceSpan&) { return true; }
};

struct StringLit {
  std::string value;
  bool operator==(const StringLit&) const = default;
};

struct VarRef {
  std::string name;
  bool operator==(const VarRef&) const = default;
};

struct ListExpr {
  std::vector<std::string> names;
  bool operator==(const ListExpr&) const = default;
};

using ArgValue = std::variant<StringLit, VarRef, ListExpr>;

struct Kwarg {
  std::string name;
  ArgValue value;
  bool operator==(const Kwarg&) const = default;
};

struct Call {
  std::string op;
  std::vector<Kwarg> kwargs;
  bool operator==(const Call&) const = default;
};

struct Statement;
using Block = std::vector<Statement>;

struct Let {
  std::string name;
  Call call;
  bool operator==(const Let&) const = default;
};

struct LetEmptyList {
  std::string name;
  bool operator==(const LetEmptyList&) const = default;
};

struct Push {
  std::string list;
  std::string value;
  bool operator==(const Push&) const = default;
};

struct Repeat {
  int count = 1;
  Block body;
  bool operator==(const Repeat&) const;
};

struct IfTest {
  std::string subject;
  Block then_body;
  Block else_body;
  bool operator==(const IfTest&) const;
};

struct Statement {
  std::variant<Let, LetEmptyList, Push, Repeat, IfTest> node;
  SourceSpan span;
  bool operator==(const Statement&) const = default;
};

inline bool Repeat::operator==(const Repeat& o) const { return count == o.count && body == o.body; }
inline bool IfTest::operator==(const IfTest& o) const {
  return subject == o.subject && then_body == o.then_body && else_body == o.else_body;
}

struct WorkflowAst {
  Block statements;
  std::string return_var;
  SourceSpan return_span;
  bool operator==(const WorkflowAst&) const = default;
};

struct Limits {
  int max_loop_bound = 10;
  int max_static_calls = 50;
  std::chrono::milliseconds wall_clock_timeout{120'000};
};

enum class ViolationCode {
  UnknownOperator,
  UnboundVariable,
  UnboundReturn,
  BadKwarg,
  KindMismatch,
  LoopBoundExceeded,
  CallBudgetExceeded,
  InvalidLimits,
};

const char* to_string(ViolationCode code);

struct Violation {
  ViolationCode code;
  std::string message;
  SourceSpan span;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Violation> violations;
  std::int64_t static_call_count = 0;

  bool has(ViolationCode code) const;
};

/// Throws SyntaxError on malformed input; never aborts on any byte sequence.
WorkflowAst parse(std::string_view text);

/// Canonical text; parse(print(a)) == a.
std::string print(const WorkflowAst& ast);

/// Static half of the executability condition.
ValidationReport validate(const WorkflowAst& ast, const OperatorRegistry& registry, const Limits& limits);

/// Call nodes weighted by enclosing loop bounds, with conditionals
/// contributing the larger of their two branches.
std::int64_t static_call_count(const WorkflowAst& ast);

/// Operator names appearing anywhere in the program, including the
/// implicit test of each conditional.
std::set<std::string> operators_used(const WorkflowAst& ast);

/// Stable hash of the canonical text.
std::string workflow_digest(const WorkflowAst& ast);

/// Splits a bank file on lines containing only "---" and parses each part.
std::vector<WorkflowAst> parse_bank(std::string_view text);
std::string print_bank(const std::vector<WorkflowAst>& programs);

}  // namespace scoreflow
