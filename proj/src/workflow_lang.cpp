#include "scoreflow/workflow_lang.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <optional>

#include "scoreflow/digest.hpp"
#include "scoreflow/errors.hpp"

namespace scoreflow {

namespace {

constexpr int kMaxNesting = 64;
constexpr std::int64_t kMaxRepeatLiteral = 1'000'000'000;

enum class Tok { Word, Int, String, LBrace, RBrace, LParen, RParen, LBracket, RBracket, Equals, Comma, End };

const char* describe(Tok t) {
  switch (t) {
    case Tok::Word:
      return "identifier";
    case Tok::Int:
      return "integer";
    case Tok::String:
      return "string";
    case Tok::LBrace:
      return "'{'";
    case Tok::RBrace:
      return "'}'";
    case Tok::LParen:
      return "'('";
    case Tok::RParen:
      return "')'";
    case Tok::LBracket:
      return "'['";
    case Tok::RBracket:
      return "']'";
    case Tok::Equals:
      return "'='";
    case Tok::Comma:
      return "','";
    case Tok::End:
      return "end of input";
  }
  return "?";
}

struct Token {
  Tok kind = Tok::End;
  std::string text;
  std::int64_t number = 0;
  SourceSpan span;
};

bool is_word_start(char c) { return (c >= 'a' && c <= 'z') || c == '_'; }
bool is_word_char(char c) { return is_word_start(c) || (c >= '0' && c <= '9'); }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_reserved(std::string_view w) {
  return w == "workflow" || w == "let" || w == "push" || w == "repeat" || w == "if" || w == "else" ||
         w == "return";
}

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_trivia();
      Token t;
      t.span = {line_, col_};
      if (pos_ >= src_.size()) {
        t.kind = Tok::End;
        out.push_back(std::move(t));
        return out;
      }
      const char c = src_[pos_];
      if (is_word_start(c)) {
        const std::size_t start = pos_;
        while (pos_ < src_.size() && is_word_char(src_[pos_])) {
          advance();
        }
        t.kind = Tok::Word;
        t.text = std::string(src_.substr(start, pos_ - start));
      } else if (is_digit(c)) {
        std::int64_t value = 0;
        while (pos_ < src_.size() && is_digit(src_[pos_])) {
          value = value * 10 + (src_[pos_] - '0');
          if (value > kMaxRepeatLiteral) {
            throw SyntaxError(t.span.line, t.span.column, "integer literal too large", "");
          }
          advance();
        }
        if (pos_ < src_.size() && is_word_start(src_[pos_])) {
          throw SyntaxError(line_, col_, "malformed integer literal", "");
        }
        t.kind = Tok::Int;
        t.number = value;
      } else if (c == '"') {
        t.kind = Tok::String;
        t.text = lex_string(t.span);
      } else {
        switch (c) {
          case '{':
            t.kind = Tok::LBrace;
            break;
          case '}':
            t.kind = Tok::RBrace;
            break;
          case '(':
            t.kind = Tok::LParen;
            break;
          case ')':
            t.kind = Tok::RParen;
            break;
          case '[':
            t.kind = Tok::LBracket;
            break;
          case ']':
            t.kind = Tok::RBracket;
            break;
          case '=':
            t.kind = Tok::Equals;
            break;
          case ',':
            t.kind = Tok::Comma;
            break;
          default:
            throw SyntaxError(line_, col_, "unexpected character " + printable(c), "");
        }
        advance();
      }
      out.push_back(std::move(t));
    }
  }

 private:
  static std::string printable(char c) {
    const auto u = static_cast<unsigned char>(c);
    if (u >= 0x20 && u < 0x7f) {
      return std::string("'") + c + "'";
    }
    return "byte 0x" + hex64(u).substr(14);
  }

  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_trivia() {
    while (pos_ < src_.size()) {
      const char c = src_[pos_];
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        advance();
      } else if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') {
          advance();
        }
      } else {
        return;
      }
    }
  }

  std::string lex_string(const SourceSpan& open) {
    advance();  // opening quote
    std::string value;
    for (;;) {
      if (pos_ >= src_.size()) {
        throw SyntaxError(open.line, open.column, "unterminated string literal", "'\"'");
      }
      const char c = src_[pos_];
      if (c == '"') {
        advance();
        return value;
      }
      if (c == '\\') {
        advance();
        if (pos_ >= src_.size()) {
          throw SyntaxError(open.line, open.column, "unterminated string literal", "'\"'");
        }
        const char e = src_[pos_];
        if (e != '\\' && e != '"') {
          throw SyntaxError(line_, col_, "invalid escape " + printable(e), "'\\\\' or '\\\"'");
        }
        value.push_back(e);
        advance();
        continue;
      }
      value.push_back(c);
      advance();
    }
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

class Parser {
 public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  WorkflowAst workflow() {
    expect_word("workflow");
    expect(Tok::LBrace);
    WorkflowAst ast;
    ast.statements = block_until_return();
    ast.return_span = peek().span;
    expect_word("return");
    ast.return_var = name("return expression");
    expect(Tok::RBrace);
    expect(Tok::End);
    return ast;
  }

 private:
  const Token& peek() const { return toks_[pos_]; }
  bool peek_word(std::string_view w) const { return peek().kind == Tok::Word && peek().text == w; }

  [[noreturn]] void fail(const std::string& message, const std::string& expected) const {
    throw SyntaxError(peek().span.line, peek().span.column, message, expected);
  }

  Token expect(Tok kind) {
    if (peek().kind != kind) {
      fail(std::string("unexpected ") + describe(peek().kind), describe(kind));
    }
    return toks_[pos_++];
  }

  void expect_word(std::string_view w) {
    if (!peek_word(w)) {
      fail(std::string("unexpected ") + describe(peek().kind), "'" + std::string(w) + "'");
    }
    ++pos_;
  }

  std::string name(const char* what) {
    if (peek().kind != Tok::Word) {
      fail(std::string("unexpected ") + describe(peek().kind), what);
    }
    if (is_reserved(peek().text)) {
      fail("reserved word '" + peek().text + "' used as a name", what);
    }
    return toks_[pos_++].text;
  }

  Block block_until_return() {
    Block out;
    while (!peek_word("return")) {
      out.push_back(statement());
    }
    return out;
  }

  Block braced_block() {
    expect(Tok::LBrace);
    if (++depth_ > kMaxNesting) {
      fail("nesting too deep", "");
    }
    Block out;
    while (peek().kind != Tok::RBrace) {
      out.push_back(statement());
    }
    --depth_;
    expect(Tok::RBrace);
    return out;
  }

  Statement statement() {
    Statement st;
    st.span = peek().span;
    if (peek_word("let")) {
      ++pos_;
      std::string target = name("variable name");
      expect(Tok::Equals);
      if (peek().kind == Tok::LBracket) {
        ++pos_;
        expect(Tok::RBracket);
        st.node = LetEmptyList{std::move(target)};
      } else {
        st.node = Let{std::move(target), call()};
      }
    } else if (peek_word("push")) {
      ++pos_;
      Push p;
      p.list = name("list name");
      expect(Tok::Comma);
      p.value = name("variable name");
      st.node = std::move(p);
    } else if (peek_word("repeat")) {
      ++pos_;
      Repeat r;
      const Token count = expect(Tok::Int);
      if (count.number < 1) {
        throw SyntaxError(count.span.line, count.span.column, "repeat bound must be at least 1", "");
      }
      r.count = static_cast<int>(count.number);
      r.body = braced_block();
      st.node = std::move(r);
    } else if (peek_word("if")) {
      ++pos_;
      expect_word("test");
      expect(Tok::LParen);
      IfTest t;
      t.subject = name("variable name");
      expect(Tok::RParen);
      t.then_body = braced_block();
      expect_word("else");
      t.else_body = braced_block();
      st.node = std::move(t);
    } else {
      fail(std::string("unexpected ") + describe(peek().kind), "'let', 'push', 'repeat', 'if' or 'return'");
    }
    return st;
  }

  Call call() {
    Call c;
    c.op = name("operator name");
    expect(Tok::LParen);
    if (peek().kind != Tok::RParen) {
      c.kwargs.push_back(kwarg());
      while (peek().kind == Tok::Comma) {
        ++pos_;
        c.kwargs.push_back(kwarg());
      }
    }
    expect(Tok::RParen);
    return c;
  }

  Kwarg kwarg() {
    Kwarg k;
    k.name = name("argument name");
    expect(Tok::Equals);
    if (peek().kind == Tok::String) {
      k.value = StringLit{toks_[pos_++].text};
    } else if (peek().kind == Tok::LBracket) {
      ++pos_;
      ListExpr list;
      list.names.push_back(name("variable name"));
      while (peek().kind == Tok::Comma) {
        ++pos_;
        list.names.push_back(name("variable name"));
      }
      expect(Tok::RBracket);
      k.value = std::move(list);
    } else if (peek().kind == Tok::Word) {
      k.value = VarRef{name("variable name")};
    } else {
      fail(std::string("unexpected ") + describe(peek().kind), "string, identifier or '['");
    }
    return k;
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int depth_ = 0;
};

// ---------------------------------------------------------------- printing

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out.push_back('\\');
    }
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string print_call(const Call& c) {
  std::string out = c.op + "(";
  for (std::size_t i = 0; i < c.kwargs.size(); ++i) {
    if (i > 0) {
      out += ", ";
    }
    const Kwarg& k = c.kwargs[i];
    out += k.name + "=";
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, StringLit>) {
            out += quote(v.value);
          } else if constexpr (std::is_same_v<T, VarRef>) {
            out += v.name;
          } else {
            out += "[";
            for (std::size_t j = 0; j < v.names.size(); ++j) {
              out += (j > 0 ? ", " : "") + v.names[j];
            }
            out += "]";
          }
        },
        k.value);
  }
  return out + ")";
}

// Canonical output is a single line; pretty output indents two spaces per
// nesting level and is what bank files are written with.
struct Printer {
  bool pretty = false;
  std::string out;

  void newline(int depth) {
    if (pretty) {
      out += "\n" + std::string(static_cast<std::size_t>(depth) * 2, ' ');
    } else {
      out += " ";
    }
  }

  void block(const Block& b, int depth) {
    out += "{";
    for (const auto& st : b) {
      newline(depth + 1);
      statement(st, depth + 1);
    }
    newline(depth);
    out += "}";
  }

  void statement(const Statement& st, int depth) {
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Let>) {
            out += "let " + n.name + " = " + print_call(n.call);
          } else if constexpr (std::is_same_v<T, LetEmptyList>) {
            out += "let " + n.name + " = []";
          } else if constexpr (std::is_same_v<T, Push>) {
            out += "push " + n.list + ", " + n.value;
          } else if constexpr (std::is_same_v<T, Repeat>) {
            out += "repeat " + std::to_string(n.count) + " ";
            block(n.body, depth);
          } else {
            out += "if test(" + n.subject + ") ";
            block(n.then_body, depth);
            out += " else ";
            block(n.else_body, depth);
          }
        },
        st.node);
  }

  void workflow(const WorkflowAst& ast) {
    out += "workflow {";
    for (const auto& st : ast.statements) {
      newline(1);
      statement(st, 1);
    }
    newline(1);
    out += "return " + ast.return_var;
    newline(0);
    out += "}";
  }
};

// -------------------------------------------------------------- validation

enum class VarKind { String, List };

using Scope = std::map<std::string, VarKind>;

std::int64_t saturating_mul(std::int64_t a, std::int64_t b) {
  constexpr std::int64_t kMax = std::numeric_limits<std::int64_t>::max() / 4;
  if (a != 0 && b > kMax / a) {
    return kMax;
  }
  return a * b;
}

std::int64_t count_block(const Block& b) {
  std::int64_t total = 0;
  for (const auto& st : b) {
    if (std::holds_alternative<Let>(st.node)) {
      total += 1;
    } else if (const auto* r = std::get_if<Repeat>(&st.node)) {
      total += saturating_mul(r->count, count_block(r->body));
    } else if (const auto* t = std::get_if<IfTest>(&st.node)) {
      total += std::max(count_block(t->then_body), count_block(t->else_body));
    }
  }
  return total;
}

class Validator {
 public:
  Validator(const OperatorRegistry& reg, const Limits& limits, ValidationReport& report)
      : reg_(reg), limits_(limits), report_(report) {}

  void block(const Block& b, Scope& scope) {
    for (const auto& st : b) {
      statement(st, scope);
    }
  }

  void use_string(const std::string& name, const Scope& scope, const SourceSpan& span) {
    auto it = scope.find(name);
    if (it == scope.end()) {
      add(ViolationCode::UnboundVariable, "variable '" + name + "' used before assignment", span);
    } else if (it->second != VarKind::String) {
      add(ViolationCode::KindMismatch, "variable '" + name + "' is a list where a string is required", span);
    }
  }

  void bind(const std::string& name, VarKind kind, Scope& scope, const SourceSpan& span) {
    auto [it, inserted] = scope.emplace(name, kind);
    if (!inserted && it->second != kind) {
      add(ViolationCode::KindMismatch, "variable '" + name + "' rebound with a different kind", span);
      it->second = kind;
    }
  }

  void add(ViolationCode code, std::string message, const SourceSpan& span) {
    report_.violations.push_back({code, std::move(message), span});
  }

 private:
  void statement(const Statement& st, Scope& scope) {
    std::visit(
        [&](const auto& n) {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, Let>) {
            call(n.call, scope, st.span);
            bind(n.name, VarKind::String, scope, st.span);
          } else if constexpr (std::is_same_v<T, LetEmptyList>) {
            bind(n.name, VarKind::List, scope, st.span);
          } else if constexpr (std::is_same_v<T, Push>) {
            auto it = scope.find(n.list);
            if (it == scope.end()) {
              add(ViolationCode::UnboundVariable, "list '" + n.list + "' used before assignment", st.span);
            } else if (it->second != VarKind::List) {
              add(ViolationCode::KindMismatch, "push target '" + n.list + "' is not a list", st.span);
            }
            use_string(n.value, scope, st.span);
          } else if constexpr (std::is_same_v<T, Repeat>) {
            if (n.count > limits_.max_loop_bound) {
              add(ViolationCode::LoopBoundExceeded,
                  "loop bound " + std::to_string(n.count) + " exceeds " + std::to_string(limits_.max_loop_bound),
                  st.span);
            }
            block(n.body, scope);
          } else {
            if (!reg_.contains("test")) {
              add(ViolationCode::UnknownOperator, "conditional requires the test operator", st.span);
            }
            use_string(n.subject, scope, st.span);
            Scope then_scope = scope;
            Scope else_scope = scope;
            block(n.then_body, then_scope);
            block(n.else_body, else_scope);
            Scope merged;
            for (const auto& [name, kind] : then_scope) {
              auto it = else_scope.find(name);
              if (it != else_scope.end() && it->second == kind) {
                merged.emplace(name, kind);
              }
            }
            scope = std::move(merged);
          }
        },
        st.node);
  }

  void call(const Call& c, const Scope& scope, const SourceSpan& span) {
    const OperatorSpec* spec = reg_.find(c.op);
    if (spec == nullptr) {
      add(ViolationCode::UnknownOperator, "unknown operator '" + c.op + "'", span);
    }
    std::map<std::string, int> seen;
    for (const auto& k : c.kwargs) {
      if (++seen[k.name] > 1) {
        add(ViolationCode::BadKwarg, "duplicate argument '" + k.name + "' to " + c.op, span);
      }
      const KwargSpec* ks = nullptr;
      if (spec != nullptr) {
        auto it = std::find_if(spec->kwarg_schema.begin(), spec->kwarg_schema.end(),
                               [&](const KwargSpec& s) { return s.name == k.name; });
        if (it == spec->kwarg_schema.end()) {
          add(ViolationCode::BadKwarg, "operator " + c.op + " has no argument '" + k.name + "'", span);
        } else {
          ks = &*it;
        }
      }
      argument(c.op, k, ks, scope, span);
    }
    if (spec != nullptr) {
      for (const auto& s : spec->kwarg_schema) {
        if (!seen.contains(s.name)) {
          add(ViolationCode::BadKwarg, "operator " + c.op + " is missing argument '" + s.name + "'", span);
        }
      }
    }
  }

  void argument(const std::string& op, const Kwarg& k, const KwargSpec* ks, const Scope& scope,
                const SourceSpan& span) {
    const std::string where = "argument '" + k.name + "' of " + op;
    if (const auto* v = std::get_if<VarRef>(&k.value)) {
      auto it = scope.find(v->name);
      if (it == scope.end()) {
        add(ViolationCode::UnboundVariable, "variable '" + v->name + "' used before assignment", span);
        return;
      }
      if (ks == nullptr) {
        return;
      }
      if (ks->kind == ArgKind::String) {
        add(ViolationCode::BadKwarg, where + " must be a string literal", span);
      } else if (ks->kind == ArgKind::Var && it->second != VarKind::String) {
        add(ViolationCode::KindMismatch, where + " expects a string variable", span);
      } else if (ks->kind == ArgKind::List && it->second != VarKind::List) {
        add(ViolationCode::KindMismatch, where + " expects a list", span);
      }
    } else if (const auto* l = std::get_if<ListExpr>(&k.value)) {
      for (const auto& n : l->names) {
        use_string(n, scope, span);
      }
      if (ks != nullptr && ks->kind != ArgKind::List) {
        add(ViolationCode::BadKwarg, where + " does not take a list", span);
      }
    } else if (ks != nullptr && ks->kind != ArgKind::String) {
      add(ViolationCode::BadKwarg, where + " does not take a string literal", span);
    }
  }

  const OperatorRegistry& reg_;
  const Limits& limits_;
  ValidationReport& report_;
};

void collect_ops(const Block& b, std::set<std::string>& out) {
  for (const auto& st : b) {
    if (const auto* l = std::get_if<Let>(&st.node)) {
      out.insert(l->call.op);
    } else if (const auto* r = std::get_if<Repeat>(&st.node)) {
      collect_ops(r->body, out);
    } else if (const auto* t = std::get_if<IfTest>(&st.node)) {
      out.insert("test");
      collect_ops(t->then_body, out);
      collect_ops(t->else_body, out);
    }
  }
}

bool is_separator_line(std::string_view line) {
  while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
    line.remove_suffix(1);
  }
  return line == "---";
}

}  // namespace

const char* to_string(ViolationCode code) {
  switch (code) {
    case ViolationCode::UnknownOperator:
      return "UnknownOperator";
    case ViolationCode::UnboundVariable:
      return "UnboundVariable";
    case ViolationCode::UnboundReturn:
      return "UnboundReturn";
    case ViolationCode::BadKwarg:
      return "BadKwarg";
    case ViolationCode::KindMismatch:
      return "KindMismatch";
    case ViolationCode::LoopBoundExceeded:
      return "LoopBoundExceeded";
    case ViolationCode::CallBudgetExceeded:
      return "CallBudgetExceeded";
    case ViolationCode::InvalidLimits:
      return "InvalidLimits";
  }
  return "?";
}

bool ValidationReport::has(ViolationCode code) const {
  return std::any_of(violations.begin(), violations.end(), [&](const Violation& v) { return v.code == code; });
}

WorkflowAst parse(std::string_view text) { return Parser(Lexer(text).run()).workflow(); }

std::string print(const WorkflowAst& ast) {
  Printer p;
  p.workflow(ast);
  return std::move(p.out);
}

std::int64_t static_call_count(const WorkflowAst& ast) { return count_block(ast.statements); }

std::set<std::string> operators_used(const WorkflowAst& ast) {
  std::set<std::string> out;
  collect_ops(ast.statements, out);
  return out;
}

std::string workflow_digest(const WorkflowAst& ast) { return digest_of(print(ast)); }

ValidationReport validate(const WorkflowAst& ast, const OperatorRegistry& registry, const Limits& limits) {
  ValidationReport report;
  Validator v(registry, limits, report);
  if (limits.max_loop_bound <= 0 || limits.max_static_calls <= 0 || limits.wall_clock_timeout.count() <= 0) {
    v.add(ViolationCode::InvalidLimits, "limits must be strictly positive", {});
  }
  Scope scope;
  v.block(ast.statements, scope);
  auto it = scope.find(ast.return_var);
  if (it == scope.end()) {
    v.add(ViolationCode::UnboundReturn, "returned variable '" + ast.return_var + "' is not bound", ast.return_span);
  } else if (it->second != VarKind::String) {
    v.add(ViolationCode::KindMismatch, "returned variable '" + ast.return_var + "' is a list", ast.return_span);
  }
  report.static_call_count = static_call_count(ast);
  if (report.static_call_count > limits.max_static_calls) {
    v.add(ViolationCode::CallBudgetExceeded,
          "static call count " + std::to_string(report.static_call_count) + " exceeds " +
              std::to_string(limits.max_static_calls),
          {});
  }
  report.ok = report.violations.empty();
  return report;
}

std::vector<WorkflowAst> parse_bank(std::string_view text) {
  std::vector<WorkflowAst> out;
  std::string chunk;
  int chunk_start_line = 1;
  int line_no = 0;
  auto flush = [&] {
    const bool blank = std::all_of(chunk.begin(), chunk.end(), [](char c) {
      return c == ' ' || c == '\t' || c == '\n' || c == '\r';
    });
    if (blank) {
      chunk.clear();
      return;
    }
    try {
      out.push_back(parse(chunk));
    } catch (const SyntaxError& e) {
      throw SyntaxError(e.line() + chunk_start_line - 1, e.column(),
                        "in program " + std::to_string(out.size()) + ": " + e.what(), e.expected());
    }
    chunk.clear();
  };
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    const std::size_t end = nl == std::string_view::npos ? text.size() : nl;
    std::string_view line = text.substr(pos, end - pos);
    ++line_no;
    if (is_separator_line(line)) {
      flush();
      chunk_start_line = line_no + 1;
    } else {
      chunk.append(line);
      chunk.push_back('\n');
    }
    if (nl == std::string_view::npos) {
      break;
    }
    pos = nl + 1;
  }
  flush();
  return out;
}

std::string print_bank(const std::vector<WorkflowAst>& programs) {
  std::string out;
  for (std::size_t i = 0; i < programs.size(); ++i) {
    if (i > 0) {
      out += "---\n";
    }
    Printer p;
    p.pretty = true;
    p.workflow(programs[i]);
    out += p.out + "\n";
  }
  return out;
}

}  // namespace scoreflow
