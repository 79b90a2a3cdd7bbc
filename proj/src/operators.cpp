#include "scoreflow/operators.hpp"

#include "scoreflow/errors.hpp"

namespace scoreflow {

const char* to_string(ArgKind kind) {
  switch (kind) {
    case ArgKind::String:
      return "string";
    case ArgKind::Var:
      return "var";
    case ArgKind::List:
      return "list";
  }
  return "?";
}

const std::vector<OperatorSpec>& OperatorRegistry::catalog() {
  static const std::vector<OperatorSpec> kCatalog = {
      {"custom", {{"instruction", ArgKind::String}}, false},
      {"answer_generate", {}, false},
      {"code_generate", {{"instruction", ArgKind::String}}, false},
      {"programmer", {{"analysis", ArgKind::Var}}, false},
      {"sc_ensemble", {{"solutions", ArgKind::List}}, false},
      {"review", {{"pre_solution", ArgKind::Var}}, false},
      {"test", {{"solution", ArgKind::Var}}, true},
      {"extract_answer", {{"solution", ArgKind::Var}}, false},
  };
  return kCatalog;
}

OperatorRegistry::OperatorRegistry() {
  for (const auto& spec : catalog()) {
    ops_.emplace(spec.name, spec);
  }
}

const OperatorSpec* OperatorRegistry::find(const std::string& name) const {
  auto it = ops_.find(name);
  return it == ops_.end() ? nullptr : &it->second;
}

void OperatorRegistry::add(OperatorSpec spec) {
  if (ops_.contains(spec.name)) {
    throw DuplicateOperator("operator already registered: " + spec.name);
  }
  std::string name = spec.name;
  ops_.emplace(std::move(name), std::move(spec));
}

OperatorRegistry build_registry(std::span<const OperatorSpec> extensions) {
  OperatorRegistry registry;
  for (const auto& spec : extensions) {
    registry.add(spec);
  }
  return registry;
}

}  // namespace scoreflow
