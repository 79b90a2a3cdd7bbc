#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

namespace scoreflow {

enum class ArgKind { String, Var, List };

const char* to_string(ArgKind kind);

struct KwargSpec {
  std::string name;
  ArgKind kind = ArgKind::String;

  bool operator==(const KwargSpec&) const = default;
};

struct OperatorSpec {
  std::string name;
  std::vector<KwargSpec> kwarg_schema;
  bool produces_boolean = false;

  bool operator==(const OperatorSpec&) const = default;
};

/// The agent space: the fixed operator catalog plus any extensions.
class OperatorRegistry {
 public:
  /// Catalog only.
  OperatorRegistry();

  const OperatorSpec* find(const std::string& name) const;
  bool contains(const std::string& name) const { return find(name) != nullptr; }
  std::size_t size() const noexcept { return ops_.size(); }
  const std::map<std::string, OperatorSpec>& operators() const noexcept { return ops_; }

  /// Throws DuplicateOperator on a name clash.
  void add(OperatorSpec spec);

  static const std::vector<OperatorSpec>& catalog();

 private:
  std::map<std::string, OperatorSpec> ops_;
};

OperatorRegistry build_registry(std::span<const OperatorSpec> extensions = {});

}  // namespace scoreflow
