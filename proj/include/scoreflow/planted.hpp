#pragma once

// Deterministic stand-in for an executor LLM. Whether a workflow solves a
// task is decided by a per-category rule over the program's static call
// count and operator set, optionally flipped by seeded noise.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "scoreflow/runtime.hpp"

namespace scoreflow {

struct PlantedRule {
  std::optional<std::int64_t> max_calls;
  std::optional<std::int64_t> min_calls;
  std::set<std::string> requires_ops;

  bool accepts(const WorkflowProfile& profile) const;

  /// "max_calls 2; requires programmer,sc_ensemble" (clauses joined by ';').
  static PlantedRule parse(const std::string& text);
  std::string to_string() const;
};

struct PlantedWorldSpec {
  std::map<std::string, PlantedRule> rules;
  double noise_flip_prob = 0.0;
  std::uint64_t seed = 0;

  /// Simple tasks want at most two calls; complex tasks want programmer
  /// and sc_ensemble together.
  static PlantedWorldSpec adaptivity(double noise_flip_prob, std::uint64_t seed);
};

inline constexpr const char* kPlantedWrongAnswer = "WRONG";

class PlantedExecutor final : public Executor {
 public:
  /// Throws DomainError unless 0 <= noise_flip_prob < 0.5.
  explicit PlantedExecutor(PlantedWorldSpec spec);

  ExecutorResponse call(const ExecutorRequest& request) override;

  /// The noise-free verdict for (task, workflow).
  bool rule_verdict(const Task& task, const WorkflowProfile& profile) const;
  /// True when noise flips the verdict for this evaluation.
  bool flipped(const Task& task, const WorkflowProfile& profile, std::uint64_t salt) const;

  const PlantedWorldSpec& spec() const noexcept { return spec_; }

 private:
  PlantedWorldSpec spec_;
};

}  // namespace scoreflow
