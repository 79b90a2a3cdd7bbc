#pragma once

// The outer loop: sample candidates from the generator, score them with the
// executor, build the preference dataset, run Score-DPO, evaluate greedy
// workflows on the held-out splits, repeat.

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scoreflow/operators.hpp"
#include "scoreflow/planted.hpp"
#include "scoreflow/policy.hpp"
#include "scoreflow/preference.hpp"
#include "scoreflow/remote.hpp"
#include "scoreflow/score_dpo.hpp"
#include "scoreflow/scoring.hpp"
#include "scoreflow/workflow_lang.hpp"

namespace scoreflow {

enum class ExecutorMode { Planted, Remote };

const char* to_string(ExecutorMode mode);

struct RunConfig {
  std::string tasks_path;
  std::string bank_path;
  /// Relative weights of the validation and test splits (1:4 by default).
  double validation_fraction = 0.2;
  double test_fraction = 0.8;
  int k = 8;
  int M = 3;
  int resample_cap = 16;

  ExecutorMode executor = ExecutorMode::Planted;
  PlantedWorldSpec planted = PlantedWorldSpec::adaptivity(0.0, 0);
  /// When unset the planted seed follows `seed`.
  std::optional<std::uint64_t> planted_seed;
  EndpointConfig remote;
  std::string operator_prompts_path;

  Metric metric;
  TrainConfig train;
  Limits limits;
  /// category -> bank index used when resampling gives up.
  std::map<std::string, std::size_t> fallback;

  int parallelism = 8;
  std::string output_dir = "scoreflow_out";
  std::uint64_t seed = 0;

  /// Throws ConfigError when an invariant fails.
  void check() const;
  /// Canonical key=value text; parse_run_config(to_text()) reproduces the config.
  std::string to_text() const;
  /// Digest of every field that affects results (not output_dir or parallelism).
  std::string digest() const;
  std::size_t fallback_index(const std::string& category) const;
  std::uint64_t effective_planted_seed() const { return planted_seed.value_or(seed); }
};

/// Flat key=value text, '#' comments. Unknown keys, malformed values and
/// invariant violations are ConfigErrors. Relative paths resolve against
/// `base_dir` when it is nonempty.
RunConfig parse_run_config(const std::string& text, const std::string& base_dir = {});
RunConfig load_run_config(const std::string& path);

struct TaskSplit {
  std::vector<Task> validation;
  std::vector<Task> test;
};

/// Stratified by category: each category is shuffled with a seeded stream and
/// cut in the validation:test ratio (at least one task per side when the
/// category has two or more).
TaskSplit split_tasks(const std::vector<Task>& tasks, double validation_fraction, double test_fraction,
                      std::uint64_t seed);

struct Candidate {
  std::size_t bank_index = 0;
  int resamples = 0;
  bool fell_back = false;
};

/// k policy draws; a draw naming an invalid program is redrawn up to
/// resample_cap times, then replaced by `fallback_index`.
std::vector<Candidate> generate_candidates(const Task& task, const PolicyParams& policy, const WorkflowBank& bank,
                                           int k, int resample_cap, std::size_t fallback_index, Rng& rng);

struct SplitEvaluation {
  double solve_rate = 0.0;
  std::vector<std::size_t> chosen;  // bank index per task
  std::vector<double> scores;
  std::int64_t executor_calls = 0;
  TokenCost token_cost;
};

struct IterationState {
  int iteration = 0;
  std::vector<std::vector<ScoredCandidate>> candidates;  // per validation task
  PreferenceDataset dataset;
  TrainStats stats;
  std::vector<TrainStats> epoch_stats;
  bool trained = false;
  SplitEvaluation validation;
  SplitEvaluation test;
  std::int64_t collection_calls = 0;
  TokenCost collection_tokens;
  int resamples = 0;
  int fallbacks = 0;
  int cstar_failures = 0;
  std::string checkpoint_path;
  std::string preferences_path;
};

struct Report {
  std::string config_digest;
  std::string bank_digest;
  SplitEvaluation baseline_validation;
  SplitEvaluation baseline_test;
  /// Mean score of a uniformly random bank draw on the test split.
  std::optional<double> uniform_test_hit_rate;
  std::vector<IterationState> iterations;
  double final_validation_solve_rate = 0.0;
  double final_test_solve_rate = 0.0;
  bool converged = false;
  std::string stop_reason;
  std::chrono::milliseconds wall_clock{0};
  std::int64_t total_executor_calls = 0;
  TokenCost total_token_cost;
};

/// Everything a run needs, loaded once.
class Pipeline {
 public:
  /// Loads tasks and bank and builds the executor. Throws ConfigError,
  /// IoError or CredentialMissing.
  explicit Pipeline(RunConfig cfg);
  /// For tests and embedding: supply tasks, bank and executor directly.
  Pipeline(RunConfig cfg, std::vector<Task> tasks, WorkflowBank bank, std::shared_ptr<Executor> executor);

  const RunConfig& config() const noexcept { return cfg_; }
  const WorkflowBank& bank() const noexcept { return bank_; }
  const TaskSplit& split() const noexcept { return split_; }
  Executor& executor() noexcept { return *executor_; }

  /// Greedy (argmax) workflow per task, scored with an iteration-independent
  /// salt so every arm sees the same evaluation noise.
  SplitEvaluation evaluate_split(const PolicyParams& policy, const std::vector<Task>& tasks);

  /// One pass of collect, train, evaluate. `policy` and `reference` are
  /// updated in place. When `output_dir` is nonempty the checkpoint and
  /// preference file are written there.
  IterationState run_iteration(int iteration, PolicyParams& policy, PolicyParams& reference,
                               const std::string& output_dir);

  /// Up to M iterations with early stop on validation convergence. Writes
  /// metrics.csv, train_stats.csv and report.json when `write_outputs`.
  Report run(bool write_outputs = true);

 private:
  void init();
  std::size_t feature_length() const;

  RunConfig cfg_;
  std::vector<Task> tasks_;
  WorkflowBank bank_;
  std::shared_ptr<Executor> executor_;
  OperatorRegistry registry_;
  TaskSplit split_;
};

Report run(const RunConfig& cfg);

struct AblationRow {
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::string label;
  double baseline_test_solve_rate = 0.0;
  double final_test_solve_rate = 0.0;
  double final_validation_solve_rate = 0.0;
  int iterations = 0;
};

/// The d(x, y) sweep. alpha = 0 is the plain DPO arm (unit reward weights,
/// uniform sampling); other values use score weighting with d = gap^alpha.
/// All arms share seeds, splits and candidate draws up to policy divergence.
/// One row per (seed, alpha).
std::vector<AblationRow> ablate(const RunConfig& cfg, const std::vector<double>& alphas,
                                const std::vector<std::uint64_t>& seeds);

std::string ablation_csv(const std::vector<AblationRow>& rows);

/// CSV: iteration, split, solve_rate, mean_loss, fraction_r_in_unit_ball,
/// executor_calls, token_cost. Two rows per iteration.
std::string metrics_csv(const Report& report);
void emit_metrics(const Report& report, const std::string& path);

/// Per-epoch training stream: iteration, epoch, samples_seen, mean_loss,
/// grad_norm, fraction_r_in_unit_ball.
std::string train_stats_csv(const Report& report);

std::string report_json(const Report& report);

/// Shortest round-trip decimal form.
std::string format_double(double v);

/// Runs fn(0..n-1) on up to `threads` workers. Exceptions propagate (first
/// by index wins).
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

inline constexpr double kReferenceConditionRate = 0.911;

}  // namespace scoreflow
