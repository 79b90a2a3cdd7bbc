#include "scoreflow/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "scoreflow/digest.hpp"
#include "scoreflow/errors.hpp"

namespace scoreflow {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(ExecutorMode mode) { return mode == ExecutorMode::Planted ? "planted" : "remote"; }

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

// ------------------------------------------------------------------ config

void RunConfig::check() const {
  if (k < 2) {
    throw ConfigError("k must be at least 2");
  }
  if (M < 1) {
    throw ConfigError("M must be at least 1");
  }
  if (resample_cap < 1) {
    throw ConfigError("resample_cap must be at least 1");
  }
  if (!(validation_fraction > 0.0) || !(test_fraction > 0.0)) {
    throw ConfigError("split fractions must be positive");
  }
  if (metric.repeats < 1) {
    throw ConfigError("metric.repeats must be at least 1");
  }
  if (parallelism < 1) {
    throw ConfigError("parallelism must be at least 1");
  }
  if (limits.max_loop_bound < 1 || limits.max_static_calls < 1 || limits.wall_clock_timeout.count() < 1) {
    throw ConfigError("limits must be strictly positive");
  }
  if (!(planted.noise_flip_prob >= 0.0 && planted.noise_flip_prob < 0.5)) {
    throw ConfigError("planted.noise_flip_prob must lie in [0, 0.5)");
  }
  if (remote.max_attempts < 1) {
    throw ConfigError("remote.max_attempts must be at least 1");
  }
  train.check();
}

std::size_t RunConfig::fallback_index(const std::string& category) const {
  const auto it = fallback.find(category);
  return it == fallback.end() ? 0 : it->second;
}

namespace {

std::string bool_text(bool b) { return b ? "true" : "false"; }

void append(std::string& out, const std::string& key, const std::string& value) {
  out += key + " = " + value + "\n";
}

}  // namespace

std::string RunConfig::to_text() const {
  std::string out;
  append(out, "tasks_path", tasks_path);
  append(out, "bank_path", bank_path);
  append(out, "validation_fraction", format_double(validation_fraction));
  append(out, "test_fraction", format_double(test_fraction));
  append(out, "k", std::to_string(k));
  append(out, "M", std::to_string(M));
  append(out, "resample_cap", std::to_string(resample_cap));
  append(out, "executor", scoreflow::to_string(executor));
  append(out, "planted.noise_flip_prob", format_double(planted.noise_flip_prob));
  if (planted_seed) {
    append(out, "planted.seed", std::to_string(*planted_seed));
  }
  for (const auto& [category, rule] : planted.rules) {
    append(out, "planted.rule." + category, rule.to_string());
  }
  append(out, "remote.url", remote.url);
  append(out, "remote.model", remote.model);
  append(out, "remote.api_key_env", remote.api_key_env);
  append(out, "remote.max_attempts", std::to_string(remote.max_attempts));
  append(out, "remote.timeout_ms", std::to_string(remote.request_timeout.count()));
  append(out, "remote.operator_prompts", operator_prompts_path);
  append(out, "metric.kind", scoreflow::to_string(metric.kind));
  append(out, "metric.repeats", std::to_string(metric.repeats));
  append(out, "beta", format_double(train.beta));
  append(out, "eta", format_double(train.eta));
  append(out, "samples_per_iter", std::to_string(train.samples_per_iter));
  append(out, "batch_size", std::to_string(train.batch_size));
  append(out, "reward_weight_mode", scoreflow::to_string(train.reward_weight_mode));
  append(out, "alpha", format_double(train.weight_cfg.alpha));
  append(out, "weight_mode", scoreflow::to_string(train.weight_cfg.mode));
  append(out, "train_method", scoreflow::to_string(train.method));
  append(out, "max_epochs_inner", std::to_string(train.max_epochs_inner));
  append(out, "convergence_eps", format_double(train.convergence_eps));
  append(out, "early_stop", bool_text(train.early_stop));
  append(out, "refresh_reference", bool_text(train.refresh_reference));
  append(out, "max_loop_bound", std::to_string(limits.max_loop_bound));
  append(out, "max_static_calls", std::to_string(limits.max_static_calls));
  append(out, "wall_clock_timeout_ms", std::to_string(limits.wall_clock_timeout.count()));
  for (const auto& [category, index] : fallback) {
    append(out, "fallback." + category, std::to_string(index));
  }
  append(out, "parallelism", std::to_string(parallelism));
  append(out, "output_dir", output_dir);
  append(out, "seed", std::to_string(seed));
  return out;
}

std::string RunConfig::digest() const {
  RunConfig c = *this;
  c.output_dir.clear();
  c.parallelism = 1;
  return digest_of(c.to_text());
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) {
    return {};
  }
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    throw ConfigError("bad value for " + key + ": '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") {
    return true;
  }
  if (value == "false" || value == "0") {
    return false;
  }
  throw ConfigError("bad boolean for " + key + ": '" + value + "'");
}

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty() || base_dir.empty() || fs::path(path).is_absolute()) {
    return path;
  }
  return (fs::path(base_dir) / path).lexically_normal().string();
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& base_dir) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const std::string body = trim(std::string_view(line).substr(0, hash));
    if (body.empty()) {
      continue;
    }
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (!seen.insert(key).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key " + key);
    }
    auto to_int = [&] { return parse_number<int>(key, value); };
    auto to_double = [&] { return parse_number<double>(key, value); };
    auto to_size = [&] { return parse_number<std::size_t>(key, value); };

    if (key == "tasks_path") {
      c.tasks_path = resolve(base_dir, value);
    } else if (key == "bank_path") {
      c.bank_path = resolve(base_dir, value);
    } else if (key == "validation_fraction") {
      c.validation_fraction = to_double();
    } else if (key == "test_fraction") {
      c.test_fraction = to_double();
    } else if (key == "k") {
      c.k = to_int();
    } else if (key == "M") {
      c.M = to_int();
    } else if (key == "resample_cap") {
      c.resample_cap = to_int();
    } else if (key == "executor") {
      if (value == "planted") {
        c.executor = ExecutorMode::Planted;
      } else if (value == "remote") {
        c.executor = ExecutorMode::Remote;
      } else {
        throw ConfigError("executor must be planted or remote");
      }
    } else if (key == "planted.noise_flip_prob") {
      c.planted.noise_flip_prob = to_double();
    } else if (key == "planted.seed") {
      c.planted_seed = parse_number<std::uint64_t>(key, value);
    } else if (key.rfind("planted.rule.", 0) == 0 && key.size() > 13) {
      try {
        c.planted.rules[key.substr(13)] = PlantedRule::parse(value);
      } catch (const Error& e) {
        throw ConfigError(key + ": " + e.what());
      }
    } else if (key == "remote.url") {
      c.remote.url = value;
    } else if (key == "remote.model") {
      c.remote.model = value;
    } else if (key == "remote.api_key_env") {
      c.remote.api_key_env = value;
    } else if (key == "remote.max_attempts") {
      c.remote.max_attempts = to_int();
    } else if (key == "remote.timeout_ms") {
      c.remote.request_timeout = std::chrono::milliseconds(to_int());
    } else if (key == "remote.operator_prompts") {
      c.operator_prompts_path = resolve(base_dir, value);
    } else if (key == "metric.kind") {
      c.metric.kind = metric_kind_from_string(value);
    } else if (key == "metric.repeats") {
      c.metric.repeats = to_int();
    } else if (key == "beta") {
      c.train.beta = to_double();
    } else if (key == "eta") {
      c.train.eta = to_double();
    } else if (key == "samples_per_iter") {
      c.train.samples_per_iter = to_size();
    } else if (key == "batch_size") {
      c.train.batch_size = to_size();
    } else if (key == "reward_weight_mode") {
      c.train.reward_weight_mode = reward_weight_mode_from_string(value);
    } else if (key == "alpha") {
      c.train.weight_cfg.alpha = to_double();
    } else if (key == "weight_mode") {
      c.train.weight_cfg.mode = weight_mode_from_string(value);
    } else if (key == "train_method") {
      c.train.method = train_method_from_string(value);
    } else if (key == "max_epochs_inner") {
      c.train.max_epochs_inner = to_int();
    } else if (key == "convergence_eps") {
      c.train.convergence_eps = to_double();
    } else if (key == "early_stop") {
      c.train.early_stop = parse_bool(key, value);
    } else if (key == "refresh_reference") {
      c.train.refresh_reference = parse_bool(key, value);
    } else if (key == "max_loop_bound") {
      c.limits.max_loop_bound = to_int();
    } else if (key == "max_static_calls") {
      c.limits.max_static_calls = to_int();
    } else if (key == "wall_clock_timeout_ms") {
      c.limits.wall_clock_timeout = std::chrono::milliseconds(to_int());
    } else if (key.rfind("fallback.", 0) == 0 && key.size() > 9) {
      c.fallback[key.substr(9)] = to_size();
    } else if (key == "parallelism") {
      c.parallelism = to_int();
    } else if (key == "output_dir") {
      c.output_dir = resolve(base_dir, value);
    } else if (key == "seed") {
      c.seed = parse_number<std::uint64_t>(key, value);
    } else {
      throw ConfigError("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
  }
  c.train.seed = c.seed;
  c.check();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open config " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), fs::path(path).parent_path().string());
}

// --------------------------------------------------------------- plumbing

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) {
    t.join();
  }
  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

// Independent streams derived from the run seed. Every key is data (task id,
// iteration, candidate index), never scheduling order.
std::uint64_t stream(std::uint64_t seed, std::string_view purpose) { return mix(seed, fnv1a64(purpose)); }

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << content;
}

std::shared_ptr<Executor> make_executor(const RunConfig& cfg) {
  if (cfg.executor == ExecutorMode::Remote) {
    EndpointConfig endpoint = cfg.remote;
    if (!cfg.operator_prompts_path.empty()) {
      endpoint.operator_prompts = load_operator_prompts(cfg.operator_prompts_path);
    }
    return std::make_shared<RemoteExecutor>(std::move(endpoint));
  }
  PlantedWorldSpec spec = cfg.planted;
  spec.seed = cfg.effective_planted_seed();
  return std::make_shared<PlantedExecutor>(std::move(spec));
}

WorkflowBank load_bank(const RunConfig& cfg) {
  if (cfg.bank_path.empty()) {
    throw ConfigError("bank_path is required");
  }
  return WorkflowBank::load(cfg.bank_path, OperatorRegistry{}, cfg.limits);
}

std::vector<Task> load_task_file(const RunConfig& cfg) {
  if (cfg.tasks_path.empty()) {
    throw ConfigError("tasks_path is required");
  }
  return load_tasks(cfg.tasks_path);
}

}  // namespace

TaskSplit split_tasks(const std::vector<Task>& tasks, double validation_fraction, double test_fraction,
                      std::uint64_t seed) {
  std::map<std::string, std::vector<const Task*>> by_category;
  for (const auto& t : tasks) {
    by_category[t.category].push_back(&t);
  }
  const double share = validation_fraction / (validation_fraction + test_fraction);
  std::set<const Task*> to_validation;
  for (auto& [category, members] : by_category) {
    Rng rng(mix(stream(seed, "split"), fnv1a64(category)));
    for (std::size_t i = members.size(); i > 1; --i) {
      std::swap(members[i - 1], members[uniform_index(rng, i)]);
    }
    auto n_val = static_cast<std::size_t>(std::llround(share * static_cast<double>(members.size())));
    if (members.size() >= 2) {
      n_val = std::clamp<std::size_t>(n_val, 1, members.size() - 1);
    }
    to_validation.insert(members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_val));
  }
  // Keep file order inside each split.
  TaskSplit out;
  for (const auto& t : tasks) {
    (to_validation.count(&t) ? out.validation : out.test).push_back(t);
  }
  return out;
}

std::vector<Candidate> generate_candidates(const Task& task, const PolicyParams& policy, const WorkflowBank& bank,
                                           int k, int resample_cap, std::size_t fallback_index, Rng& rng) {
  if (fallback_index >= bank.size()) {
    throw IndexOutOfBank("fallback index " + std::to_string(fallback_index) + " out of range");
  }
  std::vector<Candidate> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    Candidate c;
    c.bank_index = sample_workflow(policy, task.features, rng);
    while (!bank.valid(c.bank_index) && c.resamples < resample_cap) {
      ++c.resamples;
      c.bank_index = sample_workflow(policy, task.features, rng);
    }
    if (!bank.valid(c.bank_index)) {
      c.bank_index = fallback_index;
      c.fell_back = true;
    }
    out.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------- pipeline

Pipeline::Pipeline(RunConfig cfg)
    : Pipeline(cfg, load_task_file(cfg), load_bank(cfg), make_executor(cfg)) {}

Pipeline::Pipeline(RunConfig cfg, std::vector<Task> tasks, WorkflowBank bank, std::shared_ptr<Executor> executor)
    : cfg_(std::move(cfg)), tasks_(std::move(tasks)), bank_(std::move(bank)), executor_(std::move(executor)) {
  init();
}

void Pipeline::init() {
  cfg_.check();
  if (tasks_.empty()) {
    throw ConfigError("task set is empty");
  }
  const std::size_t f = tasks_.front().features.size();
  for (const auto& t : tasks_) {
    if (t.features.size() != f || f == 0) {
      throw ConfigError("task " + t.id + " has feature length " + std::to_string(t.features.size()) + ", expected " +
                        std::to_string(f));
    }
  }
  for (const auto& [category, index] : cfg_.fallback) {
    if (index >= bank_.size() || !bank_.valid(index)) {
      throw ConfigError("fallback." + category + " must name a valid bank program");
    }
  }
  if (!bank_.valid(0) && cfg_.fallback.size() == 0) {
    throw ConfigError("bank program 0 is the default fallback and must be valid");
  }
  split_ = split_tasks(tasks_, cfg_.validation_fraction, cfg_.test_fraction, cfg_.seed);
  if (split_.validation.empty()) {
    throw ConfigError("validation split is empty");
  }
}

std::size_t Pipeline::feature_length() const { return tasks_.front().features.size(); }

SplitEvaluation Pipeline::evaluate_split(const PolicyParams& policy, const std::vector<Task>& tasks) {
  SplitEvaluation out;
  out.chosen.resize(tasks.size());
  out.scores.resize(tasks.size());
  std::vector<WorkflowEvaluation> evals(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    std::size_t idx = argmax_workflow(policy, tasks[i].features);
    if (!bank_.valid(idx)) {
      idx = cfg_.fallback_index(tasks[i].category);
    }
    out.chosen[i] = idx;
  }
  const std::uint64_t salt = stream(cfg_.seed, "evaluate");
  parallel_for(tasks.size(), cfg_.parallelism, [&](std::size_t i) {
    evals[i] = evaluate_workflow(bank_[out.chosen[i]].ast, tasks[i], *executor_, cfg_.metric, cfg_.limits, salt);
  });
  double total = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    out.scores[i] = evals[i].score.value;
    total += evals[i].score.value;
    out.executor_calls += evals[i].executor_calls;
    out.token_cost += evals[i].token_cost;
  }
  out.solve_rate = tasks.empty() ? 0.0 : total / static_cast<double>(tasks.size());
  return out;
}

IterationState Pipeline::run_iteration(int iteration, PolicyParams& policy, PolicyParams& reference,
                                       const std::string& output_dir) {
  IterationState state;
  state.iteration = iteration;
  if (cfg_.train.refresh_reference || iteration == 1) {
    reference = policy;
  }
  const auto& tasks = split_.validation;
  const auto k = static_cast<std::size_t>(cfg_.k);

  // Candidate draws: one stream per (iteration, task).
  std::vector<std::vector<Candidate>> drawn(tasks.size());
  const std::uint64_t gen_seed = mix(stream(cfg_.seed, "generate"), static_cast<std::uint64_t>(iteration));
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    Rng rng(mix(gen_seed, fnv1a64(tasks[t].id)));
    drawn[t] = generate_candidates(tasks[t], policy, bank_, cfg_.k, cfg_.resample_cap,
                                   cfg_.fallback_index(tasks[t].category), rng);
  }

  // Scoring fans out; results land in (task, candidate) slots.
  std::vector<WorkflowEvaluation> evals(tasks.size() * k);
  const std::uint64_t collect_seed = mix(stream(cfg_.seed, "collect"), static_cast<std::uint64_t>(iteration));
  parallel_for(evals.size(), cfg_.parallelism, [&](std::size_t job) {
    const std::size_t t = job / k;
    const std::size_t c = job % k;
    evals[job] = evaluate_workflow(bank_[drawn[t][c].bank_index].ast, tasks[t], *executor_, cfg_.metric, cfg_.limits,
                                   mix(collect_seed, job));
  });

  std::vector<std::vector<PreferencePair>> per_task(tasks.size());
  std::vector<SftExample> sft_examples;
  state.candidates.resize(tasks.size());
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    for (std::size_t c = 0; c < k; ++c) {
      const Candidate& cand = drawn[t][c];
      const WorkflowEvaluation& ev = evals[t * k + c];
      state.resamples += cand.resamples;
      state.fallbacks += cand.fell_back ? 1 : 0;
      state.collection_calls += ev.executor_calls;
      state.collection_tokens += ev.token_cost;
      if (ev.cstar_failed) {
        ++state.cstar_failures;
        continue;
      }
      state.candidates[t].push_back({tasks[t].id, cand.bank_index, bank_[cand.bank_index].digest, ev.score});
      if (ev.score.value > 0.0) {
        sft_examples.push_back({tasks[t].features, cand.bank_index, ev.score.value});
      }
    }
    per_task[t] = build_pairs(state.candidates[t], tasks[t].features);
  }
  state.dataset = aggregate(per_task, iteration, cfg_.digest());

  Rng train_rng(mix(stream(cfg_.seed, "train"), static_cast<std::uint64_t>(iteration)));
  if (cfg_.train.method == TrainMethod::Preference) {
    if (!state.dataset.empty()) {
      TrainResult res = train_inner(policy, reference, state.dataset, cfg_.train, train_rng);
      policy = std::move(res.params);
      state.stats = res.stats;
      state.epoch_stats = std::move(res.epochs);
      state.trained = true;
    }
  } else if (!sft_examples.empty()) {
    TrainStats stats;
    policy = sft_update(policy, sft_examples, cfg_.train, train_rng, &stats);
    state.stats = stats;
    state.epoch_stats = {stats};
    state.trained = true;
  }

  state.validation = evaluate_split(policy, split_.validation);
  state.test = evaluate_split(policy, split_.test);

  if (!output_dir.empty()) {
    fs::create_directories(output_dir);
    state.checkpoint_path = (fs::path(output_dir) / ("checkpoint_" + std::to_string(iteration) + ".json")).string();
    state.preferences_path = (fs::path(output_dir) / ("prefs_" + std::to_string(iteration) + ".jsonl")).string();
    save_checkpoint({policy, reference, cfg_.digest(), rng_state(train_rng), iteration}, state.checkpoint_path);
    save_dataset(state.dataset, state.preferences_path);
  }
  return state;
}

Report Pipeline::run(bool write_outputs) {
  const auto start = std::chrono::steady_clock::now();
  Report report;
  report.config_digest = cfg_.digest();
  report.bank_digest = bank_.digest();

  PolicyParams policy = PolicyParams::zeros(bank_.size(), feature_length(), bank_.digest());
  PolicyParams reference = policy;

  report.baseline_validation = evaluate_split(policy, split_.validation);
  report.baseline_test = evaluate_split(policy, split_.test);
  report.total_executor_calls = report.baseline_validation.executor_calls + report.baseline_test.executor_calls;
  report.total_token_cost += report.baseline_validation.token_cost;
  report.total_token_cost += report.baseline_test.token_cost;

  // Expected score of a uniform draw over valid programs; planted mode only
  // since it evaluates every program on every test task.
  if (cfg_.executor == ExecutorMode::Planted && !split_.test.empty()) {
    std::vector<std::size_t> valid;
    for (std::size_t b = 0; b < bank_.size(); ++b) {
      if (bank_.valid(b)) {
        valid.push_back(b);
      }
    }
    std::vector<double> scores(split_.test.size() * valid.size());
    const std::uint64_t salt = stream(cfg_.seed, "evaluate");
    parallel_for(scores.size(), cfg_.parallelism, [&](std::size_t job) {
      const Task& task = split_.test[job / valid.size()];
      scores[job] =
          evaluate_workflow(bank_[valid[job % valid.size()]].ast, task, *executor_, cfg_.metric, cfg_.limits, salt)
              .score.value;
    });
    double total = 0.0;
    for (double s : scores) {
      total += s;
    }
    report.uniform_test_hit_rate = total / static_cast<double>(scores.size());
  }

  const std::string out_dir = write_outputs ? cfg_.output_dir : std::string{};
  double previous = report.baseline_validation.solve_rate;
  report.final_validation_solve_rate = previous;
  report.final_test_solve_rate = report.baseline_test.solve_rate;
  report.stop_reason = "max_iterations";
  for (int i = 1; i <= cfg_.M; ++i) {
    IterationState state = run_iteration(i, policy, reference, out_dir);
    report.total_executor_calls += state.collection_calls + state.validation.executor_calls + state.test.executor_calls;
    report.total_token_cost += state.collection_tokens;
    report.total_token_cost += state.validation.token_cost;
    report.total_token_cost += state.test.token_cost;
    report.final_validation_solve_rate = state.validation.solve_rate;
    report.final_test_solve_rate = state.test.solve_rate;
    const double improvement = state.validation.solve_rate - previous;
    previous = state.validation.solve_rate;
    report.iterations.push_back(std::move(state));
    if (improvement < cfg_.train.convergence_eps) {
      report.converged = true;
      report.stop_reason = "converged";
      break;
    }
  }
  report.wall_clock =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);

  if (write_outputs) {
    fs::create_directories(cfg_.output_dir);
    const fs::path dir(cfg_.output_dir);
    emit_metrics(report, (dir / "metrics.csv").string());
    write_file((dir / "train_stats.csv").string(), train_stats_csv(report));
    write_file((dir / "report.json").string(), report_json(report));
  }
  return report;
}

Report run(const RunConfig& cfg) { return Pipeline(cfg).run(true); }

// ------------------------------------------------------------------ ablate

std::vector<AblationRow> ablate(const RunConfig& cfg, const std::vector<double>& alphas,
                                const std::vector<std::uint64_t>& seeds) {
  if (alphas.empty()) {
    throw ConfigError("ablation needs at least one alpha");
  }
  if (seeds.empty()) {
    throw ConfigError("ablation needs at least one seed");
  }
  std::vector<AblationRow> rows;
  for (const std::uint64_t seed : seeds) {
    for (const double alpha : alphas) {
      if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
        throw ConfigError("alpha must be finite and nonnegative");
      }
      RunConfig arm = cfg;
      arm.seed = seed;
      arm.train.seed = seed;
      arm.planted_seed.reset();
      AblationRow row;
      row.alpha = alpha;
      row.seed = seed;
      if (alpha == 0.0) {
        arm.train.reward_weight_mode = RewardWeightMode::Unit;
        arm.train.weight_cfg = {0.0, WeightMode::Uniform};
        row.label = "dpo";
      } else {
        arm.train.reward_weight_mode = RewardWeightMode::Score;
        arm.train.weight_cfg = {alpha, WeightMode::Power};
        row.label = "score_dpo";
      }
      const Report report = Pipeline(arm).run(false);
      row.baseline_test_solve_rate = report.baseline_test.solve_rate;
      row.final_test_solve_rate = report.final_test_solve_rate;
      row.final_validation_solve_rate = report.final_validation_solve_rate;
      row.iterations = static_cast<int>(report.iterations.size());
      rows.push_back(row);
    }
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "seed,alpha,method,baseline_test_solve_rate,final_validation_solve_rate,final_test_solve_rate,"
                    "iterations\n";
  for (const auto& r : rows) {
    out += std::to_string(r.seed) + "," + format_double(r.alpha) + "," + r.label + "," +
           format_double(r.baseline_test_solve_rate) + "," + format_double(r.final_validation_solve_rate) + "," +
           format_double(r.final_test_solve_rate) + "," + std::to_string(r.iterations) + "\n";
  }
  return out;
}

// ----------------------------------------------------------------- outputs

std::string metrics_csv(const Report& report) {
  std::string out = "iteration,split,solve_rate,mean_loss,fraction_r_in_unit_ball,executor_calls,token_cost\n";
  for (const auto& s : report.iterations) {
    const std::string loss = s.trained ? format_double(s.stats.mean_loss) : "";
    const std::string frac = s.trained ? format_double(s.stats.fraction_r_in_unit_ball) : "";
    const std::string it = std::to_string(s.iteration);
    out += it + ",validation," + format_double(s.validation.solve_rate) + "," + loss + "," + frac + "," +
           std::to_string(s.collection_calls + s.validation.executor_calls) + "," +
           std::to_string(s.collection_tokens.total() + s.validation.token_cost.total()) + "\n";
    out += it + ",test," + format_double(s.test.solve_rate) + "," + loss + "," + frac + "," +
           std::to_string(s.test.executor_calls) + "," + std::to_string(s.test.token_cost.total()) + "\n";
  }
  return out;
}

void emit_metrics(const Report& report, const std::string& path) { write_file(path, metrics_csv(report)); }

std::string train_stats_csv(const Report& report) {
  std::string out = "iteration,epoch,samples_seen,mean_loss,grad_norm,fraction_r_in_unit_ball\n";
  for (const auto& s : report.iterations) {
    for (std::size_t e = 0; e < s.epoch_stats.size(); ++e) {
      const TrainStats& t = s.epoch_stats[e];
      out += std::to_string(s.iteration) + "," + std::to_string(e + 1) + "," + std::to_string(t.samples_seen) + "," +
             format_double(t.mean_loss) + "," + format_double(t.grad_norm) + "," +
             format_double(t.fraction_r_in_unit_ball) + "\n";
    }
  }
  return out;
}

namespace {

json split_json(const SplitEvaluation& s) {
  return {{"solve_rate", s.solve_rate},
          {"chosen", s.chosen},
          {"executor_calls", s.executor_calls},
          {"prompt_tokens", s.token_cost.prompt_tokens},
          {"completion_tokens", s.token_cost.completion_tokens}};
}

}  // namespace

std::string report_json(const Report& report) {
  json iterations = json::array();
  for (const auto& s : report.iterations) {
    json epochs = json::array();
    for (const auto& e : s.epoch_stats) {
      epochs.push_back({{"samples_seen", e.samples_seen},
                        {"mean_loss", e.mean_loss},
                        {"grad_norm", e.grad_norm},
                        {"fraction_r_in_unit_ball", e.fraction_r_in_unit_ball}});
    }
    iterations.push_back({
        {"iteration", s.iteration},
        {"pairs", s.dataset.size()},
        {"trained", s.trained},
        {"mean_loss", s.stats.mean_loss},
        {"grad_norm", s.stats.grad_norm},
        {"fraction_r_in_unit_ball", s.stats.fraction_r_in_unit_ball},
        {"epochs", epochs},
        {"validation", split_json(s.validation)},
        {"test", split_json(s.test)},
        {"collection_calls", s.collection_calls},
        {"collection_tokens", s.collection_tokens.total()},
        {"resamples", s.resamples},
        {"fallbacks", s.fallbacks},
        {"cstar_failures", s.cstar_failures},
        {"checkpoint", s.checkpoint_path},
        {"preferences", s.preferences_path},
    });
  }
  json j = {
      {"config_digest", report.config_digest},
      {"bank_digest", report.bank_digest},
      {"baseline", {{"validation", split_json(report.baseline_validation)}, {"test", split_json(report.baseline_test)}}},
      {"uniform_test_hit_rate", report.uniform_test_hit_rate ? json(*report.uniform_test_hit_rate) : json(nullptr)},
      {"iterations", iterations},
      {"final_validation_solve_rate", report.final_validation_solve_rate},
      {"final_test_solve_rate", report.final_test_solve_rate},
      {"converged", report.converged},
      {"stop_reason", report.stop_reason},
      {"wall_clock_ms", report.wall_clock.count()},
      {"total_executor_calls", report.total_executor_calls},
      {"total_prompt_tokens", report.total_token_cost.prompt_tokens},
      {"total_completion_tokens", report.total_token_cost.completion_tokens},
      {"reference_condition_rate", kReferenceConditionRate},
  };
  return j.dump(2) + "\n";
}

}  // namespace scoreflow
