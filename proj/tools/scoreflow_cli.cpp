// scoreflow command line: bank validation, full runs, the d(x, y) sweep,
// one-off scoring and influence dumps.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "scoreflow/errors.hpp"
#include "scoreflow/pipeline.hpp"

namespace fs = std::filesystem;
using namespace scoreflow;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

template <class T>
std::vector<T> split_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    std::istringstream conv(item);
    T v{};
    if (!(conv >> v) || !(conv >> std::ws).eof()) {
      throw ConfigError("bad list element '" + item + "'");
    }
    out.push_back(v);
  }
  return out;
}

int validate_bank_cmd(const std::string& bank_path, const std::string& config_path) {
  Limits limits;
  if (!config_path.empty()) {
    limits = load_run_config(config_path).limits;
  }
  const WorkflowBank bank = WorkflowBank::load(bank_path, OperatorRegistry{}, limits);
  std::printf("bank %s: %zu programs, digest %s\n", bank_path.c_str(), bank.size(), bank.digest().c_str());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const BankEntry& e = bank[i];
    std::printf("[%zu] %s calls=%lld digest=%s\n", i, e.report.ok ? "ok" : "INVALID",
                static_cast<long long>(e.report.static_call_count), e.digest.c_str());
    for (const auto& v : e.report.violations) {
      std::printf("    %s at %d:%d: %s\n", to_string(v.code), v.span.line, v.span.column, v.message.c_str());
    }
  }
  return bank.all_valid() ? 0 : 1;
}

int run_cmd(const std::string& config_path, const std::string& output_dir) {
  RunConfig cfg = load_run_config(config_path);
  if (!output_dir.empty()) {
    cfg.output_dir = output_dir;
  }
  const Report report = run(cfg);
  std::printf("baseline   validation %.4f  test %.4f\n", report.baseline_validation.solve_rate,
              report.baseline_test.solve_rate);
  if (report.uniform_test_hit_rate) {
    std::printf("uniform-draw expected test hit rate %.4f\n", *report.uniform_test_hit_rate);
  }
  for (const auto& s : report.iterations) {
    std::printf("iteration %d  pairs %zu  loss %.4f  |r|<=1 %.3f (reference %.3f)  validation %.4f  test %.4f\n",
                s.iteration, s.dataset.size(), s.stats.mean_loss, s.stats.fraction_r_in_unit_ball,
                kReferenceConditionRate, s.validation.solve_rate, s.test.solve_rate);
  }
  std::printf("stop: %s after %zu iterations, %lld executor calls, %lld ms\n", report.stop_reason.c_str(),
              report.iterations.size(), static_cast<long long>(report.total_executor_calls),
              static_cast<long long>(report.wall_clock.count()));
  std::printf("outputs in %s\n", cfg.output_dir.c_str());
  return 0;
}

int ablate_cmd(const std::string& config_path, const std::string& alphas_text, const std::string& seeds_text,
               const std::string& output_dir) {
  RunConfig cfg = load_run_config(config_path);
  if (!output_dir.empty()) {
    cfg.output_dir = output_dir;
  }
  const auto alphas = split_list<double>(alphas_text);
  const auto seeds = seeds_text.empty() ? std::vector<std::uint64_t>{cfg.seed} : split_list<std::uint64_t>(seeds_text);
  const auto rows = ablate(cfg, alphas, seeds);
  const std::string csv = ablation_csv(rows);
  fs::create_directories(cfg.output_dir);
  const std::string path = (fs::path(cfg.output_dir) / "ablation.csv").string();
  std::ofstream(path, std::ios::binary | std::ios::trunc) << csv;
  std::fputs(csv.c_str(), stdout);
  std::printf("written %s\n", path.c_str());
  return 0;
}

int score_cmd(const std::string& config_path, const std::string& task_id, const std::string& program_path) {
  const RunConfig cfg = load_run_config(config_path);
  Pipeline pipeline(cfg);
  const auto tasks = load_tasks(cfg.tasks_path);
  const auto it = std::find_if(tasks.begin(), tasks.end(), [&](const Task& t) { return t.id == task_id; });
  if (it == tasks.end()) {
    throw ConfigError("no task with id " + task_id);
  }
  const WorkflowAst ast = parse(read_file(program_path));
  const ValidationReport report = validate(ast, OperatorRegistry{}, cfg.limits);
  nlohmann::json out = {{"task", task_id}, {"valid", report.ok}, {"static_call_count", report.static_call_count}};
  if (!report.ok) {
    nlohmann::json violations = nlohmann::json::array();
    for (const auto& v : report.violations) {
      violations.push_back({{"code", to_string(v.code)}, {"message", v.message}});
    }
    out["violations"] = violations;
    std::puts(out.dump(2).c_str());
    return 1;
  }
  const WorkflowEvaluation ev = evaluate_workflow(ast, *it, pipeline.executor(), cfg.metric, cfg.limits, cfg.seed);
  out["score"] = ev.score.value;
  out["per_repeat"] = ev.score.per_repeat;
  out["cstar_failed"] = ev.cstar_failed;
  out["faulted_repeats"] = ev.faulted_repeats;
  out["executor_calls"] = ev.executor_calls;
  out["token_cost"] = ev.token_cost.total();
  std::puts(out.dump(2).c_str());
  return 0;
}

int influence_cmd(const std::string& dataset_path, const std::string& checkpoint_path, const std::string& config_path,
                  double beta) {
  TrainConfig train;
  std::string bank_digest;
  if (!config_path.empty()) {
    const RunConfig cfg = load_run_config(config_path);
    train = cfg.train;
    bank_digest = WorkflowBank::load(cfg.bank_path, OperatorRegistry{}, cfg.limits).digest();
  }
  if (beta > 0.0) {
    train.beta = beta;
  }
  const PreferenceDataset ds = load_dataset(dataset_path);
  const PolicyCheckpoint ckpt = load_checkpoint(checkpoint_path, bank_digest);

  std::printf("task_id,bank_index,score,implicit_reward,influence,condition_holds\n");
  std::set<std::tuple<FeatureVector, std::size_t, double>> seen;
  auto emit = [&](const PreferencePair& p, std::size_t index, double score) {
    if (!seen.insert({p.features, index, score}).second) {
      return;
    }
    const SampleKey z{p.features, index, score};
    const double r = implicit_reward(ckpt.theta, ckpt.theta_ref, p.features, index, train.beta);
    const double inf = influence(z, ds, ckpt.theta, ckpt.theta_ref, train);
    std::printf("%s,%zu,%s,%s,%s,%s\n", p.task_id.c_str(), index, format_double(score).c_str(),
                format_double(r).c_str(), format_double(inf).c_str(),
                influence_condition_holds(r, score) ? "true" : "false");
  };
  for (const auto& p : ds.pairs) {
    emit(p, p.winner_index, p.s_w);
    emit(p, p.loser_index, p.s_l);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"scoreflow: train and evaluate a workflow generator from scored preference pairs"};
  app.require_subcommand(1);

  std::string bank_path, config_path, output_dir, alphas = "0,2,3,100", seeds, task_id, program_path, dataset_path,
                                                  checkpoint_path;
  double beta = 0.0;

  auto* vb = app.add_subcommand("validate-bank", "static executability report per bank program");
  vb->add_option("bank", bank_path, "bank file (.flows)")->required();
  vb->add_option("--config", config_path, "run config supplying limits");

  auto* rn = app.add_subcommand("run", "full optimization loop");
  rn->add_option("--config", config_path, "run config")->required();
  rn->add_option("--output-dir", output_dir, "override output_dir");

  auto* ab = app.add_subcommand("ablate", "sweep over the exponent of d(x, y)");
  ab->add_option("--config", config_path, "run config")->required();
  ab->add_option("--alphas", alphas, "comma-separated exponents; 0 is plain DPO");
  ab->add_option("--seeds", seeds, "comma-separated seeds (default: the config seed)");
  ab->add_option("--output-dir", output_dir, "override output_dir");

  auto* sc = app.add_subcommand("score", "evaluate one program on one task");
  sc->add_option("--config", config_path, "run config")->required();
  sc->add_option("--task", task_id, "task id")->required();
  sc->add_option("--program", program_path, "workflow source file")->required();

  auto* in = app.add_subcommand("influence", "per-sample influence of every sample in a preference file");
  in->add_option("--dataset", dataset_path, "preference JSONL")->required();
  in->add_option("--checkpoint", checkpoint_path, "checkpoint JSON")->required();
  in->add_option("--config", config_path, "run config (training settings and bank check)");
  in->add_option("--beta", beta, "override beta");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*vb) {
      return validate_bank_cmd(bank_path, config_path);
    }
    if (*rn) {
      return run_cmd(config_path, output_dir);
    }
    if (*ab) {
      return ablate_cmd(config_path, alphas, seeds, output_dir);
    }
    if (*sc) {
      return score_cmd(config_path, task_id, program_path);
    }
    if (*in) {
      return influence_cmd(dataset_path, checkpoint_path, config_path, beta);
    }
  } catch (const SyntaxError& e) {
    std::fprintf(stderr, "syntax error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
