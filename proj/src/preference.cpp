#include "scoreflow/preference.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "scoreflow/digest.hpp"
#include "scoreflow/errors.hpp"

namespace scoreflow {

using nlohmann::json;

const char* to_string(WeightMode mode) { return mode == WeightMode::Power ? "power" : "uniform"; }

WeightMode weight_mode_from_string(const std::string& s) {
  if (s == "power") {
    return WeightMode::Power;
  }
  if (s == "uniform") {
    return WeightMode::Uniform;
  }
  throw ConfigError("unknown weight mode '" + s + "'");
}

std::vector<PreferencePair> build_pairs(std::span<const ScoredCandidate> candidates, const FeatureVector& features) {
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].task_id != candidates.front().task_id) {
      throw DomainError("build_pairs: candidates span several tasks");
    }
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      const double si = candidates[i].score.value;
      const double sj = candidates[j].score.value;
      if (si > sj) {
        out.push_back({candidates[i].task_id, features, candidates[i].bank_index, candidates[j].bank_index, si, sj});
      }
    }
  }
  return out;
}

PreferenceDataset aggregate(const std::vector<std::vector<PreferencePair>>& per_task, int iteration,
                            std::string config_digest) {
  PreferenceDataset ds;
  ds.iteration = iteration;
  ds.config_digest = std::move(config_digest);
  for (const auto& pairs : per_task) {
    ds.pairs.insert(ds.pairs.end(), pairs.begin(), pairs.end());
  }
  return ds;
}

std::string PreferenceDataset::digest() const {
  return digest_of(std::to_string(iteration) + "\n" + config_digest + "\n" + dataset_to_jsonl(*this));
}

namespace {

void check_pair_scores(double s_w, double s_l, const WeightConfig& cfg) {
  if (!(s_l >= 0.0 && s_w <= 1.0 && s_w > s_l)) {
    throw DomainError("pair weight needs 0 <= s_l < s_w <= 1");
  }
  if (!(cfg.alpha >= 0.0)) {
    throw DomainError("alpha must be nonnegative");
  }
}

}  // namespace

double log_pair_weight(double s_w, double s_l, const WeightConfig& cfg) {
  check_pair_scores(s_w, s_l, cfg);
  if (cfg.mode == WeightMode::Uniform || cfg.alpha == 0.0) {
    return 0.0;
  }
  return cfg.alpha * std::log(s_w - s_l);
}

double pair_weight(double s_w, double s_l, const WeightConfig& cfg) {
  check_pair_scores(s_w, s_l, cfg);
  if (cfg.mode == WeightMode::Uniform) {
    return 1.0;
  }
  return std::pow(s_w - s_l, cfg.alpha);
}

std::vector<double> pair_probabilities(const PreferenceDataset& ds, const WeightConfig& cfg) {
  if (ds.empty()) {
    throw EmptyDataset("preference dataset is empty");
  }
  std::vector<double> logw(ds.size());
  double max_logw = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    logw[i] = log_pair_weight(ds.pairs[i].s_w, ds.pairs[i].s_l, cfg);
    max_logw = std::max(max_logw, logw[i]);
  }
  if (!std::isfinite(max_logw)) {
    throw ZeroMass("all pair weights vanish");
  }
  double total = 0.0;
  for (double& w : logw) {
    w = std::exp(w - max_logw);
    total += w;
  }
  for (double& w : logw) {
    w /= total;
  }
  return logw;
}

std::vector<std::size_t> sample_pair_indices(const PreferenceDataset& ds, const WeightConfig& cfg, Rng& rng,
                                             std::size_t n) {
  const auto probs = pair_probabilities(ds, cfg);
  const AliasTable table(probs);
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(table.sample(rng));
  }
  return out;
}

std::vector<PreferencePair> sample_pairs(const PreferenceDataset& ds, const WeightConfig& cfg, Rng& rng,
                                         std::size_t n) {
  std::vector<PreferencePair> out;
  out.reserve(n);
  for (std::size_t i : sample_pair_indices(ds, cfg, rng, n)) {
    out.push_back(ds.pairs[i]);
  }
  return out;
}

// -------------------------------------------------------------------- io

std::string dataset_to_jsonl(const PreferenceDataset& ds) {
  std::string out = "# " + json({{"iteration", ds.iteration}, {"config_digest", ds.config_digest}}).dump() + "\n";
  for (const auto& p : ds.pairs) {
    const json j = {{"task_id", p.task_id},         {"features", p.features}, {"winner_index", p.winner_index},
                    {"loser_index", p.loser_index}, {"s_w", p.s_w},           {"s_l", p.s_l}};
    out += j.dump() + "\n";
  }
  return out;
}

PreferenceDataset dataset_from_jsonl(const std::string& text) {
  PreferenceDataset ds;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    try {
      if (line.front() == '#') {
        const json h = json::parse(line.substr(1));
        ds.iteration = h.at("iteration").get<int>();
        ds.config_digest = h.at("config_digest").get<std::string>();
        header = true;
        continue;
      }
      const json j = json::parse(line);
      PreferencePair p;
      p.task_id = j.at("task_id").get<std::string>();
      p.features = j.at("features").get<std::vector<double>>();
      p.winner_index = j.at("winner_index").get<std::size_t>();
      p.loser_index = j.at("loser_index").get<std::size_t>();
      p.s_w = j.at("s_w").get<double>();
      p.s_l = j.at("s_l").get<double>();
      if (!(p.s_w > p.s_l) || p.s_l < 0.0 || p.s_w > 1.0) {
        throw ConfigError("pair scores violate 0 <= s_l < s_w <= 1");
      }
      ds.pairs.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ConfigError("preference line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!header) {
    throw ConfigError("preference file lacks the '#' header line");
  }
  return ds;
}

void save_dataset(const PreferenceDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << dataset_to_jsonl(ds);
}

PreferenceDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_jsonl(buf.str());
}

}  // namespace scoreflow
