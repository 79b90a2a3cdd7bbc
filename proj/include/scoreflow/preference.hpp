#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scoreflow/random.hpp"
#include "scoreflow/runtime.hpp"
#include "scoreflow/scoring.hpp"

namespace scoreflow {

struct ScoredCandidate {
  std::string task_id;
  std::size_t bank_index = 0;
  std::string workflow_digest;
  Score score;
};

/// A same-task preference (w, l) with s_w > s_l. The two sides may name the
/// same bank entry: repeated draws of one program can score differently.
struct PreferencePair {
  std::string task_id;
  FeatureVector features;
  std::size_t winner_index = 0;
  std::size_t loser_index = 0;
  double s_w = 0.0;
  double s_l = 0.0;

  bool operator==(const PreferencePair&) const = default;
};

struct PreferenceDataset {
  std::vector<PreferencePair> pairs;
  int iteration = 0;
  std::string config_digest;

  bool empty() const noexcept { return pairs.empty(); }
  std::size_t size() const noexcept { return pairs.size(); }
  /// Digest of the ordered pair contents and provenance.
  std::string digest() const;
};

enum class WeightMode { Power, Uniform };

const char* to_string(WeightMode mode);
WeightMode weight_mode_from_string(const std::string& s);

/// d(s_w, s_l) = (s_w - s_l)^alpha in power mode, 1 in uniform mode.
struct WeightConfig {
  double alpha = 3.0;
  WeightMode mode = WeightMode::Power;
};

/// Every ordered pair with strictly greater score; ties yield nothing.
std::vector<PreferencePair> build_pairs(std::span<const ScoredCandidate> candidates, const FeatureVector& features);

PreferenceDataset aggregate(const std::vector<std::vector<PreferencePair>>& per_task, int iteration,
                            std::string config_digest);

/// Throws DomainError unless 0 <= s_l < s_w <= 1 and alpha >= 0.
double pair_weight(double s_w, double s_l, const WeightConfig& cfg);
/// log d(s_w, s_l); finite for any positive gap, including alpha = 100.
double log_pair_weight(double s_w, double s_l, const WeightConfig& cfg);

/// Normalized sampling law over the dataset's pairs.
std::vector<double> pair_probabilities(const PreferenceDataset& ds, const WeightConfig& cfg);

/// n independent draws with replacement from the d-weighted law.
/// Throws EmptyDataset or ZeroMass.
std::vector<PreferencePair> sample_pairs(const PreferenceDataset& ds, const WeightConfig& cfg, Rng& rng, std::size_t n);
/// As sample_pairs, returning indices into ds.pairs.
std::vector<std::size_t> sample_pair_indices(const PreferenceDataset& ds, const WeightConfig& cfg, Rng& rng,
                                             std::size_t n);

/// JSON Lines with a leading "#" header carrying iteration and config digest.
std::string dataset_to_jsonl(const PreferenceDataset& ds);
PreferenceDataset dataset_from_jsonl(const std::string& text);
void save_dataset(const PreferenceDataset& ds, const std::string& path);
PreferenceDataset load_dataset(const std::string& path);

}  // namespace scoreflow
