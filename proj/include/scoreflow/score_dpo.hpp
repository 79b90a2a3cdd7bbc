#pragma once

// Score-DPO: DPO with a score-weighted Bradley-Terry margin
//
//   r(x, y)  = beta * (log pi_theta(y|x) - log pi_ref(y|x))
//   r_w*     = f(s_w) r_w,   r_l* = (1 - f(s_l)) r_l,   f(s) = s
//   loss     = -log sigmoid(r_w* - r_l*)
//
// with pairs drawn from P*(w, l) proportional to d(s_w, s_l) = (s_w - s_l)^alpha.
// Unit reward weighting with uniform sampling is plain DPO.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scoreflow/policy.hpp"
#include "scoreflow/preference.hpp"
#include "scoreflow/random.hpp"

namespace scoreflow {

enum class RewardWeightMode { Score, Unit };
enum class TrainMethod { Preference, Sft };

const char* to_string(RewardWeightMode mode);
RewardWeightMode reward_weight_mode_from_string(const std::string& s);
const char* to_string(TrainMethod method);
TrainMethod train_method_from_string(const std::string& s);

struct TrainConfig {
  double beta = 0.1;
  double eta = 0.05;
  std::size_t samples_per_iter = 2000;
  std::size_t batch_size = 1;
  RewardWeightMode reward_weight_mode = RewardWeightMode::Score;
  WeightConfig weight_cfg;
  std::uint64_t seed = 0;
  int max_epochs_inner = 1;
  double convergence_eps = 0.005;
  /// Stop an epoch early when the 200-sample moving-average loss improves by
  /// less than 1e-4.
  bool early_stop = false;
  /// Reset pi_ref to the current policy at the start of every iteration.
  bool refresh_reference = true;
  TrainMethod method = TrainMethod::Preference;

  /// Throws ConfigError on out-of-range values.
  void check() const;
};

struct TrainStats {
  double mean_loss = 0.0;
  double grad_norm = 0.0;
  double fraction_r_in_unit_ball = 0.0;
  std::size_t samples_seen = 0;
};

double implicit_reward(const PolicyParams& p, const PolicyParams& ref, std::span<const double> x, std::size_t y,
                       double beta);

struct WeightedRewards {
  double winner = 0.0;
  double loser = 0.0;
};

/// Score mode: (s_w r_w, (1 - s_l) r_l). Unit mode: (r_w, r_l).
/// Throws DomainError for scores outside [0, 1].
WeightedRewards weighted_rewards(double r_w, double r_l, double s_w, double s_l, RewardWeightMode mode);

/// The multipliers applied to r_w and r_l.
WeightedRewards reward_weights(double s_w, double s_l, RewardWeightMode mode);

double pair_loss(const PreferencePair& pair, const PolicyParams& p, const PolicyParams& ref, const TrainConfig& cfg);

/// Analytic gradient of pair_loss with respect to p.weights.
Matrix pair_loss_grad(const PreferencePair& pair, const PolicyParams& p, const PolicyParams& ref,
                      const TrainConfig& cfg);

/// A single (context, workflow, score) sample.
struct SampleKey {
  FeatureVector features;
  std::size_t bank_index = 0;
  double score = 0.0;
};

bool matches(const SampleKey& z, const FeatureVector& features, std::size_t index, double score);

/// Exact per-sample influence by enumeration over the uniform law on ds:
///   E_P[ d(s_w,s_l) sigmoid(r_l* - r_w*) (f(s_w) 1{w=z} - (1-f(s_l)) 1{l=z}) ].
/// Throws EmptyDataset.
double influence(const SampleKey& z, const PreferenceDataset& ds, const PolicyParams& p, const PolicyParams& ref,
                 const TrainConfig& cfg);

/// -(1 - f(s))^-1 <= r <= f^-1(s), the sufficient condition under which the
/// influence of a sample grows with its score (f is the identity).
bool influence_condition_holds(double r_z, double s_z);

struct TrainResult {
  PolicyParams params;
  TrainStats stats;
  std::vector<TrainStats> epochs;
};

/// Stochastic gradient descent on the Score-DPO loss over samples drawn from
/// P*. Throws EmptyDataset, ZeroMass or NonFinite.
TrainResult train_inner(const PolicyParams& p, const PolicyParams& ref, const PreferenceDataset& ds,
                        const TrainConfig& cfg, Rng& rng);

struct SftExample {
  FeatureVector features;
  std::size_t bank_index = 0;
  double score = 0.0;
};

/// Gradient ascent on mean log-likelihood of preferred workflows, sampled
/// with probability proportional to score. Throws EmptyDataset / ZeroMass.
PolicyParams sft_update(const PolicyParams& p, std::span<const SftExample> winners, const TrainConfig& cfg, Rng& rng,
                        TrainStats* stats = nullptr);

}  // namespace scoreflow
