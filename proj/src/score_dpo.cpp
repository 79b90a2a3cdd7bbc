#include "scoreflow/score_dpo.hpp"

#include <cmath>
#include <deque>
#include <numeric>

#include "scoreflow/errors.hpp"
#include "scoreflow/numeric.hpp"

namespace scoreflow {

const char* to_string(RewardWeightMode mode) { return mode == RewardWeightMode::Score ? "score" : "unit"; }

RewardWeightMode reward_weight_mode_from_string(const std::string& s) {
  if (s == "score") {
    return RewardWeightMode::Score;
  }
  if (s == "unit") {
    return RewardWeightMode::Unit;
  }
  throw ConfigError("unknown reward weight mode '" + s + "'");
}

const char* to_string(TrainMethod method) { return method == TrainMethod::Preference ? "preference" : "sft"; }

TrainMethod train_method_from_string(const std::string& s) {
  if (s == "preference") {
    return TrainMethod::Preference;
  }
  if (s == "sft") {
    return TrainMethod::Sft;
  }
  throw ConfigError("unknown train method '" + s + "'");
}

void TrainConfig::check() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) {
    throw ConfigError("beta must be positive");
  }
  if (!(eta >= 0.0) || !std::isfinite(eta)) {
    throw ConfigError("eta must be nonnegative");
  }
  if (samples_per_iter < 1) {
    throw ConfigError("samples_per_iter must be at least 1");
  }
  if (batch_size < 1) {
    throw ConfigError("batch_size must be at least 1");
  }
  if (!(weight_cfg.alpha >= 0.0)) {
    throw ConfigError("alpha must be nonnegative");
  }
  if (max_epochs_inner < 1) {
    throw ConfigError("max_epochs_inner must be at least 1");
  }
  if (!(convergence_eps >= 0.0)) {
    throw ConfigError("convergence_eps must be nonnegative");
  }
}

double implicit_reward(const PolicyParams& p, const PolicyParams& ref, std::span<const double> x, std::size_t y,
                       double beta) {
  return beta * (log_prob(p, x, y) - log_prob(ref, x, y));
}

WeightedRewards reward_weights(double s_w, double s_l, RewardWeightMode mode) {
  if (!(s_w >= 0.0 && s_w <= 1.0 && s_l >= 0.0 && s_l <= 1.0)) {
    throw DomainError("scores must lie in [0, 1]");
  }
  if (mode == RewardWeightMode::Unit) {
    return {1.0, 1.0};
  }
  return {s_w, 1.0 - s_l};
}

WeightedRewards weighted_rewards(double r_w, double r_l, double s_w, double s_l, RewardWeightMode mode) {
  const auto w = reward_weights(s_w, s_l, mode);
  return {w.winner * r_w, w.loser * r_l};
}

namespace {

struct PairTerms {
  double r_w = 0.0;
  double r_l = 0.0;
  WeightedRewards weights;
  double margin = 0.0;  // r_w* - r_l*
};

PairTerms pair_terms(const PreferencePair& pair, const PolicyParams& p, const PolicyParams& ref,
                     const TrainConfig& cfg) {
  PairTerms t;
  t.r_w = implicit_reward(p, ref, pair.features, pair.winner_index, cfg.beta);
  t.r_l = implicit_reward(p, ref, pair.features, pair.loser_index, cfg.beta);
  t.weights = reward_weights(pair.s_w, pair.s_l, cfg.reward_weight_mode);
  t.margin = t.weights.winner * t.r_w - t.weights.loser * t.r_l;
  return t;
}

Matrix grad_from_terms(const PreferencePair& pair, const PolicyParams& p, const PairTerms& t, double beta) {
  // dL/dmargin = -sigmoid(-margin)
  const double slope = -sigmoid(-t.margin);
  Matrix g = grad_log_prob(p, pair.features, pair.winner_index);
  g *= slope * t.weights.winner * beta;
  g.add_scaled(grad_log_prob(p, pair.features, pair.loser_index), -slope * t.weights.loser * beta);
  return g;
}

}  // namespace

double pair_loss(const PreferencePair& pair, const PolicyParams& p, const PolicyParams& ref, const TrainConfig& cfg) {
  return softplus(-pair_terms(pair, p, ref, cfg).margin);
}

Matrix pair_loss_grad(const PreferencePair& pair, const PolicyParams& p, const PolicyParams& ref,
                      const TrainConfig& cfg) {
  return grad_from_terms(pair, p, pair_terms(pair, p, ref, cfg), cfg.beta);
}

bool matches(const SampleKey& z, const FeatureVector& features, std::size_t index, double score) {
  return z.bank_index == index && z.score == score && z.features == features;
}

double influence(const SampleKey& z, const PreferenceDataset& ds, const PolicyParams& p, const PolicyParams& ref,
                 const TrainConfig& cfg) {
  if (ds.empty()) {
    throw EmptyDataset("influence over an empty dataset");
  }
  double acc = 0.0;
  for (const auto& pair : ds.pairs) {
    const bool is_w = matches(z, pair.features, pair.winner_index, pair.s_w);
    const bool is_l = matches(z, pair.features, pair.loser_index, pair.s_l);
    if (!is_w && !is_l) {
      continue;
    }
    const PairTerms t = pair_terms(pair, p, ref, cfg);
    const double d = pair_weight(pair.s_w, pair.s_l, cfg.weight_cfg);
    const double indicator = (is_w ? t.weights.winner : 0.0) - (is_l ? t.weights.loser : 0.0);
    acc += d * sigmoid(-t.margin) * indicator;
  }
  return acc / static_cast<double>(ds.size());
}

bool influence_condition_holds(double r_z, double s_z) {
  const double lower = s_z >= 1.0 ? -std::numeric_limits<double>::infinity() : -1.0 / (1.0 - s_z);
  return lower <= r_z && r_z <= s_z;
}

TrainResult train_inner(const PolicyParams& p, const PolicyParams& ref, const PreferenceDataset& ds,
                        const TrainConfig& cfg, Rng& rng) {
  cfg.check();
  if (ds.empty()) {
    throw EmptyDataset("no preference pairs to train on");
  }
  if (p.weights.rows() != ref.weights.rows() || p.weights.cols() != ref.weights.cols()) {
    throw ShapeMismatch("policy and reference shapes differ");
  }
  TrainResult out{p, {}, {}};
  PolicyParams& theta = out.params;
  double loss_total = 0.0;
  double grad_norm_total = 0.0;
  std::size_t steps_total = 0;
  std::size_t rewards_in_ball = 0;
  std::size_t rewards_seen = 0;

  for (int epoch = 0; epoch < cfg.max_epochs_inner; ++epoch) {
    const auto draws = sample_pair_indices(ds, cfg.weight_cfg, rng, cfg.samples_per_iter);
    TrainStats es;
    double epoch_loss = 0.0;
    double epoch_grad = 0.0;
    std::size_t epoch_steps = 0;
    std::size_t epoch_in_ball = 0;
    std::deque<double> window;
    double window_sum = 0.0;
    double previous_window_mean = std::numeric_limits<double>::infinity();
    bool stopped = false;

    for (std::size_t start = 0; start < draws.size() && !stopped; start += cfg.batch_size) {
      const std::size_t end = std::min(draws.size(), start + cfg.batch_size);
      Matrix grad(theta.weights.rows(), theta.weights.cols());
      for (std::size_t k = start; k < end; ++k) {
        const PreferencePair& pair = ds.pairs[draws[k]];
        const PairTerms t = pair_terms(pair, theta, ref, cfg);
        const double loss = softplus(-t.margin);
        epoch_loss += loss;
        epoch_in_ball += (std::fabs(t.r_w) <= 1.0) + (std::fabs(t.r_l) <= 1.0);
        grad += grad_from_terms(pair, theta, t, cfg.beta);

        if (cfg.early_stop) {
          window.push_back(loss);
          window_sum += loss;
          if (window.size() > 200) {
            window_sum -= window.front();
            window.pop_front();
          }
          if ((k + 1) % 200 == 0 && window.size() == 200) {
            const double mean = window_sum / 200.0;
            if (previous_window_mean - mean < 1e-4) {
              stopped = true;
            }
            previous_window_mean = mean;
          }
        }
      }
      grad *= 1.0 / static_cast<double>(end - start);
      if (!grad.all_finite()) {
        throw NonFinite("non-finite gradient at epoch " + std::to_string(epoch) + ", sample " +
                        std::to_string(start) + " (pair " + std::to_string(draws[start]) + ")");
      }
      epoch_grad += grad.frobenius_norm();
      ++epoch_steps;
      theta.weights.add_scaled(grad, -cfg.eta);
      es.samples_seen += end - start;
    }
    es.mean_loss = epoch_loss / static_cast<double>(es.samples_seen);
    es.grad_norm = epoch_grad / static_cast<double>(epoch_steps);
    es.fraction_r_in_unit_ball = static_cast<double>(epoch_in_ball) / static_cast<double>(2 * es.samples_seen);
    out.epochs.push_back(es);

    loss_total += epoch_loss;
    grad_norm_total += epoch_grad;
    steps_total += epoch_steps;
    rewards_in_ball += epoch_in_ball;
    rewards_seen += 2 * es.samples_seen;
    out.stats.samples_seen += es.samples_seen;
    if (stopped) {
      break;
    }
  }
  out.stats.mean_loss = loss_total / static_cast<double>(out.stats.samples_seen);
  out.stats.grad_norm = grad_norm_total / static_cast<double>(steps_total);
  out.stats.fraction_r_in_unit_ball = static_cast<double>(rewards_in_ball) / static_cast<double>(rewards_seen);
  return out;
}

PolicyParams sft_update(const PolicyParams& p, std::span<const SftExample> winners, const TrainConfig& cfg, Rng& rng,
                        TrainStats* stats) {
  cfg.check();
  if (winners.empty()) {
    throw EmptyDataset("no preferred workflows for supervised update");
  }
  std::vector<double> weights;
  weights.reserve(winners.size());
  for (const auto& w : winners) {
    if (!(w.score >= 0.0 && w.score <= 1.0)) {
      throw DomainError("scores must lie in [0, 1]");
    }
    weights.push_back(w.score);
  }
  const AliasTable table(weights);
  PolicyParams theta = p;
  double loss_total = 0.0;
  double grad_total = 0.0;
  std::size_t steps = 0;
  for (std::size_t start = 0; start < cfg.samples_per_iter; start += cfg.batch_size) {
    const std::size_t end = std::min(cfg.samples_per_iter, start + cfg.batch_size);
    Matrix grad(theta.weights.rows(), theta.weights.cols());
    for (std::size_t k = start; k < end; ++k) {
      const SftExample& ex = winners[table.sample(rng)];
      loss_total -= log_prob(theta, ex.features, ex.bank_index);
      grad += grad_log_prob(theta, ex.features, ex.bank_index);
    }
    grad *= 1.0 / static_cast<double>(end - start);
    if (!grad.all_finite()) {
      throw NonFinite("non-finite gradient in supervised update at sample " + std::to_string(start));
    }
    grad_total += grad.frobenius_norm();
    ++steps;
    theta.weights.add_scaled(grad, cfg.eta);
  }
  if (stats != nullptr) {
    stats->samples_seen = cfg.samples_per_iter;
    stats->mean_loss = loss_total / static_cast<double>(cfg.samples_per_iter);
    stats->grad_norm = grad_total / static_cast<double>(steps);
    stats->fraction_r_in_unit_ball = 1.0;
  }
  return theta;
}

}  // namespace scoreflow
