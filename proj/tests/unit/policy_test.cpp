#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "../support/test_support.hpp"
#include "scoreflow/errors.hpp"
#include "scoreflow/policy.hpp"

using namespace scoreflow;

namespace {

PolicyParams two_by_one() {
  PolicyParams p = PolicyParams::zeros(2, 1);
  p.weights(0, 0) = 1.0;
  p.weights(1, 0) = -1.0;
  return p;
}

}  // namespace

TEST(Logits, Examples) {
  const auto z = logits(PolicyParams::zeros(4, 3), std::vector<double>{1.0, 0.2, -0.3});
  EXPECT_EQ(z, (std::vector<double>{0.0, 0.0, 0.0, 0.0}));
  EXPECT_EQ(logits(two_by_one(), std::vector<double>{1.0}), (std::vector<double>{1.0, -1.0}));
  EXPECT_THROW(logits(two_by_one(), std::vector<double>{1.0, 2.0}), ShapeMismatch);
}

TEST(LogProb, Examples) {
  const std::vector<double> x = {1.0, 0.4, -2.0};
  EXPECT_NEAR(log_prob(PolicyParams::zeros(4, 3), x, 2), std::log(0.25), 1e-15);
  EXPECT_NEAR(log_prob(PolicyParams::zeros(4, 3), x, 2), -1.386294, 1e-6);
  // -log(1 + e^-2)
  EXPECT_NEAR(log_prob(two_by_one(), std::vector<double>{1.0}, 0), -0.126928, 1e-6);
  EXPECT_NEAR(log_prob(two_by_one(), std::vector<double>{1.0}, 0), -std::log1p(std::exp(-2.0)), 1e-15);
  EXPECT_THROW(log_prob(two_by_one(), std::vector<double>{1.0}, 2), IndexOutOfBank);
}

TEST(LogProb, NormalizesAndMatchesOracle) {
  Rng rng(4);
  for (int c = 0; c < 100; ++c) {
    const auto p = support::random_params(rng, 11, 3, 3.0);
    const auto x = support::random_features(rng, 3);
    double total = 0.0;
    for (std::size_t y = 0; y < 11; ++y) {
      const double lp = log_prob(p, x, y);
      EXPECT_NEAR(lp, static_cast<double>(support::log_prob_oracle(p, x, y)), 1e-12);
      total += std::exp(lp);
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(LogProb, ExtremeLogitsStayFinite) {
  PolicyParams p = PolicyParams::zeros(3, 1);
  p.weights(0, 0) = 800.0;
  p.weights(1, 0) = -800.0;
  const std::vector<double> x = {1.0};
  EXPECT_NEAR(log_prob(p, x, 0), 0.0, 1e-300);
  EXPECT_NEAR(log_prob(p, x, 1), -1600.0, 1e-9);
  EXPECT_TRUE(std::isfinite(log_prob(p, x, 2)));
}

TEST(LogProb, ShiftInvariance) {
  Rng rng(8);
  for (int c = 0; c < 100; ++c) {
    const auto p = support::random_params(rng, 6, 3, 2.0);
    const auto x = support::random_features(rng, 3);
    PolicyParams shifted = p;
    const double k = support::uniform(rng, -5.0, 5.0);
    for (std::size_t b = 0; b < 6; ++b) {
      shifted.weights(b, 0) += k;  // bias feature is x[0] = 1
    }
    for (std::size_t y = 0; y < 6; ++y) {
      EXPECT_NEAR(log_prob(p, x, y), log_prob(shifted, x, y), 1e-12);
    }
  }
}

TEST(Sample, DominantLogit) {
  PolicyParams p = PolicyParams::zeros(5, 1);
  p.weights(3, 0) = 50.0;
  Rng rng(1);
  int hits = 0;
  for (int i = 0; i < 10000; ++i) {
    hits += sample_workflow(p, std::vector<double>{1.0}, rng) == 3;
  }
  EXPECT_GT(hits / 1e4, 0.999);
}

TEST(Sample, MatchesSoftmaxByChiSquare) {
  Rng rng(12);
  for (std::size_t bank : {2u, 11u, 32u}) {
    for (double scale : {0.0, 1.0}) {
      const auto p = support::random_params(rng, bank, 3, scale);
      const auto x = support::random_features(rng, 3);
      const auto probs = softmax(logits(p, x));
      std::vector<std::size_t> counts(bank, 0);
      for (int i = 0; i < 100000; ++i) {
        ++counts[sample_workflow(p, x, rng)];
      }
      EXPECT_GT(support::chi_square(counts, probs).p_value, 0.001) << bank << " " << scale;
    }
  }
}

TEST(Sample, FixedSeedReproduces) {
  Rng seed_rng(3);
  const auto p = support::random_params(seed_rng, 11, 3, 1.0);
  const std::vector<double> x = {1.0, 0.0, 0.3};
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(sample_workflow(p, x, a), sample_workflow(p, x, b));
  }
}

TEST(Argmax, TiesGoLow) {
  PolicyParams p = PolicyParams::zeros(4, 1);
  EXPECT_EQ(argmax_workflow(p, std::vector<double>{1.0}), 0u);
  p.weights(2, 0) = 1.0;
  p.weights(3, 0) = 1.0;
  EXPECT_EQ(argmax_workflow(p, std::vector<double>{1.0}), 2u);
}

TEST(Gradient, UniformExample) {
  const Matrix g = grad_log_prob(PolicyParams::zeros(2, 1), std::vector<double>{1.0}, 0);
  EXPECT_DOUBLE_EQ(g(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(g(1, 0), -0.5);
}

TEST(Gradient, FiniteDifferencesAndZeroRowSum) {
  Rng rng(21);
  const double h = 1e-6;
  for (int c = 0; c < 100; ++c) {
    const auto p = support::random_params(rng, 7, 3, 1.5);
    const auto x = support::random_features(rng, 3);
    const std::size_t y = uniform_index(rng, 7);
    const Matrix g = grad_log_prob(p, x, y);
    double max_err = 0.0;
    double max_fd = 0.0;
    for (std::size_t b = 0; b < 7; ++b) {
      for (std::size_t f = 0; f < 3; ++f) {
        PolicyParams up = p, down = p;
        up.weights(b, f) += h;
        down.weights(b, f) -= h;
        const double fd = (log_prob(up, x, y) - log_prob(down, x, y)) / (2.0 * h);
        max_err = std::max(max_err, std::fabs(fd - g(b, f)));
        max_fd = std::max(max_fd, std::fabs(fd));
      }
    }
    EXPECT_LE(max_err / max_fd, 1e-6);
    for (std::size_t f = 0; f < 3; ++f) {
      double col = 0.0;
      for (std::size_t b = 0; b < 7; ++b) {
        col += g(b, f);
      }
      EXPECT_NEAR(col, 0.0, 1e-14);
    }
  }
}

TEST(Checkpoint, RoundTrip) {
  Rng rng(99);
  PolicyCheckpoint c;
  c.theta = support::random_params(rng, 11, 3, 2.0);
  c.theta.bank_digest = "0123456789abcdef";
  c.theta_ref = support::random_params(rng, 11, 3, 2.0);
  c.theta_ref.bank_digest = c.theta.bank_digest;
  c.config_digest = "cfg";
  c.rng_state = rng_state(rng);
  c.iteration = 3;
  EXPECT_EQ(checkpoint_from_json(checkpoint_to_json(c)), c);
  EXPECT_EQ(checkpoint_from_json(checkpoint_to_json(c), "0123456789abcdef"), c);

  const auto path = std::filesystem::temp_directory_path() / "scoreflow_ckpt_test.json";
  save_checkpoint(c, path.string());
  EXPECT_EQ(load_checkpoint(path.string()), c);
  Rng restored = rng_from_state(c.rng_state);
  EXPECT_EQ(restored(), rng());
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptInputs) {
  PolicyCheckpoint c;
  c.theta = PolicyParams::zeros(3, 2, "aaaa");
  c.theta_ref = PolicyParams::zeros(3, 2, "aaaa");
  const std::string text = checkpoint_to_json(c);
  EXPECT_THROW(checkpoint_from_json(text.substr(0, text.size() / 2)), CorruptCheckpoint);
  EXPECT_THROW(checkpoint_from_json(text, "bbbb"), CorruptCheckpoint);
  EXPECT_THROW(checkpoint_from_json("{}"), CorruptCheckpoint);
  EXPECT_THROW(load_checkpoint("/nonexistent/ckpt.json"), IoError);
}
