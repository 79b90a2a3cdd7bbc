#pragma once

// The workflow generator: a linear-softmax policy over a bank of validated
// workflow programs, with exact log-probabilities and analytic gradients.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scoreflow/random.hpp"
#include "scoreflow/runtime.hpp"
#include "scoreflow/workflow_lang.hpp"

namespace scoreflow {

/// Dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::vector<double>& data() noexcept { return data_; }
  const std::vector<double>& data() const noexcept { return data_; }

  Matrix& operator+=(const Matrix& o);
  Matrix& operator*=(double s);
  /// this += s * o
  Matrix& add_scaled(const Matrix& o, double s);
  double frobenius_norm() const;
  bool all_finite() const;

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

struct BankEntry {
  WorkflowAst ast;
  std::string canonical_text;
  std::string digest;
  ValidationReport report;
};

/// The reachable subset of the workflow search space. Programs that fail
/// validation may be loaded (user-extended banks) but are flagged.
class WorkflowBank {
 public:
  /// Throws ConfigError on fewer than two programs or duplicate digests.
  WorkflowBank(std::vector<WorkflowAst> programs, const OperatorRegistry& registry, const Limits& limits);

  static WorkflowBank load(const std::string& path, const OperatorRegistry& registry, const Limits& limits);

  std::size_t size() const noexcept { return entries_.size(); }
  const BankEntry& operator[](std::size_t i) const { return entries_.at(i); }
  bool valid(std::size_t i) const { return entries_.at(i).report.ok; }
  bool all_valid() const;
  /// Digest over the ordered program digests.
  const std::string& digest() const noexcept { return digest_; }

 private:
  std::vector<BankEntry> entries_;
  std::string digest_;
};

struct PolicyParams {
  Matrix weights;  // B x F
  std::string bank_digest;

  std::size_t bank_size() const noexcept { return weights.rows(); }
  std::size_t feature_length() const noexcept { return weights.cols(); }

  static PolicyParams zeros(std::size_t bank_size, std::size_t feature_length, std::string bank_digest = {});

  bool operator==(const PolicyParams&) const = default;
};

std::vector<double> logits(const PolicyParams& p, std::span<const double> x);
std::vector<double> softmax(std::span<const double> logits);

double log_prob(const PolicyParams& p, std::span<const double> x, std::size_t y);

std::size_t sample_workflow(const PolicyParams& p, std::span<const double> x, Rng& rng);

/// Highest-logit entry; ties go to the lowest index.
std::size_t argmax_workflow(const PolicyParams& p, std::span<const double> x);

/// d log pi(y|x) / d theta: row b is (1{b=y} - softmax_b) * x.
Matrix grad_log_prob(const PolicyParams& p, std::span<const double> x, std::size_t y);

struct PolicyCheckpoint {
  PolicyParams theta;
  PolicyParams theta_ref;
  std::string config_digest;
  std::string rng_state;
  int iteration = 0;

  bool operator==(const PolicyCheckpoint&) const = default;
};

std::string checkpoint_to_json(const PolicyCheckpoint& c);
/// Throws CorruptCheckpoint on malformed content or shape mismatch. When
/// `expected_bank_digest` is nonempty it must match the stored digest.
PolicyCheckpoint checkpoint_from_json(const std::string& text, const std::string& expected_bank_digest = {});

void save_checkpoint(const PolicyCheckpoint& c, const std::string& path);
PolicyCheckpoint load_checkpoint(const std::string& path, const std::string& expected_bank_digest = {});

}  // namespace scoreflow
