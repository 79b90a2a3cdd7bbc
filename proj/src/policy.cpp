#include "scoreflow/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "scoreflow/digest.hpp"
#include "scoreflow/errors.hpp"
#include "scoreflow/numeric.hpp"

namespace scoreflow {

using nlohmann::json;

Matrix& Matrix::operator+=(const Matrix& o) { return add_scaled(o, 1.0); }

Matrix& Matrix::operator*=(double s) {
  for (double& v : data_) {
    v *= s;
  }
  return *this;
}

Matrix& Matrix::add_scaled(const Matrix& o, double s) {
  if (o.rows_ != rows_ || o.cols_ != cols_) {
    throw ShapeMismatch("matrix shapes differ");
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    data_[i] += s * o.data_[i];
  }
  return *this;
}

double Matrix::frobenius_norm() const {
  double acc = 0.0;
  for (double v : data_) {
    acc += v * v;
  }
  return std::sqrt(acc);
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ------------------------------------------------------------------- bank

WorkflowBank::WorkflowBank(std::vector<WorkflowAst> programs, const OperatorRegistry& registry,
                           const Limits& limits) {
  if (programs.size() < 2) {
    throw ConfigError("a workflow bank needs at least two programs");
  }
  std::set<std::string> seen;
  std::uint64_t h = fnv1a64("bank");
  for (auto& ast : programs) {
    BankEntry e;
    e.canonical_text = print(ast);
    e.digest = digest_of(e.canonical_text);
    e.report = validate(ast, registry, limits);
    e.ast = std::move(ast);
    if (!seen.insert(e.digest).second) {
      throw ConfigError("duplicate program in bank: " + e.canonical_text);
    }
    h = fnv1a64(e.digest, h);
    entries_.push_back(std::move(e));
  }
  digest_ = hex64(h);
}

WorkflowBank WorkflowBank::load(const std::string& path, const OperatorRegistry& registry, const Limits& limits) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open bank file " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return WorkflowBank(parse_bank(buf.str()), registry, limits);
}

bool WorkflowBank::all_valid() const {
  return std::all_of(entries_.begin(), entries_.end(), [](const BankEntry& e) { return e.report.ok; });
}

// ----------------------------------------------------------------- policy

PolicyParams PolicyParams::zeros(std::size_t bank_size, std::size_t feature_length, std::string bank_digest) {
  return {Matrix(bank_size, feature_length, 0.0), std::move(bank_digest)};
}

std::vector<double> logits(const PolicyParams& p, std::span<const double> x) {
  if (x.size() != p.feature_length()) {
    throw ShapeMismatch("feature length " + std::to_string(x.size()) + " does not match policy width " +
                        std::to_string(p.feature_length()));
  }
  std::vector<double> out(p.bank_size(), 0.0);
  for (std::size_t b = 0; b < out.size(); ++b) {
    const auto row = p.weights.row(b);
    double acc = 0.0;
    for (std::size_t f = 0; f < x.size(); ++f) {
      acc += row[f] * x[f];
    }
    out[b] = acc;
  }
  return out;
}

std::vector<double> softmax(std::span<const double> z) {
  const double lse = logsumexp(z);
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::exp(z[i] - lse);
  }
  return out;
}

double log_prob(const PolicyParams& p, std::span<const double> x, std::size_t y) {
  if (y >= p.bank_size()) {
    throw IndexOutOfBank("bank index " + std::to_string(y) + " out of range");
  }
  const auto z = logits(p, x);
  return z[y] - logsumexp(z);
}

std::size_t sample_workflow(const PolicyParams& p, std::span<const double> x, Rng& rng) {
  const auto probs = softmax(logits(p, x));
  return sample_categorical(probs, rng);
}

std::size_t argmax_workflow(const PolicyParams& p, std::span<const double> x) {
  const auto z = logits(p, x);
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

Matrix grad_log_prob(const PolicyParams& p, std::span<const double> x, std::size_t y) {
  if (y >= p.bank_size()) {
    throw IndexOutOfBank("bank index " + std::to_string(y) + " out of range");
  }
  const auto probs = softmax(logits(p, x));
  Matrix g(p.bank_size(), p.feature_length());
  for (std::size_t b = 0; b < probs.size(); ++b) {
    const double coeff = (b == y ? 1.0 : 0.0) - probs[b];
    auto row = g.row(b);
    for (std::size_t f = 0; f < x.size(); ++f) {
      row[f] = coeff * x[f];
    }
  }
  return g;
}

// ------------------------------------------------------------- checkpoint

std::string checkpoint_to_json(const PolicyCheckpoint& c) {
  if (c.theta.weights.rows() != c.theta_ref.weights.rows() || c.theta.weights.cols() != c.theta_ref.weights.cols()) {
    throw ShapeMismatch("theta and theta_ref shapes differ");
  }
  const json j = {
      {"bank_digest", c.theta.bank_digest},
      {"F", c.theta.feature_length()},
      {"B", c.theta.bank_size()},
      {"theta", c.theta.weights.data()},
      {"theta_ref", c.theta_ref.weights.data()},
      {"rng_state", c.rng_state},
      {"iteration", c.iteration},
      {"config_digest", c.config_digest},
  };
  return j.dump(2);
}

PolicyCheckpoint checkpoint_from_json(const std::string& text, const std::string& expected_bank_digest) {
  PolicyCheckpoint c;
  try {
    const json j = json::parse(text);
    const auto bank_digest = j.at("bank_digest").get<std::string>();
    const auto f = j.at("F").get<std::size_t>();
    const auto b = j.at("B").get<std::size_t>();
    auto theta = j.at("theta").get<std::vector<double>>();
    auto theta_ref = j.at("theta_ref").get<std::vector<double>>();
    if (theta.size() != b * f || theta_ref.size() != b * f) {
      throw CorruptCheckpoint("parameter arrays do not match B x F");
    }
    if (!expected_bank_digest.empty() && bank_digest != expected_bank_digest) {
      throw CorruptCheckpoint("bank digest mismatch: checkpoint " + bank_digest + ", bank " + expected_bank_digest);
    }
    c.theta = PolicyParams::zeros(b, f, bank_digest);
    c.theta.weights.data() = std::move(theta);
    c.theta_ref = PolicyParams::zeros(b, f, bank_digest);
    c.theta_ref.weights.data() = std::move(theta_ref);
    c.rng_state = j.at("rng_state").get<std::string>();
    c.iteration = j.at("iteration").get<int>();
    c.config_digest = j.at("config_digest").get<std::string>();
  } catch (const json::exception& e) {
    throw CorruptCheckpoint(std::string("unreadable checkpoint: ") + e.what());
  }
  if (!c.theta.weights.all_finite() || !c.theta_ref.weights.all_finite()) {
    throw CorruptCheckpoint("non-finite parameters");
  }
  if (!c.rng_state.empty()) {
    rng_from_state(c.rng_state);
  }
  return c;
}

void save_checkpoint(const PolicyCheckpoint& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write checkpoint " + path);
  }
  out << checkpoint_to_json(c) << "\n";
}

PolicyCheckpoint load_checkpoint(const std::string& path, const std::string& expected_bank_digest) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open checkpoint " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str(), expected_bank_digest);
}

}  // namespace scoreflow
