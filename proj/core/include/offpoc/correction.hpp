#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "offpoc/gaussian.hpp"

namespace offpoc {

enum class Divergence { kJsd, kKl };

// Configuration of the importance-weight computation. The reference
// distribution for the deterministic variant is N(0, exploration_std^2 * I),
// coupling the correction to the exploration noise scale. The KL choice
// exists for sensitivity studies; JSD is the default.
struct OffPocConfig {
  double exploration_std = 0.1;
  Divergence divergence = Divergence::kJsd;
  JsdMethod jsd_method = JsdMethod::kMonteCarlo;
  int jsd_sample_count = 1024;
};

enum class WeightVariant { kDeterministic, kStochastic };

// Output of the weight computation: a single batch weight for deterministic
// policies, one weight per transition for stochastic ones. Every lambda is
// exp(-rho) of its paired dissimilarity rho.
struct WeightReport {
  WeightVariant variant = WeightVariant::kDeterministic;
  std::optional<double> lambda_scalar;
  std::optional<double> rho_scalar;
  std::optional<Eigen::VectorXd> lambda_vector;
  std::optional<Eigen::VectorXd> rho_vector;

  double min_lambda() const;
  double max_lambda() const;
  double mean_lambda() const;
};

// Batch weight for a deterministic policy: fits a Gaussian to the row-wise
// action differences (stored - current), measures its divergence from the
// exploration reference, and maps it through exp(-rho).
WeightReport deterministic_weight(const Eigen::MatrixXd& current_actions,
                                  const Eigen::MatrixXd& stored_actions,
                                  const OffPocConfig& cfg,
                                  std::uint64_t seed);

// Per-transition weights for a stochastic policy: divergence between the
// current policy's distribution at each stored state and the stored
// behavioral distribution parameters.
WeightReport stochastic_weights(
    const std::vector<DiagonalGaussian>& current_policy,
    const std::vector<DiagonalGaussian>& stored_policy,
    const OffPocConfig& cfg, std::uint64_t seed);

// Scales both objectives by the scalar batch weight. The weight is a
// constant with respect to all network parameters.
std::pair<double, double> apply_deterministic_weight(
    const WeightReport& report, double critic_loss, double policy_objective);

struct StochasticLosses {
  double critic_loss = 0.0;
  double policy_objective = 0.0;
  // Set when the weight mass is numerically zero (possible only under the
  // KL divergence); the caller should skip the update.
  bool skip_update = false;
};

// Weighted critic loss ||lambda o delta||_2^2 / ||lambda||_1 and weighted
// policy objective sum(lambda_i * term_i) / ||lambda||_1.
StochasticLosses apply_stochastic_weights(
    const WeightReport& report, const Eigen::VectorXd& per_sample_td_errors,
    const Eigen::VectorXd& per_sample_policy_terms);

}  // namespace offpoc
