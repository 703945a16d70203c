#include "offpoc/correction.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "offpoc/rng.hpp"

namespace offpoc {

namespace {

double dissimilarity(const MultivariateGaussian& p,
                     const MultivariateGaussian& q, const OffPocConfig& cfg,
                     std::uint64_t seed) {
  switch (cfg.divergence) {
    case Divergence::kJsd:
      return jsd(p, q, cfg.jsd_method, cfg.jsd_sample_count, seed);
    case Divergence::kKl:
      // KL carries no upper bound; only the zero floor is enforced.
      return std::max(0.0, kl_divergence(p, q));
  }
  throw std::logic_error("dissimilarity: unknown divergence");
}

}  // namespace

double WeightReport::min_lambda() const {
  if (lambda_scalar) return *lambda_scalar;
  return lambda_vector->minCoeff();
}

double WeightReport::max_lambda() const {
  if (lambda_scalar) return *lambda_scalar;
  return lambda_vector->maxCoeff();
}

double WeightReport::mean_lambda() const {
  if (lambda_scalar) return *lambda_scalar;
  return lambda_vector->mean();
}

WeightReport deterministic_weight(const Eigen::MatrixXd& current_actions,
                                  const Eigen::MatrixXd& stored_actions,
                                  const OffPocConfig& cfg,
                                  std::uint64_t seed) {
  if (current_actions.rows() != stored_actions.rows() ||
      current_actions.cols() != stored_actions.cols()) {
    throw std::invalid_argument("deterministic_weight: shape mismatch");
  }
  if (current_actions.rows() < 2) {
    throw std::invalid_argument(
        "deterministic_weight: batch must hold at least two transitions");
  }
  if (!(cfg.exploration_std > 0.0)) {
    throw std::invalid_argument(
        "deterministic_weight: exploration_std must be positive");
  }

  const Eigen::MatrixXd differences = stored_actions - current_actions;
  const MultivariateGaussian fitted = fit_gaussian(differences);
  const MultivariateGaussian reference = MultivariateGaussian::isotropic(
      differences.cols(), cfg.exploration_std * cfg.exploration_std);

  WeightReport report;
  report.variant = WeightVariant::kDeterministic;
  report.rho_scalar = dissimilarity(fitted, reference, cfg, seed);
  report.lambda_scalar = std::exp(-*report.rho_scalar);
  return report;
}

WeightReport stochastic_weights(
    const std::vector<DiagonalGaussian>& current_policy,
    const std::vector<DiagonalGaussian>& stored_policy,
    const OffPocConfig& cfg, std::uint64_t seed) {
  if (current_policy.size() != stored_policy.size()) {
    throw std::invalid_argument("stochastic_weights: batch size mismatch");
  }
  if (current_policy.empty()) {
    throw std::invalid_argument("stochastic_weights: empty batch");
  }

  const auto batch = static_cast<Eigen::Index>(current_policy.size());
  Eigen::VectorXd rho(batch);
  Eigen::VectorXd lambda(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    const MultivariateGaussian current =
        MultivariateGaussian::from_diagonal(current_policy[i]);
    const MultivariateGaussian stored =
        MultivariateGaussian::from_diagonal(stored_policy[i]);
    rho[i] = dissimilarity(current, stored, cfg,
                           derive_seed(seed, static_cast<std::uint64_t>(i)));
    lambda[i] = std::exp(-rho[i]);
  }

  WeightReport report;
  report.variant = WeightVariant::kStochastic;
  report.rho_vector = std::move(rho);
  report.lambda_vector = std::move(lambda);
  return report;
}

std::pair<double, double> apply_deterministic_weight(
    const WeightReport& report, double critic_loss,
    double policy_objective) {
  if (report.variant != WeightVariant::kDeterministic ||
      !report.lambda_scalar) {
    throw std::invalid_argument(
        "apply_deterministic_weight: report is not a deterministic weight");
  }
  const double lambda = *report.lambda_scalar;
  return {lambda * critic_loss, lambda * policy_objective};
}

StochasticLosses apply_stochastic_weights(
    const WeightReport& report, const Eigen::VectorXd& per_sample_td_errors,
    const Eigen::VectorXd& per_sample_policy_terms) {
  if (report.variant != WeightVariant::kStochastic || !report.lambda_vector) {
    throw std::invalid_argument(
        "apply_stochastic_weights: report is not a stochastic weight");
  }
  const Eigen::VectorXd& lambda = *report.lambda_vector;
  if (lambda.size() != per_sample_td_errors.size() ||
      lambda.size() != per_sample_policy_terms.size()) {
    throw std::invalid_argument("apply_stochastic_weights: length mismatch");
  }

  StochasticLosses out;
  const double mass = lambda.lpNorm<1>();
  if (mass < 1e-12) {
    out.skip_update = true;
    return out;
  }
  out.critic_loss =
      (lambda.array() * per_sample_td_errors.array()).matrix().squaredNorm() /
      mass;
  out.policy_objective =
      (lambda.array() * per_sample_policy_terms.array()).sum() / mass;
  return out;
}

}  // namespace offpoc
