#pragma once

#include <cstdint>
#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace offpoc {

// Added to every covariance diagonal at construction so the density stays
// proper even when the sample covariance is singular (batch smaller than the
// dimension, or degenerate rows).
inline constexpr double kCovarianceJitter = 1e-6;

// ln(2): upper bound of the Jensen-Shannon divergence in nats.
inline constexpr double kLn2 = 0.6931471805599453;

// Diagonal Gaussian given as per-dimension mean and standard deviation.
// This is the parameter set stochastic policies store with each transition.
struct DiagonalGaussian {
  Eigen::VectorXd mean;
  Eigen::VectorXd std;
};

class MultivariateGaussian {
 public:
  // Covariance is symmetrized (0.5 * (C + C^T)) and jitter is added to the
  // diagonal. Throws std::invalid_argument on dimension mismatch or
  // non-finite input.
  MultivariateGaussian(Eigen::VectorXd mean, Eigen::MatrixXd covariance);

  static MultivariateGaussian from_diagonal(const DiagonalGaussian& d);

  // Standard normal scaled to covariance variance * I.
  static MultivariateGaussian isotropic(Eigen::Index dim, double variance);

  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& covariance() const { return covariance_; }
  Eigen::Index dim() const { return mean_.size(); }

  // Lower Cholesky factor of the covariance; computed lazily and cached.
  // Throws std::runtime_error if the factorization fails (indefinite input
  // covariance, which jitter on a PSD matrix rules out).
  const Eigen::MatrixXd& cholesky() const;
  double log_det_covariance() const;

  double log_density(const Eigen::VectorXd& x) const;
  // One log-density per row of x.
  Eigen::VectorXd log_density_rows(const Eigen::MatrixXd& x) const;

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd covariance_;
  mutable std::optional<Eigen::MatrixXd> chol_;
  mutable std::optional<double> log_det_;
};

// Column means and unbiased sample covariance (divisor B - 1) of the rows,
// then jitter. Throws std::invalid_argument for fewer than two rows or
// non-finite entries.
MultivariateGaussian fit_gaussian(const Eigen::MatrixXd& rows);

// Closed-form Gaussian KL(p || q) in nats.
double kl_divergence(const MultivariateGaussian& p,
                     const MultivariateGaussian& q);

enum class JsdMethod { kMonteCarlo, kMomentMatched };

// Jensen-Shannon divergence in nats, clamped to [0, ln 2]. Both estimators
// are exactly symmetric in (p, q): the Monte-Carlo one evaluates the
// symmetric formula on common standard-normal draws, the moment-matched one
// uses the closed-form mixture moments.
double jsd(const MultivariateGaussian& p, const MultivariateGaussian& q,
           JsdMethod method, int sample_count = 1024,
           std::uint64_t seed = 0);

// count x dim matrix of draws; deterministic for a fixed seed.
Eigen::MatrixXd sample(const MultivariateGaussian& g, int count,
                       std::uint64_t seed);

}  // namespace offpoc
