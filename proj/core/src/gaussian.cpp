#include "offpoc/gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "offpoc/rng.hpp"

namespace offpoc {

namespace {
constexpr double kLog2Pi = 1.8378770664093455;
}  // namespace

MultivariateGaussian::MultivariateGaussian(Eigen::VectorXd mean,
                                           Eigen::MatrixXd covariance)
    : mean_(std::move(mean)), covariance_(std::move(covariance)) {
  if (mean_.size() == 0) {
    throw std::invalid_argument("gaussian: empty mean");
  }
  if (covariance_.rows() != mean_.size() ||
      covariance_.cols() != mean_.size()) {
    throw std::invalid_argument("gaussian: covariance shape must match mean");
  }
  if (!mean_.allFinite() || !covariance_.allFinite()) {
    throw std::invalid_argument("gaussian: non-finite parameters");
  }
  covariance_ = 0.5 * (covariance_ + covariance_.transpose()).eval();
  covariance_.diagonal().array() += kCovarianceJitter;
}

MultivariateGaussian MultivariateGaussian::from_diagonal(
    const DiagonalGaussian& d) {
  if (d.mean.size() != d.std.size()) {
    throw std::invalid_argument("gaussian: diagonal mean/std size mismatch");
  }
  if (!(d.std.array() > 0.0).all()) {
    throw std::invalid_argument("gaussian: non-positive std");
  }
  Eigen::MatrixXd cov = d.std.array().square().matrix().asDiagonal();
  return MultivariateGaussian(d.mean, cov);
}

MultivariateGaussian MultivariateGaussian::isotropic(Eigen::Index dim,
                                                     double variance) {
  return MultivariateGaussian(
      Eigen::VectorXd::Zero(dim),
      variance * Eigen::MatrixXd::Identity(dim, dim));
}

const Eigen::MatrixXd& MultivariateGaussian::cholesky() const {
  if (!chol_) {
    Eigen::LLT<Eigen::MatrixXd> llt(covariance_);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("gaussian: Cholesky factorization failed");
    }
    chol_ = llt.matrixL();
  }
  return *chol_;
}

double MultivariateGaussian::log_det_covariance() const {
  if (!log_det_) {
    log_det_ = 2.0 * cholesky().diagonal().array().log().sum();
  }
  return *log_det_;
}

double MultivariateGaussian::log_density(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd centered = x - mean_;
  const Eigen::VectorXd y =
      cholesky().triangularView<Eigen::Lower>().solve(centered);
  return -0.5 * (static_cast<double>(dim()) * kLog2Pi +
                 log_det_covariance() + y.squaredNorm());
}

Eigen::VectorXd MultivariateGaussian::log_density_rows(
    const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd centered = x.rowwise() - mean_.transpose();
  const Eigen::MatrixXd y = cholesky()
                                .triangularView<Eigen::Lower>()
                                .solve(centered.transpose());
  const double offset =
      static_cast<double>(dim()) * kLog2Pi + log_det_covariance();
  return (-0.5 * (y.colwise().squaredNorm().array() + offset)).matrix();
}

MultivariateGaussian fit_gaussian(const Eigen::MatrixXd& rows) {
  if (rows.rows() < 2) {
    throw std::invalid_argument("fit_gaussian: needs at least two rows");
  }
  if (rows.cols() < 1) {
    throw std::invalid_argument("fit_gaussian: needs at least one column");
  }
  if (!rows.allFinite()) {
    throw std::invalid_argument("fit_gaussian: non-finite entry");
  }
  const Eigen::VectorXd mean = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(rows.rows() - 1);
  return MultivariateGaussian(mean, cov);
}

double kl_divergence(const MultivariateGaussian& p,
                     const MultivariateGaussian& q) {
  if (p.dim() != q.dim()) {
    throw std::invalid_argument("kl_divergence: dimension mismatch");
  }
  const Eigen::MatrixXd& lq = q.cholesky();
  // tr(Sigma_q^{-1} Sigma_p) = tr(Lq^{-1} Sigma_p Lq^{-T}), two solves.
  const Eigen::MatrixXd half =
      lq.triangularView<Eigen::Lower>().solve(p.covariance());
  const double trace_term = lq.triangularView<Eigen::Lower>()
                                .solve(Eigen::MatrixXd(half.transpose()))
                                .trace();
  const Eigen::VectorXd diff = q.mean() - p.mean();
  const Eigen::VectorXd y = lq.triangularView<Eigen::Lower>().solve(diff);
  const double kl =
      0.5 * (trace_term + y.squaredNorm() - static_cast<double>(p.dim()) +
             q.log_det_covariance() - p.log_det_covariance());
  if (!std::isfinite(kl)) {
    throw std::runtime_error("kl_divergence: non-finite result");
  }
  return kl;
}

namespace {

// m(x) = 0.5 (p(x) + q(x)) evaluated in log space.
Eigen::ArrayXd log_mixture(const Eigen::ArrayXd& lp, const Eigen::ArrayXd& lq) {
  const Eigen::ArrayXd hi = lp.max(lq);
  const Eigen::ArrayXd lo = lp.min(lq);
  return hi + ((lo - hi).exp() + 1.0).log() - kLn2;
}

double jsd_monte_carlo(const MultivariateGaussian& p,
                       const MultivariateGaussian& q, int sample_count,
                       std::uint64_t seed) {
  // Common standard-normal draws for both components make the estimator
  // exactly symmetric under swapping (p, q) and pin jsd(p, p) at zero.
  Rng rng(seed);
  const Eigen::MatrixXd z =
      rng.normal_matrix(sample_count, p.dim());
  const Eigen::MatrixXd xp =
      (z * p.cholesky().transpose()).rowwise() + p.mean().transpose();
  const Eigen::MatrixXd xq =
      (z * q.cholesky().transpose()).rowwise() + q.mean().transpose();

  const Eigen::ArrayXd lp_p = p.log_density_rows(xp).array();
  const Eigen::ArrayXd lq_p = q.log_density_rows(xp).array();
  const Eigen::ArrayXd lp_q = p.log_density_rows(xq).array();
  const Eigen::ArrayXd lq_q = q.log_density_rows(xq).array();

  const double term_p = (lp_p - log_mixture(lp_p, lq_p)).mean();
  const double term_q = (lq_q - log_mixture(lp_q, lq_q)).mean();
  return 0.5 * term_p + 0.5 * term_q;
}

double jsd_moment_matched(const MultivariateGaussian& p,
                          const MultivariateGaussian& q) {
  // Single-Gaussian approximation of the mixture with its exact moments.
  const Eigen::VectorXd mean = 0.5 * (p.mean() + q.mean());
  const Eigen::MatrixXd second =
      0.5 * (p.covariance() + p.mean() * p.mean().transpose()) +
      0.5 * (q.covariance() + q.mean() * q.mean().transpose());
  const MultivariateGaussian m(mean, second - mean * mean.transpose());
  return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m);
}

}  // namespace

double jsd(const MultivariateGaussian& p, const MultivariateGaussian& q,
           JsdMethod method, int sample_count, std::uint64_t seed) {
  if (p.dim() != q.dim()) {
    throw std::invalid_argument("jsd: dimension mismatch");
  }
  double value = 0.0;
  switch (method) {
    case JsdMethod::kMonteCarlo:
      if (sample_count < 1) {
        throw std::invalid_argument("jsd: sample_count must be positive");
      }
      value = jsd_monte_carlo(p, q, sample_count, seed);
      break;
    case JsdMethod::kMomentMatched:
      value = jsd_moment_matched(p, q);
      break;
  }
  if (!std::isfinite(value)) {
    throw std::runtime_error("jsd: non-finite estimate");
  }
  return std::clamp(value, 0.0, kLn2);
}

Eigen::MatrixXd sample(const MultivariateGaussian& g, int count,
                       std::uint64_t seed) {
  if (count < 1) {
    throw std::invalid_argument("sample: count must be positive");
  }
  Rng rng(seed);
  const Eigen::MatrixXd z = rng.normal_matrix(count, g.dim());
  return (z * g.cholesky().transpose()).rowwise() + g.mean().transpose();
}

}  // namespace offpoc
