#include <doctest.h>

#include <cmath>

#include "offpoc/gaussian.hpp"
#include "offpoc/rng.hpp"
#include "oracles.hpp"

using namespace offpoc;

namespace {

MultivariateGaussian gaussian1(double mean, double variance) {
  return MultivariateGaussian(Eigen::VectorXd::Constant(1, mean),
                              Eigen::MatrixXd::Constant(1, 1, variance));
}

oracles::Gaussian1d oracle_of(const MultivariateGaussian& g) {
  // The oracle integrates the jittered density the library actually uses.
  return {g.mean()[0], g.covariance()(0, 0)};
}

}  // namespace

TEST_SUITE_BEGIN("gaussian");

TEST_CASE("fit: identical rows give zero spread plus jitter") {
  Eigen::MatrixXd rows(3, 1);
  rows << 1.7, 1.7, 1.7;
  const auto g = fit_gaussian(rows);
  CHECK(g.mean()[0] == doctest::Approx(1.7));
  CHECK(g.covariance()(0, 0) == doctest::Approx(kCovarianceJitter));
}

TEST_CASE("fit: two-point batch matches the hand evaluation") {
  Eigen::MatrixXd rows(2, 1);
  rows << 0.0, 2.0;
  const auto g = fit_gaussian(rows);
  CHECK(g.mean()[0] == doctest::Approx(1.0));
  CHECK(g.covariance()(0, 0) == doctest::Approx(2.0 + kCovarianceJitter));
}

TEST_CASE("fit: errors on degenerate input") {
  CHECK_THROWS_AS(fit_gaussian(Eigen::MatrixXd::Zero(1, 2)),
                  std::invalid_argument);
  Eigen::MatrixXd bad(2, 1);
  bad << 1.0, std::nan("");
  CHECK_THROWS_AS(fit_gaussian(bad), std::invalid_argument);
}

TEST_CASE("fit: recovers a known gaussian from many draws") {
  Eigen::VectorXd mean(2);
  mean << 1.0, -1.0;
  Eigen::MatrixXd cov(2, 2);
  cov << 4.0, 0.0, 0.0, 9.0;
  const MultivariateGaussian truth(mean, cov);
  const Eigen::MatrixXd draws = sample(truth, 100000, 1234);
  const auto fitted = fit_gaussian(draws);
  CHECK((fitted.mean() - mean).lpNorm<Eigen::Infinity>() < 0.05);
  CHECK((fitted.covariance() - truth.covariance())
            .lpNorm<Eigen::Infinity>() < 0.2);
}

TEST_CASE("kl: matches quadrature on the spec cases") {
  const auto p1 = gaussian1(0.0, 1.0);
  CHECK(kl_divergence(p1, p1) == doctest::Approx(0.0).epsilon(1e-12));

  const auto shifted = gaussian1(1.0, 1.0);
  const auto base = gaussian1(0.0, 1.0);
  const double kl_shift = kl_divergence(shifted, base);
  CHECK(kl_shift == doctest::Approx(0.5).epsilon(1e-5));
  CHECK(kl_shift == doctest::Approx(oracles::kl_by_quadrature(
                        oracle_of(shifted), oracle_of(base)))
                        .epsilon(1e-9));

  const auto wide = gaussian1(0.0, 2.0);
  const double kl_wide = kl_divergence(wide, base);
  CHECK(kl_wide == doctest::Approx(0.5 * (2.0 - 1.0 - std::log(2.0)))
                       .epsilon(1e-4));
  CHECK(kl_wide == doctest::Approx(oracles::kl_by_quadrature(
                       oracle_of(wide), oracle_of(base)))
                       .epsilon(1e-9));
}

TEST_CASE("kl: randomized pairs agree with quadrature to 1e-6") {
  Rng rng(99);
  for (int i = 0; i < 25; ++i) {
    const auto p = gaussian1(rng.uniform(-3.0, 3.0),
                             std::pow(rng.uniform(0.4, 2.5), 2));
    const auto q = gaussian1(rng.uniform(-3.0, 3.0),
                             std::pow(rng.uniform(0.4, 2.5), 2));
    const double closed = kl_divergence(p, q);
    const double numeric =
        oracles::kl_by_quadrature(oracle_of(p), oracle_of(q));
    CHECK(std::abs(closed - numeric) < 1e-6);
  }
}

TEST_CASE("jsd: identical distributions measure zero") {
  Eigen::VectorXd mean(2);
  mean << 0.3, -2.0;
  Eigen::MatrixXd cov(2, 2);
  cov << 1.0, 0.2, 0.2, 0.5;
  const MultivariateGaussian p(mean, cov);
  CHECK(jsd(p, p, JsdMethod::kMonteCarlo, 4096, 7) ==
        doctest::Approx(0.0).epsilon(1e-9));
  CHECK(jsd(p, p, JsdMethod::kMomentMatched) ==
        doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("jsd: far-apart distributions saturate at ln 2") {
  const auto p = gaussian1(100.0, 1.0);
  const auto q = gaussian1(-100.0, 1.0);
  const double mc = jsd(p, q, JsdMethod::kMonteCarlo, 100000, 11);
  CHECK(std::abs(mc - kLn2) < 1e-3);
  const double mm = jsd(p, q, JsdMethod::kMomentMatched);
  CHECK(std::abs(mm - kLn2) < 1e-6);
}

TEST_CASE("jsd: unit shift matches quadrature") {
  const auto p = gaussian1(0.0, 1.0);
  const auto q = gaussian1(1.0, 1.0);
  const double expected =
      oracles::jsd_by_quadrature(oracle_of(p), oracle_of(q));
  CHECK(expected == doctest::Approx(0.1060).epsilon(5e-2));
  const double mc = jsd(p, q, JsdMethod::kMonteCarlo, 100000, 21);
  CHECK(std::abs(mc - expected) < 5e-3);
}

TEST_CASE("jsd: both estimators track quadrature on random 1-D pairs") {
  // The moment-matched estimator holds 0.05 accuracy for near pairs
  // (variance ratio within [0.7, 1.4], separation within ~2 sigma); outside
  // that regime its error grows to ~0.2 and only the MC estimator applies
  // (see the wide-separation case below). Near pairs are the regime where
  // weight precision matters: distant pairs saturate toward lambda = 0.5.
  Rng rng(123);
  for (int i = 0; i < 20; ++i) {
    const double sp = rng.uniform(0.6, 1.8);
    const double sq = sp * rng.uniform(0.75, 1.33);
    const double base = rng.uniform(-1.0, 1.0);
    const double shift = rng.uniform(-1.5, 1.5) * std::min(sp, sq);
    const auto p = gaussian1(base, sp * sp);
    const auto q = gaussian1(base + shift, sq * sq);
    const double truth = oracles::jsd_by_quadrature(oracle_of(p), oracle_of(q));
    const double mc = jsd(p, q, JsdMethod::kMonteCarlo, 100000,
                          derive_seed(500, static_cast<std::uint64_t>(i)));
    const double mm = jsd(p, q, JsdMethod::kMomentMatched);
    CHECK(std::abs(mc - truth) < 1e-2);
    CHECK(std::abs(mm - truth) < 0.05);
  }
}

TEST_CASE("jsd: monte-carlo stays accurate at wide separations") {
  Rng rng(456);
  for (int i = 0; i < 10; ++i) {
    const auto p = gaussian1(rng.uniform(-4.0, 4.0),
                             std::pow(rng.uniform(0.4, 2.0), 2));
    const auto q = gaussian1(rng.uniform(-4.0, 4.0),
                             std::pow(rng.uniform(0.4, 2.0), 2));
    const double truth = oracles::jsd_by_quadrature(oracle_of(p), oracle_of(q));
    const double mc = jsd(p, q, JsdMethod::kMonteCarlo, 100000,
                          derive_seed(777, static_cast<std::uint64_t>(i)));
    CHECK(std::abs(mc - truth) < 1e-2);
  }
}

TEST_CASE("jsd: exactly symmetric in its arguments") {
  Rng rng(321);
  for (int i = 0; i < 10; ++i) {
    Eigen::VectorXd mp = rng.normal_vector(2);
    Eigen::VectorXd mq = rng.normal_vector(2);
    Eigen::MatrixXd a = rng.normal_matrix(2, 2);
    Eigen::MatrixXd b = rng.normal_matrix(2, 2);
    const MultivariateGaussian p(mp, a * a.transpose());
    const MultivariateGaussian q(mq, b * b.transpose());
    const auto seed = static_cast<std::uint64_t>(1000 + i);
    CHECK(jsd(p, q, JsdMethod::kMonteCarlo, 512, seed) ==
          jsd(q, p, JsdMethod::kMonteCarlo, 512, seed));
    CHECK(jsd(p, q, JsdMethod::kMomentMatched) ==
          jsd(q, p, JsdMethod::kMomentMatched));
  }
}

TEST_CASE("jsd: bounded in [0, ln 2] on random pairs") {
  Rng rng(77);
  for (int i = 0; i < 50; ++i) {
    const auto p = gaussian1(rng.uniform(-50.0, 50.0),
                             std::pow(rng.uniform(0.05, 5.0), 2));
    const auto q = gaussian1(rng.uniform(-50.0, 50.0),
                             std::pow(rng.uniform(0.05, 5.0), 2));
    const double mc = jsd(p, q, JsdMethod::kMonteCarlo, 256,
                          static_cast<std::uint64_t>(i));
    const double mm = jsd(p, q, JsdMethod::kMomentMatched);
    CHECK(mc >= 0.0);
    CHECK(mc <= kLn2);
    CHECK(mm >= 0.0);
    CHECK(mm <= kLn2);
  }
}

TEST_CASE("sample: seeded determinism and near-degenerate spread") {
  Eigen::VectorXd mean(3);
  mean << 1.0, 2.0, 3.0;
  const MultivariateGaussian g(mean, Eigen::MatrixXd::Identity(3, 3));
  const auto a = sample(g, 32, 42);
  const auto b = sample(g, 32, 42);
  CHECK((a - b).lpNorm<Eigen::Infinity>() == 0.0);

  const MultivariateGaussian tight(Eigen::VectorXd::Constant(1, 5.0),
                                   Eigen::MatrixXd::Zero(1, 1));
  const auto draws = sample(tight, 4, 9);
  CHECK((draws.array() - 5.0).abs().maxCoeff() <
        5.0 * std::sqrt(kCovarianceJitter));
}

TEST_CASE("construction: enforces shape and symmetry invariants") {
  Eigen::MatrixXd skew(2, 2);
  skew << 1.0, 0.3, 0.1, 1.0;
  const MultivariateGaussian g(Eigen::VectorXd::Zero(2), skew);
  CHECK(g.covariance()(0, 1) == g.covariance()(1, 0));
  CHECK_THROWS_AS(
      MultivariateGaussian(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Zero(3, 3)),
      std::invalid_argument);
  CHECK_THROWS_AS(kl_divergence(g, gaussian1(0.0, 1.0)),
                  std::invalid_argument);
}

TEST_SUITE_END();
