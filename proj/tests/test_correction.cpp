#include <doctest.h>

#include <cmath>
#include <numeric>

#include "offpoc/correction.hpp"
#include "offpoc/rng.hpp"
#include "oracles.hpp"

using namespace offpoc;

namespace {

OffPocConfig jsd_config(double sigma = 0.1) {
  OffPocConfig cfg;
  cfg.exploration_std = sigma;
  cfg.divergence = Divergence::kJsd;
  cfg.jsd_method = JsdMethod::kMonteCarlo;
  cfg.jsd_sample_count = 2048;
  return cfg;
}

std::vector<DiagonalGaussian> diag_batch(
    std::initializer_list<std::pair<double, double>> rows) {
  std::vector<DiagonalGaussian> batch;
  for (const auto& [mean, std] : rows) {
    batch.push_back({Eigen::VectorXd::Constant(1, mean),
                     Eigen::VectorXd::Constant(1, std)});
  }
  return batch;
}

}  // namespace

TEST_SUITE_BEGIN("correction");

TEST_CASE("deterministic: matching exploration noise gives lambda near one") {
  const double sigma = 0.1;
  Rng rng(31);
  const Eigen::MatrixXd current = rng.normal_matrix(4096, 2);
  const Eigen::MatrixXd stored =
      current + sigma * rng.normal_matrix(4096, 2);
  const auto report =
      deterministic_weight(current, stored, jsd_config(sigma), 5);
  REQUIRE(report.lambda_scalar.has_value());
  CHECK(*report.lambda_scalar >= 0.97);
  CHECK(*report.lambda_scalar <= 1.0);
}

TEST_CASE("deterministic: exact action equality is not the lambda=1 case") {
  // Zero differences fit a near-degenerate Gaussian whose divergence from
  // the sigma-wide reference is positive.
  Rng rng(32);
  const Eigen::MatrixXd current = rng.normal_matrix(256, 1);
  const auto report =
      deterministic_weight(current, current, jsd_config(0.1), 6);
  CHECK(*report.lambda_scalar < 1.0);
  CHECK(*report.rho_scalar > 0.0);
  // Oracle value of the same divergence: N(0, jitter) vs N(0, sigma^2+jitter).
  const double truth = oracles::jsd_by_quadrature(
      {0.0, kCovarianceJitter}, {0.0, 0.01 + kCovarianceJitter});
  CHECK(*report.rho_scalar == doctest::Approx(truth).epsilon(0.05));
}

TEST_CASE("deterministic: huge mean shift saturates to lambda = 0.5") {
  const double sigma = 0.1;
  Rng rng(33);
  const Eigen::MatrixXd current = rng.normal_matrix(512, 2);
  const Eigen::MatrixXd stored =
      current.array() + 100.0 * sigma;  // 100 sigma shift per dimension
  auto cfg = jsd_config(sigma);
  cfg.jsd_sample_count = 100000;
  const auto report = deterministic_weight(current, stored, cfg, 7);
  CHECK(std::abs(*report.lambda_scalar - 0.5) < 2e-3);
}

TEST_CASE("deterministic: permutation of the batch leaves lambda unchanged") {
  Rng rng(34);
  const int b = 64;
  Eigen::MatrixXd current = rng.normal_matrix(b, 2);
  Eigen::MatrixXd stored = rng.normal_matrix(b, 2);
  auto cfg = jsd_config(0.2);
  cfg.jsd_method = JsdMethod::kMomentMatched;
  const auto base = deterministic_weight(current, stored, cfg, 8);

  std::vector<int> perm(b);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[3], perm[40]);
  Eigen::MatrixXd current_p(b, 2), stored_p(b, 2);
  for (int i = 0; i < b; ++i) {
    current_p.row(i) = current.row(perm[i]);
    stored_p.row(i) = stored.row(perm[i]);
  }
  const auto permuted = deterministic_weight(current_p, stored_p, cfg, 8);
  CHECK(*base.lambda_scalar ==
        doctest::Approx(*permuted.lambda_scalar).epsilon(1e-12));
}

TEST_CASE("deterministic: input validation") {
  const auto cfg = jsd_config();
  CHECK_THROWS_AS(deterministic_weight(Eigen::MatrixXd::Zero(1, 2),
                                       Eigen::MatrixXd::Zero(1, 2), cfg, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(deterministic_weight(Eigen::MatrixXd::Zero(4, 2),
                                       Eigen::MatrixXd::Zero(4, 3), cfg, 0),
                  std::invalid_argument);
}

TEST_CASE("stochastic: identical parameters give lambda exactly one") {
  const auto params = diag_batch({{0.3, 0.5}, {-1.0, 0.2}, {2.0, 1.0}});
  const auto report = stochastic_weights(params, params, jsd_config(), 9);
  REQUIRE(report.lambda_vector.has_value());
  for (Eigen::Index i = 0; i < report.lambda_vector->size(); ++i) {
    CHECK((*report.lambda_vector)[i] == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("stochastic: one divergent transition saturates only its weight") {
  const auto current = diag_batch({{0.0, 1.0}, {0.0, 1.0}, {0.0, 1.0}});
  auto stored = current;
  stored[1].mean[0] = 100.0;  // 100 standard deviations away
  auto cfg = jsd_config();
  cfg.jsd_sample_count = 50000;
  const auto report = stochastic_weights(current, stored, cfg, 10);
  const Eigen::VectorXd& lambda = *report.lambda_vector;
  CHECK(lambda[0] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(lambda[2] == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(lambda[1] - 0.5) < 2e-3);
}

TEST_CASE("stochastic: kl variant reproduces the closed-form hand case") {
  // KL(N(0,1) || N(3,1)) = 4.5 in nats, so lambda = e^{-4.5}.
  const auto current = diag_batch({{0.0, 1.0}});
  const auto stored = diag_batch({{3.0, 1.0}});
  auto cfg = jsd_config();
  cfg.divergence = Divergence::kKl;
  const auto report = stochastic_weights(current, stored, cfg, 11);
  CHECK((*report.rho_vector)[0] == doctest::Approx(4.5).epsilon(1e-4));
  CHECK((*report.lambda_vector)[0] ==
        doctest::Approx(std::exp(-4.5)).epsilon(1e-3));
}

TEST_CASE("stochastic: malformed parameters are rejected") {
  const auto good = diag_batch({{0.0, 1.0}});
  auto bad = good;
  bad[0].std[0] = 0.0;
  CHECK_THROWS_AS(stochastic_weights(good, bad, jsd_config(), 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(stochastic_weights({}, {}, jsd_config(), 0),
                  std::invalid_argument);
}

TEST_CASE("stochastic: elementwise locality of the weights") {
  Rng rng(35);
  auto make_params = [&](int b) {
    std::vector<DiagonalGaussian> params;
    for (int i = 0; i < b; ++i) {
      params.push_back({rng.normal_vector(2),
                        (rng.normal_vector(2).array().abs() + 0.2).matrix()});
    }
    return params;
  };
  const auto current = make_params(6);
  auto stored = make_params(6);
  auto cfg = jsd_config();
  cfg.jsd_method = JsdMethod::kMomentMatched;
  const auto base = stochastic_weights(current, stored, cfg, 12);
  auto stored_j = stored;
  stored_j[2].mean[0] += 1.0;
  const auto changed = stochastic_weights(current, stored_j, cfg, 12);
  for (Eigen::Index i = 0; i < 6; ++i) {
    if (i == 2) {
      CHECK((*base.lambda_vector)[i] != (*changed.lambda_vector)[i]);
    } else {
      CHECK((*base.lambda_vector)[i] == (*changed.lambda_vector)[i]);
    }
  }
}

TEST_CASE("weight bounds and the exp(-rho) pairing hold on random batches") {
  Rng rng(36);
  for (int trial = 0; trial < 200; ++trial) {
    const int b = 2 + static_cast<int>(rng.uniform_int(0, 30));
    const int n = 1 + static_cast<int>(rng.uniform_int(0, 2));
    const Eigen::MatrixXd current = 2.0 * rng.normal_matrix(b, n);
    const Eigen::MatrixXd stored = 2.0 * rng.normal_matrix(b, n);
    OffPocConfig cfg = jsd_config(rng.uniform(0.05, 0.5));
    cfg.jsd_method = trial % 2 == 0 ? JsdMethod::kMonteCarlo
                                    : JsdMethod::kMomentMatched;
    cfg.jsd_sample_count = 256;
    if (trial % 5 == 4) cfg.divergence = Divergence::kKl;
    const auto report = deterministic_weight(
        current, stored, cfg, static_cast<std::uint64_t>(trial));
    const double lambda = *report.lambda_scalar;
    const double rho = *report.rho_scalar;
    CHECK(lambda > 0.0);
    CHECK(lambda <= 1.0);
    CHECK(rho >= 0.0);
    CHECK(std::abs(lambda - std::exp(-rho)) <= 1e-12);
    if (cfg.divergence == Divergence::kJsd) {
      CHECK(lambda >= 0.5);
    }
  }
}

TEST_CASE("apply deterministic weight scales both quantities") {
  WeightReport unit;
  unit.variant = WeightVariant::kDeterministic;
  unit.rho_scalar = 0.0;
  unit.lambda_scalar = 1.0;
  const auto same = apply_deterministic_weight(unit, 3.25, -1.5);
  CHECK(same.first == 3.25);
  CHECK(same.second == -1.5);

  WeightReport half = unit;
  half.lambda_scalar = 0.5;
  const auto scaled = apply_deterministic_weight(half, 2.0, 4.0);
  CHECK(scaled.first == doctest::Approx(1.0));
  CHECK(scaled.second == doctest::Approx(2.0));

  WeightReport wrong;
  wrong.variant = WeightVariant::kStochastic;
  wrong.lambda_vector = Eigen::VectorXd::Ones(2);
  CHECK_THROWS_AS(apply_deterministic_weight(wrong, 1.0, 1.0),
                  std::invalid_argument);
}

TEST_CASE("apply stochastic weights: hand cases of the weighted losses") {
  WeightReport report;
  report.variant = WeightVariant::kStochastic;

  SUBCASE("uniform weights recover the batch mean") {
    report.lambda_vector = Eigen::VectorXd::Ones(4);
    Eigen::VectorXd delta(4);
    delta << 1.0, -2.0, 0.5, 1.5;
    Eigen::VectorXd terms(4);
    terms << 2.0, 4.0, 6.0, 8.0;
    const auto out = apply_stochastic_weights(report, delta, terms);
    CHECK(out.critic_loss == doctest::Approx(delta.squaredNorm() / 4.0));
    CHECK(out.policy_objective == doctest::Approx(terms.mean()));
  }

  SUBCASE("mixed weights match the hand evaluation") {
    Eigen::VectorXd lambda(3);
    lambda << 1.0, 1.0, 0.5;
    report.lambda_vector = lambda;
    Eigen::VectorXd delta(3);
    delta << 1.0, -1.0, 2.0;
    const auto out =
        apply_stochastic_weights(report, delta, Eigen::VectorXd::Zero(3));
    CHECK(out.critic_loss == doctest::Approx(1.2));
  }

  SUBCASE("single sample") {
    report.lambda_vector = Eigen::VectorXd::Constant(1, 0.5);
    const auto out = apply_stochastic_weights(
        report, Eigen::VectorXd::Constant(1, 4.0),
        Eigen::VectorXd::Constant(1, 10.0));
    CHECK(out.critic_loss == doctest::Approx(8.0));
    CHECK(out.policy_objective == doctest::Approx(10.0));
  }

  SUBCASE("constant weights cancel in the policy objective") {
    Eigen::VectorXd terms(3);
    terms << 1.0, 2.0, 3.0;
    report.lambda_vector = Eigen::VectorXd::Constant(3, 0.7);
    const auto out =
        apply_stochastic_weights(report, Eigen::VectorXd::Zero(3), terms);
    CHECK(out.policy_objective == doctest::Approx(terms.mean()));
  }

  SUBCASE("zero mass under kl signals a skipped update") {
    report.lambda_vector = Eigen::VectorXd::Constant(2, 1e-15);
    const auto out = apply_stochastic_weights(
        report, Eigen::VectorXd::Ones(2), Eigen::VectorXd::Ones(2));
    CHECK(out.skip_update);
  }
}

TEST_SUITE_END();
