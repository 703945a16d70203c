#include "offpoc/env.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "offpoc/rng.hpp"

namespace offpoc {

namespace {

double get_param(const EnvParams& params, const std::string& key,
                 double fallback, EnvParams& seen) {
  seen[key] = fallback;
  const auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

void reject_unknown(const EnvParams& params, const EnvParams& known,
                    const std::string& env_name) {
  for (const auto& [key, value] : params) {
    (void)value;
    if (!known.contains(key)) {
      throw std::invalid_argument("env " + env_name +
                                  ": unknown parameter '" + key + "'");
    }
  }
}

Eigen::VectorXd clip_action(const Eigen::VectorXd& action, const EnvSpec& spec,
                            bool* warned) {
  if (action.size() != spec.action_dim) {
    throw std::invalid_argument("env: action dimension mismatch");
  }
  if (!action.allFinite()) {
    throw std::invalid_argument("env: non-finite action");
  }
  Eigen::VectorXd clipped =
      action.cwiseMax(spec.action_low).cwiseMin(spec.action_high);
  if (warned && !*warned && clipped != action) {
    std::cerr << "[" << spec.name << "] action outside bounds, clipping\n";
    *warned = true;
  }
  return clipped;
}

// x' = a x + b u, stage reward -(q x^2 + r u^2). The state is clipped to a
// documented box so rewards stay bounded under arbitrary policies.
class Lqr1dEnv final : public Env {
 public:
  explicit Lqr1dEnv(const EnvParams& params) {
    EnvParams known;
    a_ = get_param(params, "a_dyn", 1.0, known);
    b_ = get_param(params, "b_dyn", 1.0, known);
    q_ = get_param(params, "q_cost", 1.0, known);
    r_ = get_param(params, "r_cost", 1.0, known);
    x_limit_ = get_param(params, "x_limit", 10.0, known);
    const double bound = get_param(params, "action_bound", 2.0, known);
    const double max_steps = get_param(params, "max_episode_steps", 200, known);
    reject_unknown(params, known, "lqr1d");

    spec_.name = "lqr1d";
    spec_.state_dim = 1;
    spec_.action_dim = 1;
    spec_.action_low = Eigen::VectorXd::Constant(1, -bound);
    spec_.action_high = Eigen::VectorXd::Constant(1, bound);
    spec_.max_episode_steps = static_cast<int>(max_steps);
  }

  const EnvSpec& spec() const override { return spec_; }

  Eigen::VectorXd reset(std::uint64_t seed) override {
    Rng rng(seed);
    x_ = rng.uniform(-1.0, 1.0);
    steps_ = 0;
    return state();
  }

  StepResult step(const Eigen::VectorXd& action) override {
    const Eigen::VectorXd a = clip_action(action, spec_, &warned_);
    const double u = a[0];
    const double reward = -(q_ * x_ * x_ + r_ * u * u);
    x_ = std::clamp(a_ * x_ + b_ * u, -x_limit_, x_limit_);
    steps_ += 1;
    StepResult result;
    result.next_state = state();
    result.reward = reward;
    result.done = false;
    result.truncated = steps_ >= spec_.max_episode_steps;
    return result;
  }

  std::optional<LqrSolution> analytic_optimum() const override {
    return solve_scalar_riccati(a_, b_, q_, r_);
  }

 private:
  Eigen::VectorXd state() const {
    return Eigen::VectorXd::Constant(1, x_);
  }

  EnvSpec spec_;
  double a_ = 1.0, b_ = 1.0, q_ = 1.0, r_ = 1.0, x_limit_ = 10.0;
  double x_ = 0.0;
  int steps_ = 0;
  bool warned_ = false;
};

// Torque-limited rigid pendulum swing-up. Angle is measured from upright;
// observation is (cos theta, sin theta, theta_dot). Semi-implicit Euler.
class PendulumEnv final : public Env {
 public:
  explicit PendulumEnv(const EnvParams& params) {
    EnvParams known;
    gravity_ = get_param(params, "gravity", 10.0, known);
    mass_ = get_param(params, "mass", 1.0, known);
    length_ = get_param(params, "length", 1.0, known);
    dt_ = get_param(params, "dt", 0.05, known);
    max_speed_ = get_param(params, "max_speed", 8.0, known);
    const double torque = get_param(params, "max_torque", 2.0, known);
    const double max_steps = get_param(params, "max_episode_steps", 200, known);
    reject_unknown(params, known, "pendulum");

    spec_.name = "pendulum";
    spec_.state_dim = 3;
    spec_.action_dim = 1;
    spec_.action_low = Eigen::VectorXd::Constant(1, -torque);
    spec_.action_high = Eigen::VectorXd::Constant(1, torque);
    spec_.max_episode_steps = static_cast<int>(max_steps);
  }

  const EnvSpec& spec() const override { return spec_; }

  Eigen::VectorXd reset(std::uint64_t seed) override {
    Rng rng(seed);
    theta_ = rng.uniform(-M_PI, M_PI);
    theta_dot_ = rng.uniform(-1.0, 1.0);
    steps_ = 0;
    return observation();
  }

  StepResult step(const Eigen::VectorXd& action) override {
    const Eigen::VectorXd a = clip_action(action, spec_, &warned_);
    const double u = a[0];
    const double angle = normalized_angle();
    const double reward =
        -(angle * angle + 0.1 * theta_dot_ * theta_dot_ + 0.001 * u * u);

    const double accel =
        (3.0 * gravity_ / (2.0 * length_)) * std::sin(theta_) +
        (3.0 / (mass_ * length_ * length_)) * u;
    theta_dot_ =
        std::clamp(theta_dot_ + accel * dt_, -max_speed_, max_speed_);
    theta_ += theta_dot_ * dt_;
    steps_ += 1;

    StepResult result;
    result.next_state = observation();
    result.reward = reward;
    result.done = false;
    result.truncated = steps_ >= spec_.max_episode_steps;
    return result;
  }

 private:
  double normalized_angle() const {
    double a = std::fmod(theta_ + M_PI, 2.0 * M_PI);
    if (a < 0.0) a += 2.0 * M_PI;
    return a - M_PI;
  }

  Eigen::VectorXd observation() const {
    Eigen::VectorXd obs(3);
    obs << std::cos(theta_), std::sin(theta_), theta_dot_;
    return obs;
  }

  EnvSpec spec_;
  double gravity_ = 10.0, mass_ = 1.0, length_ = 1.0, dt_ = 0.05;
  double max_speed_ = 8.0;
  double theta_ = 0.0;
  double theta_dot_ = 0.0;
  int steps_ = 0;
  bool warned_ = false;
};

// Double integrator steering toward a random goal. Observation is
// (position, velocity, goal); reward is the negative goal distance with a
// small control penalty.
class PointMass2dEnv final : public Env {
 public:
  explicit PointMass2dEnv(const EnvParams& params) {
    EnvParams known;
    dt_ = get_param(params, "dt", 0.1, known);
    max_speed_ = get_param(params, "max_speed", 2.0, known);
    const double accel = get_param(params, "max_accel", 1.0, known);
    const double max_steps = get_param(params, "max_episode_steps", 100, known);
    reject_unknown(params, known, "pointmass2d");

    spec_.name = "pointmass2d";
    spec_.state_dim = 6;
    spec_.action_dim = 2;
    spec_.action_low = Eigen::VectorXd::Constant(2, -accel);
    spec_.action_high = Eigen::VectorXd::Constant(2, accel);
    spec_.max_episode_steps = static_cast<int>(max_steps);
  }

  const EnvSpec& spec() const override { return spec_; }

  Eigen::VectorXd reset(std::uint64_t seed) override {
    Rng rng(seed);
    pos_ << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    vel_.setZero();
    goal_ << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
    steps_ = 0;
    return observation();
  }

  StepResult step(const Eigen::VectorXd& action) override {
    const Eigen::VectorXd a = clip_action(action, spec_, &warned_);
    const double reward =
        -(pos_ - goal_).norm() - 0.01 * a.squaredNorm();
    vel_ += a * dt_;
    vel_ = vel_.cwiseMax(-max_speed_).cwiseMin(max_speed_);
    pos_ += vel_ * dt_;
    steps_ += 1;

    StepResult result;
    result.next_state = observation();
    result.reward = reward;
    result.done = false;
    result.truncated = steps_ >= spec_.max_episode_steps;
    return result;
  }

 private:
  Eigen::VectorXd observation() const {
    Eigen::VectorXd obs(6);
    obs << pos_[0], pos_[1], vel_[0], vel_[1], goal_[0], goal_[1];
    return obs;
  }

  EnvSpec spec_;
  double dt_ = 0.1, max_speed_ = 2.0;
  Eigen::Vector2d pos_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d vel_ = Eigen::Vector2d::Zero();
  Eigen::Vector2d goal_ = Eigen::Vector2d::Zero();
  int steps_ = 0;
  bool warned_ = false;
};

}  // namespace

std::unique_ptr<Env> make_env(const std::string& name,
                              const EnvParams& params) {
  if (name == "lqr1d") return std::make_unique<Lqr1dEnv>(params);
  if (name == "pendulum") return std::make_unique<PendulumEnv>(params);
  if (name == "pointmass2d") return std::make_unique<PointMass2dEnv>(params);
  throw std::invalid_argument("make_env: unknown environment '" + name + "'");
}

LqrSolution solve_scalar_riccati(double a, double b, double q, double r) {
  double p = q;
  for (int i = 0; i < 100000; ++i) {
    const double next =
        q + a * a * p - (a * b * p) * (a * b * p) / (r + b * b * p);
    if (std::abs(next - p) < 1e-14 * std::max(1.0, std::abs(next))) {
      p = next;
      break;
    }
    p = next;
  }
  LqrSolution solution;
  solution.value_coeff = p;
  solution.gain = a * b * p / (r + b * b * p);
  return solution;
}

}  // namespace offpoc
