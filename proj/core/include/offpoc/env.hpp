#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include <Eigen/Core>

namespace offpoc {

struct EnvSpec {
  std::string name;
  Eigen::Index state_dim = 0;
  Eigen::Index action_dim = 0;
  Eigen::VectorXd action_low;
  Eigen::VectorXd action_high;
  int max_episode_steps = 0;
};

struct StepResult {
  Eigen::VectorXd next_state;
  double reward = 0.0;
  bool done = false;       // terminal state reached
  bool truncated = false;  // episode cut at the step limit
};

// Infinite-horizon solution of the scalar linear-quadratic problem: optimal
// feedback gain (action = -gain * x) and quadratic value coefficient
// (cost-to-go = value_coeff * x^2).
struct LqrSolution {
  double gain = 0.0;
  double value_coeff = 0.0;
};

// Episodic continuous-control environment. Dynamics are deterministic; all
// randomness enters through the reset seed, so (seed, action sequence)
// determines the trajectory bit-exactly.
class Env {
 public:
  virtual ~Env() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual Eigen::VectorXd reset(std::uint64_t seed) = 0;
  // Out-of-bounds actions are clipped; non-finite actions throw.
  virtual StepResult step(const Eigen::VectorXd& action) = 0;
  // Riccati-derived optimum; only the linear-quadratic environment has one.
  virtual std::optional<LqrSolution> analytic_optimum() const {
    return std::nullopt;
  }
};

using EnvParams = std::map<std::string, double>;

// Environments by name: "lqr1d", "pendulum", "pointmass2d". Unknown names
// and unknown parameter keys throw std::invalid_argument.
std::unique_ptr<Env> make_env(const std::string& name,
                              const EnvParams& params = {});

// Fixed-point iteration for the scalar discrete-time Riccati equation of
// x' = a x + b u with stage cost q x^2 + r u^2; converges to 1e-12.
LqrSolution solve_scalar_riccati(double a, double b, double q, double r);

}  // namespace offpoc
