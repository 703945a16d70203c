#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "offpoc/gaussian.hpp"

namespace offpoc {

// One environment step. policy_params carries the behavioral policy's
// distribution parameters when the collecting agent was stochastic.
struct Transition {
  Eigen::VectorXd state;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_state;
  bool done = false;
  std::optional<DiagonalGaussian> policy_params;
  long birth_step = -1;  // assigned by the buffer on push
};

enum class SamplerKind { kUniform, kCer, kPer };

struct PerConfig {
  double priority_exponent = 0.6;   // alpha
  double is_exponent = 0.4;         // beta
  double priority_epsilon = 1e-3;   // added to |td error|
};

struct SampleBatch {
  std::vector<std::size_t> indices;
  // Importance weights, normalized by their max; all ones except under PER.
  Eigen::VectorXd is_weights;
};

// Fixed-capacity FIFO buffer with pluggable samplers. Single-writer; the
// training loop owns it.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, SamplerKind sampler = SamplerKind::kUniform,
               PerConfig per = {});

  // Validates the transition, assigns birth_step, evicts FIFO at capacity.
  void push(Transition t);

  // Draws batch_size transitions without replacement. CER forces the newest
  // transition into slot 0. PER samples proportional to priority^alpha and
  // fills is_weights.
  SampleBatch sample(std::size_t batch_size, std::uint64_t seed) const;

  // Drops every transition with birth_step < cutoff_step.
  void purge_exploration(long cutoff_step);

  // priority <- |td_error| + epsilon; PER sampler only.
  void update_priorities(const std::vector<std::size_t>& indices,
                         const Eigen::VectorXd& td_errors);

  const Transition& operator[](std::size_t i) const { return storage_[i]; }
  std::size_t size() const { return storage_.size(); }
  std::size_t capacity() const { return capacity_; }
  long total_pushes() const { return total_pushes_; }
  SamplerKind sampler() const { return sampler_; }
  const PerConfig& per_config() const { return per_; }
  double priority(std::size_t i) const { return priorities_[i]; }
  // True once every stored transition carries policy parameters.
  bool uniformly_parameterized() const;

  // Versioned snapshot; reload is bit-exact.
  void save(std::ostream& out) const;
  static ReplayBuffer load(std::istream& in);

 private:
  std::size_t capacity_;
  SamplerKind sampler_;
  PerConfig per_;
  std::deque<Transition> storage_;
  std::deque<double> priorities_;
  long total_pushes_ = 0;
  double max_priority_ = 1.0;
};

}  // namespace offpoc
