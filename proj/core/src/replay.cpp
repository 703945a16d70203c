#include "offpoc/replay.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "offpoc/rng.hpp"
#include "offpoc/tensor_io.hpp"

namespace offpoc {

namespace {

void validate_transition(const Transition& t) {
  if (!t.state.allFinite() || !t.action.allFinite() ||
      !t.next_state.allFinite() || !std::isfinite(t.reward)) {
    throw std::invalid_argument("replay: non-finite transition field");
  }
  if (t.state.size() == 0 || t.action.size() == 0 ||
      t.next_state.size() != t.state.size()) {
    throw std::invalid_argument("replay: bad transition dimensions");
  }
  if (t.policy_params) {
    if (t.policy_params->mean.size() != t.action.size() ||
        t.policy_params->std.size() != t.action.size()) {
      throw std::invalid_argument("replay: policy parameter size mismatch");
    }
    if (!t.policy_params->mean.allFinite() ||
        !(t.policy_params->std.array() > 0.0).all()) {
      throw std::invalid_argument("replay: invalid policy parameters");
    }
  }
}

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity, SamplerKind sampler,
                           PerConfig per)
    : capacity_(capacity), sampler_(sampler), per_(per) {
  if (capacity_ == 0) {
    throw std::invalid_argument("replay: capacity must be positive");
  }
  if (per_.priority_epsilon <= 0.0) {
    throw std::invalid_argument("replay: priority epsilon must be positive");
  }
}

void ReplayBuffer::push(Transition t) {
  validate_transition(t);
  t.birth_step = total_pushes_;
  total_pushes_ += 1;
  if (storage_.size() == capacity_) {
    storage_.pop_front();
    priorities_.pop_front();
  }
  storage_.push_back(std::move(t));
  priorities_.push_back(max_priority_);
}

SampleBatch ReplayBuffer::sample(std::size_t batch_size,
                                 std::uint64_t seed) const {
  if (batch_size < 1 || batch_size > storage_.size()) {
    throw std::invalid_argument(
        "replay: batch size exceeds stored transitions");
  }
  Rng rng(seed);
  SampleBatch batch;
  batch.indices.reserve(batch_size);
  batch.is_weights = Eigen::VectorXd::Ones(batch_size);

  if (sampler_ == SamplerKind::kPer) {
    const std::size_t n = storage_.size();
    std::vector<double> mass(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mass[i] = std::pow(priorities_[i], per_.priority_exponent);
      total += mass[i];
    }
    const double full_total = total;
    std::vector<double> probs(n);
    for (std::size_t i = 0; i < n; ++i) probs[i] = mass[i] / full_total;

    // Without replacement: drawn indices have their mass removed.
    for (std::size_t k = 0; k < batch_size; ++k) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      std::size_t chosen = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        acc += mass[i];
        if (u < acc && mass[i] > 0.0) {
          chosen = i;
          break;
        }
      }
      // Fallback for fp accumulation drift: pick the last unchosen index.
      if (mass[chosen] == 0.0) {
        for (std::size_t i = n; i-- > 0;) {
          if (mass[i] > 0.0) {
            chosen = i;
            break;
          }
        }
      }
      batch.indices.push_back(chosen);
      total -= mass[chosen];
      mass[chosen] = 0.0;
    }
    // Weights use the original distribution, normalized by the batch max.
    for (std::size_t k = 0; k < batch_size; ++k) {
      const double p = probs[batch.indices[k]];
      batch.is_weights[static_cast<Eigen::Index>(k)] =
          std::pow(static_cast<double>(n) * p, -per_.is_exponent);
    }
    batch.is_weights /= batch.is_weights.maxCoeff();
    return batch;
  }

  // Uniform without replacement (partial Fisher-Yates over an index pool).
  const std::size_t n = storage_.size();
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t k = 0; k < batch_size; ++k) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(static_cast<std::int64_t>(k),
                        static_cast<std::int64_t>(n - 1)));
    std::swap(pool[k], pool[j]);
    batch.indices.push_back(pool[k]);
  }
  if (sampler_ == SamplerKind::kCer) {
    batch.indices[0] = n - 1;  // newest transition joins every batch
  }
  return batch;
}

void ReplayBuffer::purge_exploration(long cutoff_step) {
  while (!storage_.empty() && storage_.front().birth_step < cutoff_step) {
    storage_.pop_front();
    priorities_.pop_front();
  }
}

void ReplayBuffer::update_priorities(const std::vector<std::size_t>& indices,
                                     const Eigen::VectorXd& td_errors) {
  if (sampler_ != SamplerKind::kPer) {
    throw std::logic_error("replay: priorities only apply to the PER sampler");
  }
  if (static_cast<Eigen::Index>(indices.size()) != td_errors.size()) {
    throw std::invalid_argument("replay: priority update length mismatch");
  }
  for (std::size_t k = 0; k < indices.size(); ++k) {
    if (indices[k] >= storage_.size()) {
      throw std::invalid_argument("replay: priority index out of range");
    }
    const double p =
        std::abs(td_errors[static_cast<Eigen::Index>(k)]) +
        per_.priority_epsilon;
    priorities_[indices[k]] = p;
    max_priority_ = std::max(max_priority_, p);
  }
}

bool ReplayBuffer::uniformly_parameterized() const {
  return std::all_of(storage_.begin(), storage_.end(),
                     [](const Transition& t) { return t.policy_params.has_value(); });
}

void ReplayBuffer::save(std::ostream& out) const {
  out << "buffer 1\n";
  out << "capacity " << capacity_ << '\n';
  const char* sampler = "uniform";
  if (sampler_ == SamplerKind::kCer) sampler = "cer";
  if (sampler_ == SamplerKind::kPer) sampler = "per";
  out << "sampler " << sampler << '\n';
  out << "per ";
  write_scalar(out, per_.priority_exponent);
  out << ' ';
  write_scalar(out, per_.is_exponent);
  out << ' ';
  write_scalar(out, per_.priority_epsilon);
  out << '\n';
  out << "total_pushes " << total_pushes_ << '\n';
  out << "max_priority ";
  write_scalar(out, max_priority_);
  out << '\n';
  out << "count " << storage_.size() << '\n';
  for (std::size_t i = 0; i < storage_.size(); ++i) {
    const Transition& t = storage_[i];
    out << "t " << t.birth_step << ' ' << (t.done ? 1 : 0) << ' '
        << (t.policy_params ? 1 : 0) << ' ';
    write_scalar(out, t.reward);
    out << ' ';
    write_scalar(out, priorities_[i]);
    out << '\n';
    write_vector(out, t.state);
    write_vector(out, t.action);
    write_vector(out, t.next_state);
    if (t.policy_params) {
      write_vector(out, t.policy_params->mean);
      write_vector(out, t.policy_params->std);
    }
  }
}

ReplayBuffer ReplayBuffer::load(std::istream& in) {
  expect_token(in, "buffer");
  int version = 0;
  in >> version;
  if (version != 1) {
    throw std::runtime_error("replay: unsupported snapshot version");
  }
  expect_token(in, "capacity");
  std::size_t capacity = 0;
  in >> capacity;
  expect_token(in, "sampler");
  std::string sampler_name;
  in >> sampler_name;
  SamplerKind sampler = SamplerKind::kUniform;
  if (sampler_name == "cer") sampler = SamplerKind::kCer;
  else if (sampler_name == "per") sampler = SamplerKind::kPer;
  else if (sampler_name != "uniform") {
    throw std::runtime_error("replay: unknown sampler " + sampler_name);
  }
  expect_token(in, "per");
  PerConfig per;
  per.priority_exponent = read_scalar(in);
  per.is_exponent = read_scalar(in);
  per.priority_epsilon = read_scalar(in);

  ReplayBuffer buffer(capacity, sampler, per);
  expect_token(in, "total_pushes");
  in >> buffer.total_pushes_;
  expect_token(in, "max_priority");
  buffer.max_priority_ = read_scalar(in);
  expect_token(in, "count");
  std::size_t count = 0;
  in >> count;
  for (std::size_t i = 0; i < count; ++i) {
    expect_token(in, "t");
    Transition t;
    int done = 0;
    int has_params = 0;
    in >> t.birth_step >> done >> has_params;
    t.done = done != 0;
    t.reward = read_scalar(in);
    const double priority = read_scalar(in);
    t.state = read_vector(in);
    t.action = read_vector(in);
    t.next_state = read_vector(in);
    if (has_params) {
      DiagonalGaussian params;
      params.mean = read_vector(in);
      params.std = read_vector(in);
      t.policy_params = std::move(params);
    }
    buffer.storage_.push_back(std::move(t));
    buffer.priorities_.push_back(priority);
  }
  return buffer;
}

}  // namespace offpoc
