#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "offpoc/agent.hpp"
#include "offpoc/tabular.hpp"

namespace offpoc {

// Fully resolved run description. Parsed strictly from JSON: unknown keys,
// malformed values, and cross-field contradictions (e.g. correction variant
// vs. agent kind) are rejected with field-level messages.
struct RunConfig {
  AgentKind agent_kind = AgentKind::kDeterministic;
  std::string env_name = "lqr1d";
  EnvParams env_params;
  std::uint64_t seed = 0;
  long total_steps = 10000;
  int eval_interval = 1000;
  int eval_episodes = 10;
  int diag_interval = 100;
  std::string output_dir = "run-output";
  AgentConfig agent;
  std::size_t buffer_capacity = 1000000;
  SamplerKind sampler = SamplerKind::kUniform;
  PerConfig per;
};

// Strict parse; `overrides` are dotted-path assignments like
// "agent_config.batch_size=64" applied before validation.
RunConfig parse_run_config(const std::string& json_text,
                           const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});
// Full schema with every default materialized; reparses to the same config.
std::string resolved_config_json(const RunConfig& config);

// train: runs the loop and writes config.lock.json, metrics.jsonl,
// checkpoint.ckpt, buffer.snap, and a timestamped run.log under output_dir.
int run_train(const RunConfig& config);

struct EvalArgs {
  std::string checkpoint;
  std::string env_name;
  EnvParams env_params;
  int episodes = 10;
  std::uint64_t seed = 0;
  std::string out_path;  // optional JSONL destination
};
int run_eval(const EvalArgs& args);

struct WeightsArgs {
  std::string buffer_snapshot;
  std::string checkpoint;
  std::string out_csv;
  int window = 256;
  int stride = 0;  // 0: defaults to window
  std::uint64_t seed = 0;
};
// Sliding-window importance-weight trace against the checkpoint policy;
// rows are (center step, lambda) plus min-max normalized columns. The rank
// correlation of the trace is written to *spearman_out when given.
int run_weights(const WeightsArgs& args, double* spearman_out = nullptr);

struct ContractArgs {
  std::string mdp_file;
  std::string output_dir;
  std::string pi_spec = "random:1";
  std::string eta_spec = "random:2";
  std::string lambda_spec = "const:0.5";
  int horizon = 200;
  int q_samples = 20;
  std::uint64_t seed = 0;
};
struct ContractSummary {
  double worst_ratio = 0.0;
  long negative_w_cells = 0;
  long violations = 0;
  double xi_max = 0.0;
  double tail_bound = 0.0;
};
int run_contract(const ContractArgs& args, ContractSummary* summary = nullptr);

// Policy specs: "uniform" or "random:<seed>".
TabularPolicy parse_policy_spec(const std::string& spec, const FiniteMdp& mdp);
// Lambda specs: "zero", "one", "const:<v>", "time-decay:<v>",
// "state-toggle:<v0>,<v1>", "action-profile:<seed>".
LambdaFn parse_lambda_spec(const std::string& spec, const FiniteMdp& mdp);

// Spearman rank correlation with average ranks on ties.
double spearman_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Corollary-style audit of one report: counts (s,a) cells with nonnegative
// coefficients where |HQ - Q^pi| exceeds xi * ||Q - Q^pi||_inf plus the
// truncation tail and a small numeric slack.
long count_contraction_violations(const ContractionReport& report,
                                  const Eigen::MatrixXd& q);

// Entry point behind the command-line tool. Exit codes: 0 success,
// 1 validation or usage error, 2 runtime fault.
int run_cli(int argc, const char* const* argv);

}  // namespace offpoc
