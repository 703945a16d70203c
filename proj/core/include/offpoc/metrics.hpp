#pragma once

#include <fstream>
#include <mutex>
#include <optional>
#include <string>

namespace offpoc {

struct WeightReport;

// Append-only JSONL metrics stream. Records carry a schema version and no
// timestamps, so a run's metrics file is a pure function of (config, seed).
// Appends are serialized; at most the training worker and one evaluation
// worker write concurrently.
class MetricsSink {
 public:
  explicit MetricsSink(const std::string& path);

  void append_evaluation(long step, double mean_return, double std_return,
                         int episodes);
  void append_diagnostics(long step, double critic_loss,
                          double policy_objective, double td_error_mean,
                          const WeightReport* weights);
  void append_weight_analysis(long rows, double spearman);
  void append_contraction(double worst_ratio, long negative_cells,
                          long violations, double xi_max);

  const std::string& path() const { return path_; }

 private:
  void write_line(const std::string& line);

  std::string path_;
  std::ofstream out_;
  std::mutex mutex_;
};

// Schema check for one metrics line; returns the violation or nullopt.
std::optional<std::string> validate_metrics_line(const std::string& line);

}  // namespace offpoc
