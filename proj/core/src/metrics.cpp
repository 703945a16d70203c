#include "offpoc/metrics.hpp"

#include <stdexcept>

#include <json.hpp>

#include "offpoc/correction.hpp"

namespace offpoc {

using nlohmann::json;

MetricsSink::MetricsSink(const std::string& path) : path_(path), out_(path) {
  if (!out_) {
    throw std::runtime_error("metrics: cannot open " + path);
  }
}

void MetricsSink::write_line(const std::string& line) {
  std::lock_guard<std::mutex> lock(mutex_);
  out_ << line << '\n';
  out_.flush();
}

void MetricsSink::append_evaluation(long step, double mean_return,
                                    double std_return, int episodes) {
  json record{{"v", 1},
              {"kind", "evaluation"},
              {"step", step},
              {"mean_return", mean_return},
              {"std_return", std_return},
              {"episodes", episodes}};
  write_line(record.dump());
}

void MetricsSink::append_diagnostics(long step, double critic_loss,
                                     double policy_objective,
                                     double td_error_mean,
                                     const WeightReport* weights) {
  json record{{"v", 1},
              {"kind", "diagnostics"},
              {"step", step},
              {"critic_loss", critic_loss},
              {"policy_objective", policy_objective},
              {"td_error_mean", td_error_mean}};
  if (weights) {
    record["lambda_mean"] = weights->mean_lambda();
    record["lambda_min"] = weights->min_lambda();
    record["lambda_max"] = weights->max_lambda();
  }
  write_line(record.dump());
}

void MetricsSink::append_weight_analysis(long rows, double spearman) {
  json record{{"v", 1},
              {"kind", "weight-analysis"},
              {"step", 0},
              {"rows", rows},
              {"spearman", spearman}};
  write_line(record.dump());
}

void MetricsSink::append_contraction(double worst_ratio, long negative_cells,
                                     long violations, double xi_max) {
  json record{{"v", 1},
              {"kind", "contraction"},
              {"step", 0},
              {"worst_ratio", worst_ratio},
              {"negative_w_cells", negative_cells},
              {"violations", violations},
              {"xi_max", xi_max}};
  write_line(record.dump());
}

std::optional<std::string> validate_metrics_line(const std::string& line) {
  json record = json::parse(line, nullptr, false);
  if (record.is_discarded()) return "not valid json";
  if (!record.is_object()) return "not an object";
  if (record.value("v", 0) != 1) return "missing schema version";
  if (!record.contains("kind") || !record["kind"].is_string()) {
    return "missing kind";
  }
  const std::string kind = record["kind"];
  if (!record.contains("step") || !record["step"].is_number()) {
    return "missing step";
  }
  auto needs = [&](std::initializer_list<const char*> keys)
      -> std::optional<std::string> {
    for (const char* key : keys) {
      if (!record.contains(key)) return std::string("missing ") + key;
    }
    return std::nullopt;
  };
  if (kind == "evaluation") {
    return needs({"mean_return", "std_return", "episodes"});
  }
  if (kind == "diagnostics") {
    return needs({"critic_loss", "policy_objective", "td_error_mean"});
  }
  if (kind == "weight-analysis") {
    return needs({"rows", "spearman"});
  }
  if (kind == "contraction") {
    return needs({"worst_ratio", "negative_w_cells", "violations"});
  }
  return "unknown kind " + kind;
}

}  // namespace offpoc
