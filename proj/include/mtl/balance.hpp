#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mtl/tensor.hpp"
#include "mtl/trace.hpp"

namespace mtl::balance {

struct WeightVector {
  std::vector<double> weights;  // finite, >= 0
  std::string strategy;
  std::int64_t iteration = -1;  // -1 when not tied to a trace position
};

// Per-task gradients of the shared parameters: full vectors, magnitudes, or
// both. Magnitudes are derived from the vectors when absent.
struct GradSnapshot {
  std::vector<Tensor> vectors;
  std::vector<double> magnitudes;

  std::size_t task_count() const;
  std::vector<double> resolved_magnitudes() const;
  void validate() const;  // identical shapes, finite values, magnitudes >= 0
};

// Per-task evaluation metrics with their improvement directions.
struct MetricReport {
  std::vector<std::string> tasks;
  std::vector<double> values;
  std::vector<bool> lower_is_better;
};

// CSV with header exactly `task,metric,lower_is_better`; '#' comments skipped.
MetricReport read_metric_report(std::istream& source);
MetricReport read_metric_report_file(const std::string& path);

// Sum of w_i * L_i.
double weighted_mtl_loss(std::span<const double> weights, std::span<const double> losses);

struct UncertaintyResult {
  double value = 0.0;                     // sum L_i/(2 sigma_i^2) + sum log sigma_i
  std::vector<double> grad_sigma;         // -L_i/sigma_i^3 + 1/sigma_i
  std::vector<double> effective_weights;  // 1/(2 sigma_i^2)
};
UncertaintyResult uncertainty_objective(std::span<const double> losses,
                                        std::span<const double> sigmas);

struct GradnormResult {
  std::vector<double> objective;       // |G_i - mean(G) * r_i|
  std::vector<double> inverse_rates;   // L_i(t) / L_i(0)
  std::vector<double> relative_rates;  // inverse rate / mean inverse rate
  WeightVector renormalized_weights;   // current weights scaled so the sum is N
};
// Uses iteration 0 and the last iteration of the trace. current_weights
// defaults to all-ones when empty.
GradnormResult gradnorm_step(const TaskTrace& trace, const GradSnapshot& grads,
                             std::span<const double> current_weights = {});

// Loss ratios L(t-1)/L(t-2) from the last two iterations of the trace.
std::vector<double> dwa_rates(const TaskTrace& trace);
// w_i = N * softmax(r/T)_i, softmax with max-subtraction (uniform rates give
// exactly 1).
WeightVector dwa_weights_from_rates(std::span<const double> rates, double temperature,
                                    std::int64_t iteration = -1);
WeightVector dwa_weights(const TaskTrace& trace, double temperature);

// w_i = -(1 - kpi_i)^focusing_i * log(kpi_i), kpi in (0,1), focusing >= 0.
WeightVector dtp_weights(std::span<const double> kpis, std::span<const double> focusing);

// w_i = max_j(avg_j) / avg_i: the largest-loss task gets weight 1 and every
// weighted contribution is equal.
WeightVector magnitude_heuristic_weights(std::span<const double> avg_losses);

// Average signed relative per-task change versus the baseline, in percent;
// lower-is-better metrics count an increase as a regression.
double delta_mtl(const MetricReport& model, const MetricReport& baseline);

}  // namespace mtl::balance
