#include "mtl/balance.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include "mtl/error.hpp"

namespace mtl::balance {

namespace {

[[noreturn]] void fail_line(std::size_t line, const std::string& what) {
  throw FormatError("line " + std::to_string(line) + ": " + what);
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

std::size_t GradSnapshot::task_count() const {
  return vectors.empty() ? magnitudes.size() : vectors.size();
}

std::vector<double> GradSnapshot::resolved_magnitudes() const {
  if (!magnitudes.empty()) return magnitudes;
  std::vector<double> out;
  out.reserve(vectors.size());
  for (const Tensor& g : vectors) {
    double s = 0.0;
    for (double v : g.data) s += v * v;
    out.push_back(std::sqrt(s));
  }
  return out;
}

void GradSnapshot::validate() const {
  if (vectors.empty() && magnitudes.empty()) {
    throw DimensionError("gradient snapshot is empty");
  }
  for (std::size_t i = 1; i < vectors.size(); ++i) {
    if (!same_shape(vectors[0], vectors[i])) {
      throw DimensionError("gradient shapes differ across tasks");
    }
  }
  for (const Tensor& g : vectors) {
    if (!g.all_finite()) throw DomainError("non-finite gradient");
  }
  for (double m : magnitudes) {
    if (!(m >= 0) || !std::isfinite(m)) throw DomainError("gradient magnitudes must be >= 0");
  }
  if (!vectors.empty() && !magnitudes.empty() && vectors.size() != magnitudes.size()) {
    throw DimensionError("gradient vector and magnitude counts differ");
  }
}

MetricReport read_metric_report(std::istream& source) {
  MetricReport report;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      if (line != "task,metric,lower_is_better") {
        fail_line(line_no, "expected header task,metric,lower_is_better");
      }
      have_header = true;
      continue;
    }
    std::string task, metric, flag;
    std::stringstream ss(line);
    if (!std::getline(ss, task, ',') || !std::getline(ss, metric, ',') ||
        !std::getline(ss, flag)) {
      fail_line(line_no, "unparsable row (expected 3 fields)");
    }
    double value;
    if (!parse_double(metric, value) || !std::isfinite(value)) {
      fail_line(line_no, "unparsable metric '" + metric + "'");
    }
    if (flag != "0" && flag != "1") {
      fail_line(line_no, "lower_is_better must be 0 or 1");
    }
    report.tasks.push_back(task);
    report.values.push_back(value);
    report.lower_is_better.push_back(flag == "1");
  }
  if (!have_header) throw FormatError("empty metric report: missing header");
  return report;
}

MetricReport read_metric_report_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  return read_metric_report(in);
}

double weighted_mtl_loss(std::span<const double> weights, std::span<const double> losses) {
  if (weights.size() != losses.size()) {
    throw DimensionError("weight and loss counts differ");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += weights[i] * losses[i];
  return total;
}

UncertaintyResult uncertainty_objective(std::span<const double> losses,
                                        std::span<const double> sigmas) {
  if (losses.size() != sigmas.size()) {
    throw DimensionError("loss and sigma counts differ");
  }
  UncertaintyResult r;
  r.grad_sigma.reserve(sigmas.size());
  r.effective_weights.reserve(sigmas.size());
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    double s = sigmas[i];
    if (!(s > 0)) throw DomainError("sigma must be positive");
    double L = losses[i];
    r.value += L / (2.0 * s * s) + std::log(s);
    r.grad_sigma.push_back(-L / (s * s * s) + 1.0 / s);
    r.effective_weights.push_back(1.0 / (2.0 * s * s));
  }
  return r;
}

GradnormResult gradnorm_step(const TaskTrace& trace, const GradSnapshot& grads,
                             std::span<const double> current_weights) {
  grads.validate();
  std::size_t n = trace.tasks.size();
  if (n == 0) throw DimensionError("trace has no tasks");
  std::vector<double> gmag = grads.resolved_magnitudes();
  if (gmag.size() != n) {
    throw DimensionError("gradient count does not match trace task count");
  }
  std::vector<double> weights(current_weights.begin(), current_weights.end());
  if (weights.empty()) weights.assign(n, 1.0);
  if (weights.size() != n) {
    throw DimensionError("current weight count does not match task count");
  }

  std::vector<std::int64_t> its = trace.iterations();
  std::int64_t t = its.back();

  GradnormResult r;
  r.inverse_rates.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<double> l0 = trace.loss_at(0, i);
    if (!l0) throw DomainError("trace is missing iteration 0 for task " + trace.tasks[i]);
    if (*l0 == 0.0) throw DomainError("iteration-0 loss is zero for task " + trace.tasks[i]);
    std::optional<double> lt = trace.loss_at(t, i);
    if (!lt) throw DomainError("trace is missing iteration " + std::to_string(t) +
                               " for task " + trace.tasks[i]);
    r.inverse_rates.push_back(*lt / *l0);
  }
  double mean_rate = 0.0;
  for (double v : r.inverse_rates) mean_rate += v;
  mean_rate /= static_cast<double>(n);
  double mean_grad = 0.0;
  for (double g : gmag) mean_grad += g;
  mean_grad /= static_cast<double>(n);

  r.relative_rates.reserve(n);
  r.objective.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double rel = r.inverse_rates[i] / mean_rate;
    r.relative_rates.push_back(rel);
    r.objective.push_back(std::abs(gmag[i] - mean_grad * rel));
  }

  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (!(wsum > 0)) throw DomainError("current weights sum to zero");
  double scale = static_cast<double>(n) / wsum;
  for (double& w : weights) w *= scale;
  r.renormalized_weights = WeightVector{std::move(weights), "gradnorm", t};
  return r;
}

std::vector<double> dwa_rates(const TaskTrace& trace) {
  std::vector<std::int64_t> its = trace.iterations();
  if (its.size() < 2) {
    throw DomainError(
        "trace needs two completed iterations before loss ratios exist; use fixed "
        "weights for the first two iterations");
  }
  std::int64_t prev = its[its.size() - 1];
  std::int64_t prev2 = its[its.size() - 2];
  std::vector<double> rates;
  rates.reserve(trace.tasks.size());
  for (std::size_t i = 0; i < trace.tasks.size(); ++i) {
    std::optional<double> l1 = trace.loss_at(prev, i);
    std::optional<double> l2 = trace.loss_at(prev2, i);
    if (!l1 || !l2) {
      throw DomainError("trace is missing task " + trace.tasks[i] +
                        " in one of the last two iterations");
    }
    if (!(*l2 > 0)) throw DomainError("loss at the older iteration must be positive");
    rates.push_back(*l1 / *l2);
  }
  return rates;
}

WeightVector dwa_weights_from_rates(std::span<const double> rates, double temperature,
                                    std::int64_t iteration) {
  if (!(temperature > 0)) throw DomainError("temperature must be positive");
  if (rates.empty()) throw DimensionError("no rates");
  double n = static_cast<double>(rates.size());
  // Max-subtraction keeps exp in range and makes the uniform case exact.
  double top = rates[0];
  for (double r : rates) top = std::max(top, r);
  std::vector<double> e(rates.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    e[i] = std::exp((rates[i] - top) / temperature);
    denom += e[i];
  }
  WeightVector w;
  w.strategy = "dwa";
  w.iteration = iteration;
  w.weights.resize(rates.size());
  for (std::size_t i = 0; i < rates.size(); ++i) {
    w.weights[i] = n * e[i] / denom;
  }
  return w;
}

WeightVector dwa_weights(const TaskTrace& trace, double temperature) {
  std::vector<double> rates = dwa_rates(trace);
  return dwa_weights_from_rates(rates, temperature, trace.iterations().back());
}

WeightVector dtp_weights(std::span<const double> kpis, std::span<const double> focusing) {
  if (kpis.size() != focusing.size()) {
    throw DimensionError("kpi and focusing counts differ");
  }
  WeightVector w;
  w.strategy = "dtp";
  w.weights.reserve(kpis.size());
  for (std::size_t i = 0; i < kpis.size(); ++i) {
    double k = kpis[i];
    double g = focusing[i];
    if (!(k > 0.0) || !(k < 1.0)) throw DomainError("kpi must lie in (0, 1)");
    if (!(g >= 0.0)) throw DomainError("focusing parameter must be >= 0");
    w.weights.push_back(-std::pow(1.0 - k, g) * std::log(k));
  }
  return w;
}

WeightVector magnitude_heuristic_weights(std::span<const double> avg_losses) {
  if (avg_losses.empty()) throw DimensionError("no losses");
  double top = avg_losses[0];
  for (double v : avg_losses) {
    if (!(v > 0)) throw DomainError("average losses must be positive");
    top = std::max(top, v);
  }
  WeightVector w;
  w.strategy = "magnitude";
  w.weights.reserve(avg_losses.size());
  for (double v : avg_losses) w.weights.push_back(top / v);
  return w;
}

double delta_mtl(const MetricReport& model, const MetricReport& baseline) {
  std::size_t n = model.values.size();
  if (n == 0 || n != baseline.values.size()) {
    throw DimensionError("metric reports must cover the same non-empty task set");
  }
  if (model.lower_is_better != baseline.lower_is_better) {
    throw DomainError("lower_is_better flags differ between reports");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (baseline.values[i] == 0.0) {
      throw DomainError("baseline metric is zero for task index " + std::to_string(i));
    }
    double rel = (model.values[i] - baseline.values[i]) / baseline.values[i];
    total += baseline.lower_is_better[i] ? -rel : rel;
  }
  return 100.0 * total / static_cast<double>(n);
}

}  // namespace mtl::balance
