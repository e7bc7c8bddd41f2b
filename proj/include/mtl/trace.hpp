#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mtl {

struct TraceRecord {
  std::int64_t iteration = 0;
  std::size_t task = 0;  // index into TaskTrace::tasks
  double loss = 0.0;
  std::optional<double> grad_norm;
};

// Parsed experiment log: per-iteration, per-task losses and optional shared
// layer gradient magnitudes. Tasks keep first-appearance order.
struct TaskTrace {
  std::vector<std::string> tasks;
  std::vector<TraceRecord> records;

  std::vector<std::int64_t> iterations() const;  // distinct, ascending
  std::optional<double> loss_at(std::int64_t iteration, std::size_t task) const;
  std::optional<double> grad_norm_at(std::int64_t iteration, std::size_t task) const;
};

// CSV with header exactly `iter,task,loss,grad_norm`; the grad_norm field may
// be empty. Lines starting with '#' are skipped (metadata comments). Rejected
// with the offending line number: unparsable rows, negative losses, duplicate
// (iter, task) pairs, decreasing iterations.
TaskTrace read_trace(std::istream& source);
TaskTrace read_trace_file(const std::string& path);

}  // namespace mtl
