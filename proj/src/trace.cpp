#include "mtl/trace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <utility>

#include "mtl/error.hpp"

namespace mtl {

namespace {

[[noreturn]] void fail(std::size_t line, const std::string& what) {
  throw FormatError("line " + std::to_string(line) + ": " + what);
}

bool parse_double(const std::string& s, double& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_i64(const std::string& s, std::int64_t& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

std::vector<std::int64_t> TaskTrace::iterations() const {
  std::vector<std::int64_t> its;
  for (const TraceRecord& r : records) its.push_back(r.iteration);
  std::sort(its.begin(), its.end());
  its.erase(std::unique(its.begin(), its.end()), its.end());
  return its;
}

std::optional<double> TaskTrace::loss_at(std::int64_t iteration, std::size_t task) const {
  for (const TraceRecord& r : records) {
    if (r.iteration == iteration && r.task == task) return r.loss;
  }
  return std::nullopt;
}

std::optional<double> TaskTrace::grad_norm_at(std::int64_t iteration, std::size_t task) const {
  for (const TraceRecord& r : records) {
    if (r.iteration == iteration && r.task == task) return r.grad_norm;
  }
  return std::nullopt;
}

TaskTrace read_trace(std::istream& source) {
  TaskTrace trace;
  std::map<std::string, std::size_t> task_index;
  std::set<std::pair<std::int64_t, std::size_t>> seen;
  std::int64_t last_iteration = -1;

  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!have_header) {
      if (line != "iter,task,loss,grad_norm") {
        fail(line_no, "expected header iter,task,loss,grad_norm");
      }
      have_header = true;
      continue;
    }
    std::vector<std::string> f = split_csv(line);
    if (f.size() != 4) fail(line_no, "unparsable row (expected 4 fields)");

    TraceRecord rec;
    if (!parse_i64(f[0], rec.iteration) || rec.iteration < 0) {
      fail(line_no, "unparsable iteration '" + f[0] + "'");
    }
    if (f[1].empty()) fail(line_no, "empty task name");
    if (!parse_double(f[2], rec.loss) || !std::isfinite(rec.loss)) {
      fail(line_no, "unparsable loss '" + f[2] + "'");
    }
    if (rec.loss < 0) fail(line_no, "negative loss");
    if (!f[3].empty()) {
      double g;
      if (!parse_double(f[3], g) || !std::isfinite(g)) {
        fail(line_no, "unparsable grad_norm '" + f[3] + "'");
      }
      if (g < 0) fail(line_no, "negative grad_norm");
      rec.grad_norm = g;
    }

    auto [it, inserted] = task_index.try_emplace(f[1], trace.tasks.size());
    if (inserted) trace.tasks.push_back(f[1]);
    rec.task = it->second;

    if (rec.iteration < last_iteration) fail(line_no, "iteration decreases");
    last_iteration = rec.iteration;
    if (!seen.insert({rec.iteration, rec.task}).second) {
      fail(line_no, "duplicate (iter, task) pair");
    }
    trace.records.push_back(std::move(rec));
  }
  if (!have_header) throw FormatError("empty trace: missing header");
  return trace;
}

TaskTrace read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  return read_trace(in);
}

}  // namespace mtl
