// mtl-lab: every toolkit module behind one subcommand-style binary.
//
// All subcommands are deterministic: the same config, inputs and seed give
// byte-identical output files, so reruns can be diffed directly. Every text
// output starts with a metadata comment header (tool version, seed, config
// digest) and every binary tensor gets a .meta.json sidecar with the same
// fields.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtl/balance.hpp"
#include "mtl/branch.hpp"
#include "mtl/contrastive.hpp"
#include "mtl/crops.hpp"
#include "mtl/distill.hpp"
#include "mtl/error.hpp"
#include "mtl/label_map.hpp"
#include "mtl/mgda.hpp"
#include "mtl/pixel_affinity.hpp"
#include "mtl/rng.hpp"
#include "mtl/rsa.hpp"
#include "mtl/tensor.hpp"
#include "mtl/tensor_io.hpp"
#include "mtl/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

// Config mistakes (unknown keys, wrong types, bad combinations) exit with
// status 2; data errors from the toolkit exit with status 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest decimal form that round-trips; the same value always prints the
// same bytes.
std::string fmt(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, end);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[16];
  for (int i = 15; i >= 0; --i) {
    buf[i] = "0123456789abcdef"[v & 0xf];
    v >>= 4;
  }
  return std::string(buf, 16);
}

struct RunContext {
  std::uint64_t seed = 0;
  int threads = 1;
  fs::path out_dir;
  fs::path config_dir;
  std::string digest;
};

// The digest covers the subcommand plus the effective config (defaults
// filled in), so metadata identifies the run even when the config file
// omitted keys. Threads stay out: results never depend on them.
void seal(RunContext& ctx, const std::string& sub, const json& effective) {
  ctx.digest = hex64(fnv1a64(sub + "\n" + effective.dump()));
}

fs::path resolve_input(const RunContext& ctx, const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return p;
  return ctx.config_dir / p;
}

fs::path out_path(const RunContext& ctx, const std::string& name) {
  fs::create_directories(ctx.out_dir);
  return ctx.out_dir / name;
}

std::ofstream open_text(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw mtl::IoError("cannot open for writing: " + path.string());
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw mtl::IoError("write failed: " + path.string());
  std::cout << "wrote " << path.string() << "\n";
}

void write_header(std::ostream& out, const RunContext& ctx) {
  out << "# mtl-lab " << kVersion << "\n";
  out << "# seed: " << ctx.seed << "\n";
  out << "# config: " << ctx.digest << "\n";
}

void write_tensor_artifact(const mtl::Tensor& t, const RunContext& ctx, const std::string& name) {
  fs::path path = out_path(ctx, name);
  mtl::write_tensor_file(t, path.string());
  json meta;
  meta["config"] = ctx.digest;
  meta["seed"] = ctx.seed;
  meta["tool"] = std::string("mtl-lab ") + kVersion;
  fs::path side = path;
  side += ".meta.json";
  std::ofstream out = open_text(side);
  out << meta.dump(2) << "\n";
  finish(out, side);
  std::cout << "wrote " << path.string() << "\n";
}

// ---------------------------------------------------------------------------
// config schema

enum class Kind { boolean, integer, number, string, array, object, any };

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::boolean: return "a boolean";
    case Kind::integer: return "an integer";
    case Kind::number: return "a number";
    case Kind::string: return "a string";
    case Kind::array: return "an array";
    case Kind::object: return "an object";
    case Kind::any: return "present";
  }
  return "?";
}

bool kind_matches(const json& v, Kind k) {
  switch (k) {
    case Kind::boolean: return v.is_boolean();
    case Kind::integer: return v.is_number_integer();
    case Kind::number: return v.is_number();
    case Kind::string: return v.is_string();
    case Kind::array: return v.is_array();
    case Kind::object: return v.is_object();
    case Kind::any: return true;
  }
  return false;
}

struct KeySpec {
  const char* name;
  Kind kind;
  bool required = false;
};

// Strict schema: unknown keys, missing required keys and wrong types are all
// usage errors naming the key.
void check_keys(const json& cfg, const std::string& where, std::span<const KeySpec> specs) {
  if (!cfg.is_object()) throw UsageError(where + " must be a JSON object");
  for (auto it = cfg.begin(); it != cfg.end(); ++it) {
    bool known = false;
    for (const KeySpec& s : specs) known = known || it.key() == s.name;
    if (!known) throw UsageError("unknown config key \"" + it.key() + "\" in " + where);
  }
  for (const KeySpec& s : specs) {
    auto it = cfg.find(s.name);
    if (it == cfg.end()) {
      if (s.required) throw UsageError("missing config key \"" + std::string(s.name) + "\" in " + where);
      continue;
    }
    if (!kind_matches(*it, s.kind)) {
      throw UsageError("config key \"" + std::string(s.name) + "\" must be " + kind_name(s.kind));
    }
  }
}

std::vector<std::string> string_array(const json& a, const std::string& key) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_string()) {
      throw UsageError("config key \"" + key + "[" + std::to_string(i) + "]\" must be a string");
    }
    out.push_back(a[i].get<std::string>());
  }
  return out;
}

std::vector<double> number_array(const json& a, const std::string& key) {
  std::vector<double> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) {
      throw UsageError("config key \"" + key + "[" + std::to_string(i) + "]\" must be a number");
    }
    out.push_back(a[i].get<double>());
  }
  return out;
}

std::int64_t positive_int(const json& cfg, const char* key, std::int64_t fallback) {
  if (!cfg.contains(key)) return fallback;
  std::int64_t v = cfg[key].get<std::int64_t>();
  if (v < 1) throw UsageError("config key \"" + std::string(key) + "\" must be a positive integer");
  return v;
}

double positive_number(const json& cfg, const char* key, double fallback) {
  if (!cfg.contains(key)) return fallback;
  double v = cfg[key].get<double>();
  if (!(v > 0.0)) throw UsageError("config key \"" + std::string(key) + "\" must be positive");
  return v;
}

std::string require_path(const json& cfg, const char* key) { return cfg[key].get<std::string>(); }

// ---------------------------------------------------------------------------
// affinity

constexpr const char* kAffinityHelp = R"(Task-affinity tensor from per-task feature dumps.

Builds the per-location response-dissimilarity matrices over the probe rows
of every task's feature dump and rank-correlates them per task pair.

config keys:
  tasks      array of strings, required: task names, output order
  locations  array of strings, required: network location labels
  features   object, required: features.<task>.<location> = tensor path;
             each tensor holds one probe image per leading-axis row
  probes     integer, default 500: probe rows used from every dump; a dump
             with fewer rows is an error

writes affinity.mtkt (a [locations, tasks, tasks] tensor plus .meta.json
sidecar) and affinity.txt (one table per location).)";

mtl::Tensor take_probes(const mtl::Tensor& t, std::int64_t probes, const std::string& task,
                        const std::string& location) {
  std::uint64_t want = static_cast<std::uint64_t>(probes);
  if (t.shape.empty() || t.shape[0] < want) {
    throw mtl::DimensionError("feature dump for task " + task + " at " + location + " has " +
                              std::to_string(t.shape.empty() ? 0 : t.shape[0]) +
                              " probe rows, need " + std::to_string(probes));
  }
  if (t.shape[0] == want) return t;
  mtl::Tensor cut = t;
  cut.shape[0] = want;
  std::size_t stride = static_cast<std::size_t>(t.numel() / t.shape[0]);
  cut.data.assign(t.data.begin(), t.data.begin() + static_cast<std::ptrdiff_t>(want * stride));
  return cut;
}

int run_affinity(const json& cfg, RunContext& ctx) {
  static const KeySpec spec[] = {
      {"tasks", Kind::array, true},
      {"locations", Kind::array, true},
      {"features", Kind::object, true},
      {"probes", Kind::integer, false},
  };
  check_keys(cfg, "the affinity config", spec);
  std::vector<std::string> tasks = string_array(cfg["tasks"], "tasks");
  std::vector<std::string> locations = string_array(cfg["locations"], "locations");
  if (tasks.empty()) throw UsageError("config key \"tasks\" must not be empty");
  if (locations.empty()) throw UsageError("config key \"locations\" must not be empty");
  std::int64_t probes = positive_int(cfg, "probes", 500);

  json effective = cfg;
  effective["probes"] = probes;
  seal(ctx, "affinity", effective);

  const json& features = cfg["features"];
  for (auto it = features.begin(); it != features.end(); ++it) {
    if (std::find(tasks.begin(), tasks.end(), it.key()) == tasks.end()) {
      throw UsageError("config key \"features." + it.key() + "\" does not name a task");
    }
  }
  std::vector<std::vector<mtl::Tensor>> dumps(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto task_it = features.find(tasks[i]);
    if (task_it == features.end()) {
      throw UsageError("missing config key \"features." + tasks[i] + "\"");
    }
    if (!task_it->is_object()) {
      throw UsageError("config key \"features." + tasks[i] + "\" must be an object");
    }
    for (auto it = task_it->begin(); it != task_it->end(); ++it) {
      if (std::find(locations.begin(), locations.end(), it.key()) == locations.end()) {
        throw UsageError("config key \"features." + tasks[i] + "." + it.key() +
                         "\" does not name a location");
      }
    }
    for (const std::string& loc : locations) {
      auto it = task_it->find(loc);
      if (it == task_it->end()) {
        throw UsageError("missing config key \"features." + tasks[i] + "." + loc + "\"");
      }
      if (!it->is_string()) {
        throw UsageError("config key \"features." + tasks[i] + "." + loc + "\" must be a string");
      }
      mtl::Tensor t = mtl::read_tensor_file(resolve_input(ctx, it->get<std::string>()).string());
      dumps[i].push_back(take_probes(t, probes, tasks[i], loc));
    }
  }

  mtl::rsa::AffinityTensor at = mtl::rsa::task_affinity(dumps, tasks, locations, ctx.threads);
  write_tensor_artifact(at.to_tensor(), ctx, "affinity.mtkt");

  fs::path table_path = out_path(ctx, "affinity.txt");
  std::ofstream out = open_text(table_path);
  write_header(out, ctx);
  for (std::size_t d = 0; d < at.D; ++d) {
    out << "location " << at.locations[d] << "\n";
    out << "task";
    for (const std::string& t : at.tasks) out << "\t" << t;
    out << "\n";
    for (std::size_t i = 0; i < at.N; ++i) {
      out << at.tasks[i];
      for (std::size_t j = 0; j < at.N; ++j) out << "\t" << fmt(at.at(d, i, j));
      out << "\n";
    }
  }
  finish(out, table_path);
  return 0;
}

// ---------------------------------------------------------------------------
// branch-search

constexpr const char* kBranchHelp = R"(Exhaustive branched-tree search under a resource budget.

config keys:
  affinity       string, required: path to a [D, N, N] affinity tensor
  tasks          array of strings, optional: task names for display
  locations      array of strings, optional: location labels for display
  shared_costs   array of numbers, required: one branch cost per location
  decoder_costs  array of numbers, required: one decoder cost per task
  budget         number, required: resource ceiling

writes tree.txt (the winning tree) and feasible.csv (tree,cost,resource for
every tree within budget, best first; trees are growth strings per depth).
Exits nonzero when no tree fits the budget.)";

std::string encode_tree(const mtl::branch::BranchTree& tree) {
  std::string s;
  for (std::size_t l = 0; l < tree.layers.size(); ++l) {
    if (l) s += '/';
    std::vector<int> g = tree.layers[l].growth_string();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (i) s += '.';
      s += std::to_string(g[i]);
    }
  }
  return s;
}

int run_branch_search(const json& cfg, RunContext& ctx) {
  static const KeySpec spec[] = {
      {"affinity", Kind::string, true},       {"tasks", Kind::array, false},
      {"locations", Kind::array, false},      {"shared_costs", Kind::array, true},
      {"decoder_costs", Kind::array, true},   {"budget", Kind::number, true},
  };
  check_keys(cfg, "the branch-search config", spec);
  std::vector<std::string> tasks =
      cfg.contains("tasks") ? string_array(cfg["tasks"], "tasks") : std::vector<std::string>{};
  std::vector<std::string> locations = cfg.contains("locations")
                                           ? string_array(cfg["locations"], "locations")
                                           : std::vector<std::string>{};
  mtl::branch::BudgetModel model;
  model.shared_costs = number_array(cfg["shared_costs"], "shared_costs");
  model.decoder_costs = number_array(cfg["decoder_costs"], "decoder_costs");
  model.budget = cfg["budget"].get<double>();

  seal(ctx, "branch-search", cfg);

  mtl::Tensor raw = mtl::read_tensor_file(resolve_input(ctx, require_path(cfg, "affinity")).string());
  mtl::rsa::AffinityTensor affinity = mtl::rsa::AffinityTensor::from_tensor(raw, tasks, locations);
  if (model.shared_costs.size() != affinity.D) {
    throw mtl::DimensionError("shared_costs has " + std::to_string(model.shared_costs.size()) +
                              " entries for " + std::to_string(affinity.D) + " locations");
  }
  if (model.decoder_costs.size() != affinity.N) {
    throw mtl::DimensionError("decoder_costs has " + std::to_string(model.decoder_costs.size()) +
                              " entries for " + std::to_string(affinity.N) + " tasks");
  }

  mtl::branch::SearchResult result = mtl::branch::search_optimal_tree(affinity, model, true);

  fs::path tree_path = out_path(ctx, "tree.txt");
  std::ofstream out = open_text(tree_path);
  write_header(out, ctx);
  out << "cost " << fmt(result.best.cost) << "\n";
  out << "resource " << fmt(result.best.resource) << "\n";
  out << "enumerated " << result.enumerated << "\n";
  out << "feasible " << result.feasible << "\n";
  for (std::size_t l = 0; l < result.best.layers.size(); ++l) {
    out << "depth " << l << ": " << mtl::branch::format_partition(result.best.layers[l], affinity.tasks)
        << "\n";
  }
  finish(out, tree_path);

  fs::path csv_path = out_path(ctx, "feasible.csv");
  std::ofstream csv = open_text(csv_path);
  write_header(csv, ctx);
  csv << "tree,cost,resource\n";
  for (const mtl::branch::BranchTree& t : result.ranked) {
    csv << encode_tree(t) << "," << fmt(t.cost) << "," << fmt(t.resource) << "\n";
  }
  finish(csv, csv_path);

  std::cout << "best tree " << encode_tree(result.best) << " cost " << fmt(result.best.cost)
            << " resource " << fmt(result.best.resource) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// balance

constexpr const char* kBalanceHelp = R"(Per-iteration task weights from a training trace.

config keys:
  strategy         string, required: fixed | uncertainty | gradnorm | dwa |
                   dtp | magnitude | mgda
  trace            string: trace CSV path (every strategy except mgda); the
                   trace must cover every task at every iteration it lists
  weights          array of numbers, fixed only: the weights to emit
  sigmas           array of numbers, uncertainty only: per-task sigma > 0
  current_weights  array of numbers, gradnorm only, default all ones
  temperature      number > 0, dwa only, default 2.0
  focusing         number or array of numbers >= 0, dtp only, default 1.0
  kpi_column       string, dtp only: loss | grad_norm, default loss; the
                   trace column read as the per-task KPI in (0, 1)
  gradients        object, mgda only: <task> = gradient tensor path
  tasks            array of strings, mgda only: task order, default sorted

writes weights.csv (iter,task,weight). uncertainty, gradnorm and mgda also
write diagnostics.csv (iter,task,quantity,value; task is "all" for scalar
rows); mgda also writes the min-norm direction to direction.mtkt. dwa emits
weight 1 for the first two iterations, before loss ratios exist.)";

std::vector<double> losses_at(const mtl::TaskTrace& trace, std::int64_t iteration) {
  std::vector<double> out;
  out.reserve(trace.tasks.size());
  for (std::size_t i = 0; i < trace.tasks.size(); ++i) {
    std::optional<double> v = trace.loss_at(iteration, i);
    if (!v) {
      throw mtl::DimensionError("trace has no loss for task " + trace.tasks[i] +
                                " at iteration " + std::to_string(iteration));
    }
    out.push_back(*v);
  }
  return out;
}

std::vector<double> grad_norms_at(const mtl::TaskTrace& trace, std::int64_t iteration) {
  std::vector<double> out;
  out.reserve(trace.tasks.size());
  for (std::size_t i = 0; i < trace.tasks.size(); ++i) {
    std::optional<double> v = trace.grad_norm_at(iteration, i);
    if (!v) {
      throw mtl::DimensionError("trace has no grad_norm for task " + trace.tasks[i] +
                                " at iteration " + std::to_string(iteration));
    }
    out.push_back(*v);
  }
  return out;
}

mtl::TaskTrace truncate_trace(const mtl::TaskTrace& trace, std::int64_t upto) {
  mtl::TaskTrace t;
  t.tasks = trace.tasks;
  for (const mtl::TraceRecord& r : trace.records) {
    if (r.iteration <= upto) t.records.push_back(r);
  }
  return t;
}

struct BalanceOutput {
  std::ofstream weights;
  fs::path weights_path;
  std::ofstream diagnostics;
  fs::path diagnostics_path;
  bool has_diagnostics = false;
};

BalanceOutput open_balance_output(const RunContext& ctx, bool with_diagnostics) {
  BalanceOutput out;
  out.weights_path = out_path(ctx, "weights.csv");
  out.weights = open_text(out.weights_path);
  write_header(out.weights, ctx);
  out.weights << "iter,task,weight\n";
  if (with_diagnostics) {
    out.has_diagnostics = true;
    out.diagnostics_path = out_path(ctx, "diagnostics.csv");
    out.diagnostics = open_text(out.diagnostics_path);
    write_header(out.diagnostics, ctx);
    out.diagnostics << "iter,task,quantity,value\n";
  }
  return out;
}

void close_balance_output(BalanceOutput& out) {
  finish(out.weights, out.weights_path);
  if (out.has_diagnostics) finish(out.diagnostics, out.diagnostics_path);
}

void weight_rows(std::ostream& out, std::int64_t iteration, std::span<const std::string> tasks,
                 std::span<const double> weights) {
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    out << iteration << "," << tasks[i] << "," << fmt(weights[i]) << "\n";
  }
}

int run_balance(const json& cfg, RunContext& ctx) {
  if (!cfg.is_object()) throw UsageError("the balance config must be a JSON object");
  auto strategy_it = cfg.find("strategy");
  if (strategy_it == cfg.end()) {
    throw UsageError("missing config key \"strategy\" in the balance config");
  }
  if (!strategy_it->is_string()) throw UsageError("config key \"strategy\" must be a string");
  std::string strategy = strategy_it->get<std::string>();

  auto load_trace = [&](const json& c) {
    return mtl::read_trace_file(resolve_input(ctx, require_path(c, "trace")).string());
  };

  if (strategy == "fixed") {
    static const KeySpec spec[] = {
        {"strategy", Kind::string, true},
        {"trace", Kind::string, true},
        {"weights", Kind::array, true},
    };
    check_keys(cfg, "the balance config", spec);
    std::vector<double> w = number_array(cfg["weights"], "weights");
    seal(ctx, "balance", cfg);
    mtl::TaskTrace trace = load_trace(cfg);
    if (w.size() != trace.tasks.size()) {
      throw mtl::DimensionError("weights has " + std::to_string(w.size()) + " entries for " +
                                std::to_string(trace.tasks.size()) + " trace tasks");
    }
    BalanceOutput out = open_balance_output(ctx, true);
    for (std::int64_t it : trace.iterations()) {
      weight_rows(out.weights, it, trace.tasks, w);
      double total = mtl::balance::weighted_mtl_loss(w, losses_at(trace, it));
      out.diagnostics << it << ",all,weighted_loss," << fmt(total) << "\n";
    }
    close_balance_output(out);
    return 0;
  }

  if (strategy == "uncertainty") {
    static const KeySpec spec[] = {
        {"strategy", Kind::string, true},
        {"trace", Kind::string, true},
        {"sigmas", Kind::array, true},
    };
    check_keys(cfg, "the balance config", spec);
    std::vector<double> sigmas = number_array(cfg["sigmas"], "sigmas");
    seal(ctx, "balance", cfg);
    mtl::TaskTrace trace = load_trace(cfg);
    if (sigmas.size() != trace.tasks.size()) {
      throw mtl::DimensionError("sigmas has " + std::to_string(sigmas.size()) + " entries for " +
                                std::to_string(trace.tasks.size()) + " trace tasks");
    }
    BalanceOutput out = open_balance_output(ctx, true);
    for (std::int64_t it : trace.iterations()) {
      mtl::balance::UncertaintyResult r =
          mtl::balance::uncertainty_objective(losses_at(trace, it), sigmas);
      weight_rows(out.weights, it, trace.tasks, r.effective_weights);
      out.diagnostics << it << ",all,objective," << fmt(r.value) << "\n";
      for (std::size_t i = 0; i < trace.tasks.size(); ++i) {
        out.diagnostics << it << "," << trace.tasks[i] << ",grad_sigma," << fmt(r.grad_sigma[i])
                        << "\n";
      }
    }
    close_balance_output(out);
    return 0;
  }

  if (strategy == "gradnorm") {
    static const KeySpec spec[] = {
        {"strategy", Kind::string, true},
        {"trace", Kind::string, true},
        {"current_weights", Kind::array, false},
    };
    check_keys(cfg, "the balance config", spec);
    std::vector<double> current = cfg.contains("current_weights")
                                      ? number_array(cfg["current_weights"], "current_weights")
                                      : std::vector<double>{};
    seal(ctx, "balance", cfg);
    mtl::TaskTrace trace = load_trace(cfg);
    BalanceOutput out = open_balance_output(ctx, true);
    for (std::int64_t it : trace.iterations()) {
      mtl::balance::GradSnapshot grads;
      grads.magnitudes = grad_norms_at(trace, it);
      mtl::balance::GradnormResult r =
          mtl::balance::gradnorm_step(truncate_trace(trace, it), grads, current);
      weight_rows(out.weights, it, trace.tasks, r.renormalized_weights.weights);
      for (std::size_t i = 0; i < trace.tasks.size(); ++i) {
        out.diagnostics << it << "," << trace.tasks[i] << ",inverse_rate,"
                        << fmt(r.inverse_rates[i]) << "\n";
        out.diagnostics << it << "," << trace.tasks[i] << ",relative_rate,"
                        << fmt(r.relative_rates[i]) << "\n";
        out.diagnostics << it << "," << trace.tasks[i] << ",objective," << fmt(r.objective[i])
                        << "\n";
      }
    }
    close_balance_output(out);
    return 0;
  }

  if (strategy == "dwa") {
    static const KeySpec spec[] = {
        {"strategy", Kind::string, true},
        {"trace", Kind::string, true},
        {"temperature", Kind::number, false},
    };
    check_keys(cfg, "the balance config", spec);
    double temperature = positive_number(cfg, "temperature", 2.0);
    json effective = cfg;
    effective["temperature"] = temperature;
    seal(ctx, "balance", effective);
    mtl::TaskTrace trace = load_trace(cfg);
    std::vector<std::int64_t> its = trace.iterations();
    std::vector<double> ones(trace.tasks.size(), 1.0);
    BalanceOutput out = open_balance_output(ctx, false);
    for (std::size_t idx = 0; idx < its.size(); ++idx) {
      if (idx < 2) {
        weight_rows(out.weights, its[idx], trace.tasks, ones);
        continue;
      }
      // Weights at iteration t come from the loss ratio of the two
      // iterations before it.
      std::vector<double> rates = mtl::balance::dwa_rates(truncate_trace(trace, its[idx - 1]));
      mtl::balance::WeightVector w =
          mtl::balance::dwa_weights_from_rates(rates, temperature, its[idx]);
      weight_rows(out.weights, its[idx], trace.tasks, w.weights);
    }
    close_balance_output(out);
    return 0;
  }

  if (strategy == "dtp") {
    static const KeySpec spec[] = {
        {"strategy", Kind::string, true},
        {"trace", Kind::string, true},
        {"focusing", Kind::any, false},
        {"kpi_column", Kind::string, false},
    };
    check_keys(cfg, "the balance config", spec);
    std::string column = cfg.contains("kpi_column") ? cfg["kpi_column"].get<std::string>() : "loss";
    if (column != "loss" && column != "grad_norm") {
      throw UsageError("config key \"kpi_column\" must be \"loss\" or \"grad_norm\"");
    }
    std::vector<double> focusing;
    double focusing_scalar = 1.0;
    bool focusing_is_array = false;
    if (cfg.contains("focusing")) {
      if (cfg["focusing"].is_number()) {
        focusing_scalar = cfg["focusing"].get<double>();
      } else if (cfg["focusing"].is_array()) {
        focusing = number_array(cfg["focusing"], "focusing");
        focusing_is_array = true;
      } else {
        throw UsageError("config key \"focusing\" must be a number or an array");
      }
    }
    json effective = cfg;
    effective["kpi_column"] = column;
    if (!cfg.contains("focusing")) effective["focusing"] = focusing_scalar;
    seal(ctx, "balance", effective);
    mtl::TaskTrace trace = load_trace(cfg);
    if (!focusing_is_array) focusing.assign(trace.tasks.size(), focusing_scalar);
    BalanceOutput out = open_balance_output(ctx, false);
    for (std::int64_t it : trace.iterations()) {
      std::vector<double> kpis =
          column == "loss" ? losses_at(trace, it) : grad_norms_at(trace, it);
      mtl::balance::WeightVector w = mtl::balance::dtp_weights(kpis, focusing);
      weight_rows(out.weights, it, trace.tasks, w.weights);
    }
    close_balance_output(out);
    return 0;
  }

  if (strategy == "magnitude") {
    static const KeySpec spec[] = {
        {"strategy", Kind::string, true},
        {"trace", Kind::string, true},
    };
    check_keys(cfg, "the balance config", spec);
    seal(ctx, "balance", cfg);
    mtl::TaskTrace trace = load_trace(cfg);
    std::vector<std::int64_t> its = trace.iterations();
    std::vector<double> avg(trace.tasks.size(), 0.0);
    for (std::int64_t it : its) {
      std::vector<double> l = losses_at(trace, it);
      for (std::size_t i = 0; i < l.size(); ++i) avg[i] += l[i];
    }
    for (double& v : avg) v /= static_cast<double>(its.size());
    mtl::balance::WeightVector w = mtl::balance::magnitude_heuristic_weights(avg);
    BalanceOutput out = open_balance_output(ctx, false);
    for (std::int64_t it : its) weight_rows(out.weights, it, trace.tasks, w.weights);
    close_balance_output(out);
    return 0;
  }

  if (strategy == "mgda") {
    static const KeySpec spec[] = {
        {"strategy", Kind::string, true},
        {"gradients", Kind::object, true},
        {"tasks", Kind::array, false},
    };
    check_keys(cfg, "the balance config", spec);
    const json& gradients = cfg["gradients"];
    std::vector<std::string> tasks;
    if (cfg.contains("tasks")) {
      tasks = string_array(cfg["tasks"], "tasks");
      for (const std::string& t : tasks) {
        if (!gradients.contains(t)) throw UsageError("missing config key \"gradients." + t + "\"");
      }
      for (auto it = gradients.begin(); it != gradients.end(); ++it) {
        if (std::find(tasks.begin(), tasks.end(), it.key()) == tasks.end()) {
          throw UsageError("config key \"gradients." + it.key() + "\" does not name a task");
        }
      }
    } else {
      for (auto it = gradients.begin(); it != gradients.end(); ++it) tasks.push_back(it.key());
    }
    if (tasks.empty()) throw UsageError("config key \"gradients\" must not be empty");
    json effective = cfg;
    effective["tasks"] = tasks;
    seal(ctx, "balance", effective);

    mtl::balance::GradSnapshot snap;
    for (const std::string& t : tasks) {
      if (!gradients[t].is_string()) {
        throw UsageError("config key \"gradients." + t + "\" must be a string");
      }
      snap.vectors.push_back(
          mtl::read_tensor_file(resolve_input(ctx, gradients[t].get<std::string>()).string()));
    }
    mtl::balance::MgdaResult r = mtl::balance::mgda_min_norm(snap);

    BalanceOutput out = open_balance_output(ctx, true);
    weight_rows(out.weights, 0, tasks, r.alphas);
    out.diagnostics << "0,all,min_norm," << fmt(r.norm) << "\n";
    for (std::size_t k = 0; k < r.norm_history.size(); ++k) {
      out.diagnostics << (k + 1) << ",all,norm," << fmt(r.norm_history[k]) << "\n";
    }
    close_balance_output(out);

    mtl::Tensor direction = mtl::Tensor::from_values(snap.vectors[0].shape, r.direction);
    write_tensor_artifact(direction, ctx, "direction.mtkt");
    std::cout << "min norm " << fmt(r.norm) << "\n";
    return 0;
  }

  throw UsageError(
      "config key \"strategy\" must be one of fixed, uncertainty, gradnorm, dwa, dtp, "
      "magnitude, mgda");
}

// ---------------------------------------------------------------------------
// delta-mtl

constexpr const char* kDeltaHelp = R"(Average signed relative per-task change versus baselines.

config keys:
  model     string, required: metric CSV (task,metric,lower_is_better)
  baseline  string, required: metric CSV with the same tasks in the same
            order

prints the percentage with two decimals (e.g. -3.34%) and writes delta.txt.)";

std::string fmt_percent(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  std::string s(buf);
  if (s == "-0.00") s = "0.00";
  if (v > 0.0 && s != "0.00") s.insert(s.begin(), '+');
  return s + "%";
}

int run_delta_mtl(const json& cfg, RunContext& ctx) {
  static const KeySpec spec[] = {
      {"model", Kind::string, true},
      {"baseline", Kind::string, true},
  };
  check_keys(cfg, "the delta-mtl config", spec);
  seal(ctx, "delta-mtl", cfg);
  mtl::balance::MetricReport model =
      mtl::balance::read_metric_report_file(resolve_input(ctx, require_path(cfg, "model")).string());
  mtl::balance::MetricReport baseline = mtl::balance::read_metric_report_file(
      resolve_input(ctx, require_path(cfg, "baseline")).string());
  double value = mtl::balance::delta_mtl(model, baseline);
  std::string line = fmt_percent(value);

  fs::path path = out_path(ctx, "delta.txt");
  std::ofstream out = open_text(path);
  write_header(out, ctx);
  out << line << "\n";
  finish(out, path);
  std::cout << line << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// pixel-affinity

constexpr const char* kPixelHelp = R"(Cross-task pixel-affinity correspondence swept over dilations.

config keys:
  tasks      array of objects, required, at least two entries:
    name       string, required
    map        string, required: [H, W] label tensor path
    kind       string, required: categorical | continuous
    threshold  number > 0, continuous only, default 0.05: relative cutoff
  dilations  array of positive integers, required
  radius     positive integer, default 1: window radius shared by all tasks

writes sweep.csv (dilation,task_a,task_b,correspondence) over every
unordered task pair at every dilation.)";

int run_pixel_affinity(const json& cfg, RunContext& ctx) {
  static const KeySpec spec[] = {
      {"tasks", Kind::array, true},
      {"dilations", Kind::array, true},
      {"radius", Kind::integer, false},
  };
  check_keys(cfg, "the pixel-affinity config", spec);
  int radius = static_cast<int>(positive_int(cfg, "radius", 1));

  const json& dil = cfg["dilations"];
  std::vector<int> dilations;
  for (std::size_t i = 0; i < dil.size(); ++i) {
    if (!dil[i].is_number_integer() || dil[i].get<std::int64_t>() < 1) {
      throw UsageError("config key \"dilations[" + std::to_string(i) +
                       "]\" must be a positive integer");
    }
    dilations.push_back(static_cast<int>(dil[i].get<std::int64_t>()));
  }

  json effective = cfg;
  effective["radius"] = radius;

  std::vector<std::string> names;
  std::vector<mtl::LabelMap> maps;
  std::vector<mtl::pixaff::AffinityRule> rules;
  const json& tasks = cfg["tasks"];
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    std::string where = "tasks[" + std::to_string(i) + "]";
    static const KeySpec task_spec[] = {
        {"name", Kind::string, true},
        {"map", Kind::string, true},
        {"kind", Kind::string, true},
        {"threshold", Kind::number, false},
    };
    check_keys(tasks[i], where, task_spec);
    std::string kind = tasks[i]["kind"].get<std::string>();
    mtl::pixaff::AffinityRule rule;
    rule.radius = radius;
    rule.dilation = 1;
    if (kind == "categorical") {
      if (tasks[i].contains("threshold")) {
        throw UsageError("config key \"" + where + ".threshold\" only applies to continuous maps");
      }
      rule.kind = mtl::pixaff::RuleKind::categorical_equality;
    } else if (kind == "continuous") {
      rule.kind = mtl::pixaff::RuleKind::relative_threshold;
      rule.threshold = positive_number(tasks[i], "threshold", 0.05);
      effective["tasks"][i]["threshold"] = rule.threshold;
    } else {
      throw UsageError("config key \"" + where +
                       ".kind\" must be \"categorical\" or \"continuous\"");
    }
    names.push_back(tasks[i]["name"].get<std::string>());
    mtl::Tensor t =
        mtl::read_tensor_file(resolve_input(ctx, tasks[i]["map"].get<std::string>()).string());
    maps.push_back(mtl::label_map_from_tensor(
        t, kind == "categorical" ? mtl::LabelKind::categorical : mtl::LabelKind::continuous));
    rules.push_back(rule);
  }
  seal(ctx, "pixel-affinity", effective);

  std::vector<mtl::pixaff::SweepRow> rows = mtl::pixaff::dilation_sweep(maps, rules, dilations);

  fs::path path = out_path(ctx, "sweep.csv");
  std::ofstream out = open_text(path);
  write_header(out, ctx);
  out << "dilation,task_a,task_b,correspondence\n";
  for (const mtl::pixaff::SweepRow& r : rows) {
    out << r.dilation << "," << names[r.task_a] << "," << names[r.task_b] << ","
        << fmt(r.correspondence) << "\n";
  }
  finish(out, path);
  return 0;
}

// ---------------------------------------------------------------------------
// contrastive-check

constexpr const char* kContrastiveHelp = R"(Finite-difference audit of the contrastive loss gradients.

config keys (all optional):
  trials       positive integer, default 200: random instances per loss
  dims         positive integer, default 8: embedding width
  positives    positive integer, default 2
  negatives    positive integer, default 6
  queue        positive integer, default 16: queue entries
  neighbors    positive integer, default 4, at most queue
  temperature  number > 0, default 0.2
  tolerance    number > 0, default 0.0001: worst relative error allowed

prints the worst analytic-versus-central-difference relative error for the
instance loss and the neighbor loss, writes gradcheck.txt, and exits nonzero
when the tolerance is exceeded. Instances are drawn from --seed.)";

double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

// Central difference with a coordinate-scaled step, restoring the entry.
template <typename Eval>
double central_diff(Eval&& eval, std::vector<double>& v, std::size_t i) {
  double x = v[i];
  double h = 1e-5 * std::max(1.0, std::abs(x));
  v[i] = x + h;
  double fp = eval();
  v[i] = x - h;
  double fm = eval();
  v[i] = x;
  return (fp - fm) / (2.0 * h);
}

std::vector<double> draw(mtl::Rng& rng, std::size_t dims) {
  std::vector<double> v(dims);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

int run_contrastive_check(const json& cfg, RunContext& ctx) {
  static const KeySpec spec[] = {
      {"trials", Kind::integer, false},    {"dims", Kind::integer, false},
      {"positives", Kind::integer, false}, {"negatives", Kind::integer, false},
      {"queue", Kind::integer, false},     {"neighbors", Kind::integer, false},
      {"temperature", Kind::number, false}, {"tolerance", Kind::number, false},
  };
  check_keys(cfg, "the contrastive-check config", spec);
  std::size_t trials = static_cast<std::size_t>(positive_int(cfg, "trials", 200));
  std::size_t dims = static_cast<std::size_t>(positive_int(cfg, "dims", 8));
  std::size_t n_pos = static_cast<std::size_t>(positive_int(cfg, "positives", 2));
  std::size_t n_neg = static_cast<std::size_t>(positive_int(cfg, "negatives", 6));
  std::size_t queue = static_cast<std::size_t>(positive_int(cfg, "queue", 16));
  std::size_t neighbors = static_cast<std::size_t>(positive_int(cfg, "neighbors", 4));
  double temperature = positive_number(cfg, "temperature", 0.2);
  double tolerance = positive_number(cfg, "tolerance", 1e-4);
  if (neighbors > queue) throw UsageError("config key \"neighbors\" must not exceed \"queue\"");

  json effective = cfg;
  effective["trials"] = trials;
  effective["dims"] = dims;
  effective["positives"] = n_pos;
  effective["negatives"] = n_neg;
  effective["queue"] = queue;
  effective["neighbors"] = neighbors;
  effective["temperature"] = temperature;
  effective["tolerance"] = tolerance;
  seal(ctx, "contrastive-check", effective);

  // Unit-norm embeddings, as the losses see in practice; raw draws can
  // saturate the softmax and starve the finite-difference comparison.
  mtl::Rng rng(ctx.seed);
  double worst_instance = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    std::vector<double> anchor = mtl::ssl::l2_normalize(draw(rng, dims));
    std::vector<std::vector<double>> pos(n_pos);
    for (auto& p : pos) p = mtl::ssl::l2_normalize(draw(rng, dims));
    std::vector<std::vector<double>> neg(n_neg);
    for (auto& n : neg) n = mtl::ssl::l2_normalize(draw(rng, dims));

    mtl::ssl::ContrastiveGrads grads = mtl::ssl::contrastive_loss(anchor, pos, neg, temperature);
    auto eval = [&] { return mtl::ssl::contrastive_loss(anchor, pos, neg, temperature).loss; };
    for (std::size_t i = 0; i < dims; ++i) {
      worst_instance = std::max(worst_instance, rel_err(grads.anchor[i], central_diff(eval, anchor, i)));
      for (std::size_t p = 0; p < n_pos; ++p) {
        worst_instance =
            std::max(worst_instance, rel_err(grads.positives[p][i], central_diff(eval, pos[p], i)));
      }
      for (std::size_t n = 0; n < n_neg; ++n) {
        worst_instance =
            std::max(worst_instance, rel_err(grads.negatives[n][i], central_diff(eval, neg[n], i)));
      }
    }
  }

  double worst_neighbor = 0.0;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    mtl::ssl::EmbeddingQueue q(queue, dims, dims);
    std::vector<std::vector<double>> heads(queue);
    std::vector<std::vector<double>> backbones(queue);
    for (std::size_t i = 0; i < queue; ++i) {
      heads[i] = mtl::ssl::l2_normalize(draw(rng, dims));
      backbones[i] = mtl::ssl::l2_normalize(draw(rng, dims));
    }
    q.push(heads, backbones);
    std::vector<double> query = mtl::ssl::l2_normalize(draw(rng, dims));
    std::vector<std::size_t> idx = mtl::ssl::mine_neighbors(query, q, neighbors);
    std::vector<double> positive = mtl::ssl::l2_normalize(draw(rng, dims));

    mtl::ssl::KnnGrads grads = mtl::ssl::knn_loss(positive, q, idx, temperature);
    auto eval_positive = [&] { return mtl::ssl::knn_loss(positive, q, idx, temperature).loss; };
    // Entry gradients go through hand-built logits so perturbed copies never
    // hit the queue's unit-norm validation.
    auto eval_entries = [&] {
      std::vector<double> logits(queue);
      for (std::size_t j = 0; j < queue; ++j) {
        double dot = 0.0;
        for (std::size_t i = 0; i < dims; ++i) dot += positive[i] * heads[j][i];
        logits[j] = dot;
      }
      return mtl::ssl::knn_loss_from_logits(logits, idx, temperature);
    };
    for (std::size_t i = 0; i < dims; ++i) {
      worst_neighbor = std::max(worst_neighbor,
                                rel_err(grads.positive_head[i], central_diff(eval_positive, positive, i)));
      for (std::size_t j = 0; j < queue; ++j) {
        worst_neighbor = std::max(
            worst_neighbor, rel_err(grads.entries[j][i], central_diff(eval_entries, heads[j], i)));
      }
    }
  }

  bool ok = worst_instance <= tolerance && worst_neighbor <= tolerance;
  std::string lines = "contrastive_loss max relative error " + fmt(worst_instance) + "\n" +
                      "knn_loss max relative error " + fmt(worst_neighbor) + "\n" + "tolerance " +
                      fmt(tolerance) + ": " + (ok ? "PASS" : "FAIL") + "\n";

  fs::path path = out_path(ctx, "gradcheck.txt");
  std::ofstream out = open_text(path);
  write_header(out, ctx);
  out << lines;
  finish(out, path);
  std::cout << lines;
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------
// crop-stats

constexpr const char* kCropHelp = R"(IoU distribution of independently sampled crop pairs.

config keys:
  width      number, required: source image width
  height     number, required: source image height
  samples    positive integer, default 10000: accepted pairs to record
  scale_lo   number, default 0.2: area-fraction range
  scale_hi   number, default 1.0
  aspect_lo  number, default 0.75: aspect-ratio range
  aspect_hi  number, default 1.3333333333333333
  threshold  number, optional: reject pairs with IoU >= threshold

writes iou_histogram.csv (bin_lo,bin_hi,count over 20 bins of [0, 1]) with
samples, attempts and acceptance rate in its comment header. Pairs are drawn
from --seed.)";

int run_crop_stats(const json& cfg, RunContext& ctx) {
  static const KeySpec spec[] = {
      {"width", Kind::number, true},     {"height", Kind::number, true},
      {"samples", Kind::integer, false}, {"scale_lo", Kind::number, false},
      {"scale_hi", Kind::number, false}, {"aspect_lo", Kind::number, false},
      {"aspect_hi", Kind::number, false}, {"threshold", Kind::number, false},
  };
  check_keys(cfg, "the crop-stats config", spec);
  double width = cfg["width"].get<double>();
  double height = cfg["height"].get<double>();
  std::size_t samples = static_cast<std::size_t>(positive_int(cfg, "samples", 10000));
  mtl::ssl::ScaleRange scale{cfg.value("scale_lo", 0.2), cfg.value("scale_hi", 1.0)};
  mtl::ssl::ScaleRange aspect{cfg.value("aspect_lo", 0.75), cfg.value("aspect_hi", 4.0 / 3.0)};
  std::optional<double> threshold;
  if (cfg.contains("threshold")) threshold = cfg["threshold"].get<double>();

  json effective = cfg;
  effective["samples"] = samples;
  effective["scale_lo"] = scale.first;
  effective["scale_hi"] = scale.second;
  effective["aspect_lo"] = aspect.first;
  effective["aspect_hi"] = aspect.second;
  seal(ctx, "crop-stats", effective);

  mtl::ssl::IouStats stats =
      mtl::ssl::iou_pair_stats(width, height, scale, threshold, samples, ctx.seed, aspect);

  fs::path path = out_path(ctx, "iou_histogram.csv");
  std::ofstream out = open_text(path);
  write_header(out, ctx);
  out << "# samples: " << stats.samples << "\n";
  out << "# attempts: " << stats.attempts << "\n";
  out << "# acceptance_rate: " << fmt(stats.acceptance_rate) << "\n";
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t i = 0; i < stats.histogram.size(); ++i) {
    out << fmt(static_cast<double>(i) / 20.0) << "," << fmt(static_cast<double>(i + 1) / 20.0)
        << "," << stats.histogram[i] << "\n";
  }
  finish(out, path);
  std::cout << "acceptance rate " << fmt(stats.acceptance_rate) << " (" << stats.samples
            << " samples, " << stats.attempts << " attempts)\n";
  return 0;
}

// ---------------------------------------------------------------------------
// distill-check

constexpr const char* kDistillHelp = R"(Feature-distillation forward passes checked against a naive reference.

config keys:
  op         string, required: padnet | mtinet | harmonize | se
  tolerance  number > 0, default 1e-12: max absolute difference allowed

padnet keys:
  features   array of [C, H, W] tensor paths, one per task, required
  attention  array of objects, optional; unlisted ordered pairs keep zero
             masks (gate 0.5):
    to, from     integers, required: ordered task pair, to != from
    mask_weight  string, required: [out, in, k, k] tensor path, odd k
    mask_bias    string, optional: [out] tensor path, default zeros

mtinet keys:
  scales     array of objects, required: {features, attention} per scale;
             attention entries may also carry transform_weight and
             transform_bias (same shapes as the mask pair)

harmonize keys:
  features       array of [C, H, W] tensor paths, required
  mix_weight     string, required: [N*C, N*C, k, k] tensor path
  mix_bias       string, optional
  reduce_weight  string, required: [C, N*C, k, k] tensor path
  reduce_bias    string, optional

se keys:
  feature   string, required: [C, H, W] tensor path
  mlp       array of objects, required: {weight: [out, in] tensor path,
            bias: optional [out] path}; the last layer must map back to C
  residual  boolean, default true: add the gated map back onto the input

writes the op outputs as tensors plus report.txt with the worst absolute
difference versus an independent per-pixel loop; exits nonzero when that
difference exceeds the tolerance.)";

namespace naive {

using mtl::distill::AttentionParams;
using mtl::distill::ConvMap;
using mtl::distill::FeatureMap;
using mtl::distill::HarmonizeParams;
using mtl::distill::HarmonizeResult;
using mtl::distill::SeResult;
using mtl::distill::SqueezeMlp;
using mtl::distill::TaskFeatureStack;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

FeatureMap conv(const ConvMap& m, const FeatureMap& in) {
  FeatureMap out = FeatureMap::zeros(m.out_channels, in.height, in.width);
  std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(m.kernel / 2);
  for (std::size_t o = 0; o < m.out_channels; ++o) {
    for (std::size_t y = 0; y < in.height; ++y) {
      for (std::size_t x = 0; x < in.width; ++x) {
        double acc = m.bias[o];
        for (std::size_t c = 0; c < m.in_channels; ++c) {
          for (std::size_t ky = 0; ky < m.kernel; ++ky) {
            for (std::size_t kx = 0; kx < m.kernel; ++kx) {
              std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - pad;
              std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - pad;
              if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(in.height)) continue;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(in.width)) continue;
              acc += m.weight[((o * m.in_channels + c) * m.kernel + ky) * m.kernel + kx] *
                     in.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
          }
        }
        out.at(o, y, x) = acc;
      }
    }
  }
  return out;
}

// Covers both distillation forms: no transform means the raw message.
TaskFeatureStack distill_scale(const TaskFeatureStack& stack, const AttentionParams& params) {
  TaskFeatureStack out = stack;
  for (std::size_t k = 0; k < stack.size(); ++k) {
    for (std::size_t l = 0; l < stack.size(); ++l) {
      if (l == k) continue;
      FeatureMap logits = conv(params.at(k, l).mask, stack[l]);
      FeatureMap message =
          params.at(k, l).transform ? conv(*params.at(k, l).transform, stack[l]) : stack[l];
      for (std::size_t i = 0; i < out[k].data.size(); ++i) {
        out[k].data[i] += sigmoid(logits.data[i]) * message.data[i];
      }
    }
  }
  return out;
}

HarmonizeResult harmonize(const TaskFeatureStack& stack, const HarmonizeParams& params) {
  std::size_t n = stack.size();
  std::size_t c = stack[0].channels;
  std::size_t h = stack[0].height;
  std::size_t w = stack[0].width;
  FeatureMap cat = FeatureMap::zeros(n * c, h, w);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) cat.at(t * c + ch, y, x) = stack[t].at(ch, y, x);
      }
    }
  }
  FeatureMap mixed = conv(params.mix, cat);
  for (double& v : mixed.data) v = std::max(0.0, v);

  HarmonizeResult r;
  r.attention.assign(n, FeatureMap::zeros(c, h, w));
  FeatureMap attended = FeatureMap::zeros(n * c, h, w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double top = mixed.at(ch, y, x);
        for (std::size_t t = 1; t < n; ++t) top = std::max(top, mixed.at(t * c + ch, y, x));
        double denom = 0.0;
        for (std::size_t t = 0; t < n; ++t) denom += std::exp(mixed.at(t * c + ch, y, x) - top);
        for (std::size_t t = 0; t < n; ++t) {
          double a = std::exp(mixed.at(t * c + ch, y, x) - top) / denom;
          r.attention[t].at(ch, y, x) = a;
          attended.at(t * c + ch, y, x) = a * stack[t].at(ch, y, x);
        }
      }
    }
  }
  r.fused = conv(params.reduce, attended);
  return r;
}

SeResult se(const FeatureMap& feature, const SqueezeMlp& mlp) {
  std::vector<double> v(feature.channels, 0.0);
  double scale = 1.0 / static_cast<double>(feature.height * feature.width);
  for (std::size_t c = 0; c < feature.channels; ++c) {
    for (std::size_t y = 0; y < feature.height; ++y) {
      for (std::size_t x = 0; x < feature.width; ++x) v[c] += feature.at(c, y, x);
    }
    v[c] *= scale;
  }
  for (std::size_t layer = 0; layer < mlp.layers.size(); ++layer) {
    const mtl::distill::DenseLayer& d = mlp.layers[layer];
    std::vector<double> next(d.out, 0.0);
    for (std::size_t o = 0; o < d.out; ++o) {
      double acc = d.bias[o];
      for (std::size_t i = 0; i < d.in; ++i) acc += d.weight[o * d.in + i] * v[i];
      next[o] = layer + 1 < mlp.layers.size() ? std::max(0.0, acc) : acc;
    }
    v = std::move(next);
  }
  SeResult r;
  r.gates.resize(v.size());
  for (std::size_t c = 0; c < v.size(); ++c) r.gates[c] = sigmoid(v[c]);
  r.gated = feature;
  for (std::size_t c = 0; c < feature.channels; ++c) {
    for (std::size_t y = 0; y < feature.height; ++y) {
      for (std::size_t x = 0; x < feature.width; ++x) r.gated.at(c, y, x) *= r.gates[c];
    }
  }
  return r;
}

}  // namespace naive

double map_diff(const mtl::distill::FeatureMap& a, const mtl::distill::FeatureMap& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

mtl::distill::ConvMap conv_from_files(const RunContext& ctx, const std::string& weight_path,
                                      const std::optional<std::string>& bias_path,
                                      const std::string& where) {
  mtl::Tensor w = mtl::read_tensor_file(resolve_input(ctx, weight_path).string());
  if (w.shape.size() != 4) {
    throw mtl::DimensionError(where + " weight tensor must have shape [out, in, k, k]");
  }
  if (w.shape[2] != w.shape[3]) {
    throw mtl::DimensionError(where + " kernel must be square, got " +
                              std::to_string(w.shape[2]) + "x" + std::to_string(w.shape[3]));
  }
  mtl::distill::ConvMap m;
  m.out_channels = static_cast<std::size_t>(w.shape[0]);
  m.in_channels = static_cast<std::size_t>(w.shape[1]);
  m.kernel = static_cast<std::size_t>(w.shape[2]);
  m.weight = w.data;
  if (bias_path) {
    mtl::Tensor b = mtl::read_tensor_file(resolve_input(ctx, *bias_path).string());
    if (b.shape.size() != 1 || b.shape[0] != w.shape[0]) {
      throw mtl::DimensionError(where + " bias tensor must have shape [out]");
    }
    m.bias = b.data;
  } else {
    m.bias.assign(m.out_channels, 0.0);
  }
  return m;
}

std::optional<std::string> optional_path(const json& node, const char* key) {
  if (!node.contains(key)) return std::nullopt;
  return node[key].get<std::string>();
}

mtl::distill::TaskFeatureStack load_stack(const RunContext& ctx, const json& arr,
                                          const std::string& key) {
  if (arr.empty()) throw UsageError("config key \"" + key + "\" must not be empty");
  mtl::distill::TaskFeatureStack stack;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    if (!arr[i].is_string()) {
      throw UsageError("config key \"" + key + "[" + std::to_string(i) + "]\" must be a string");
    }
    stack.push_back(mtl::distill::FeatureMap::from_tensor(
        mtl::read_tensor_file(resolve_input(ctx, arr[i].get<std::string>()).string())));
  }
  return stack;
}

mtl::distill::AttentionParams load_attention(const RunContext& ctx, const json* arr,
                                             std::size_t tasks, std::size_t channels,
                                             const std::string& where, bool allow_transform) {
  mtl::distill::AttentionParams params = mtl::distill::AttentionParams::zeros(tasks, channels);
  if (!arr) return params;
  for (std::size_t i = 0; i < arr->size(); ++i) {
    std::string entry = where + "[" + std::to_string(i) + "]";
    static const KeySpec spec[] = {
        {"to", Kind::integer, true},           {"from", Kind::integer, true},
        {"mask_weight", Kind::string, true},   {"mask_bias", Kind::string, false},
        {"transform_weight", Kind::string, false}, {"transform_bias", Kind::string, false},
    };
    check_keys((*arr)[i], entry, spec);
    const json& e = (*arr)[i];
    std::int64_t k = e["to"].get<std::int64_t>();
    std::int64_t l = e["from"].get<std::int64_t>();
    if (k < 0 || k >= static_cast<std::int64_t>(tasks)) {
      throw UsageError("config key \"" + entry + ".to\" is out of range");
    }
    if (l < 0 || l >= static_cast<std::int64_t>(tasks)) {
      throw UsageError("config key \"" + entry + ".from\" is out of range");
    }
    if (k == l) throw UsageError("config key \"" + entry + "\" must pair two distinct tasks");
    if (!allow_transform && (e.contains("transform_weight") || e.contains("transform_bias"))) {
      throw UsageError("config key \"" + entry + ".transform_weight\" only applies to the mtinet op");
    }
    if (e.contains("transform_bias") && !e.contains("transform_weight")) {
      throw UsageError("config key \"" + entry + ".transform_bias\" needs \"transform_weight\"");
    }
    mtl::distill::PairAttention& pair =
        params.at(static_cast<std::size_t>(k), static_cast<std::size_t>(l));
    pair.mask = conv_from_files(ctx, e["mask_weight"].get<std::string>(),
                                optional_path(e, "mask_bias"), entry + " mask");
    if (e.contains("transform_weight")) {
      pair.transform = conv_from_files(ctx, e["transform_weight"].get<std::string>(),
                                       optional_path(e, "transform_bias"), entry + " transform");
    }
  }
  return params;
}

int write_distill_report(const RunContext& ctx, const std::string& op, double diff,
                         double tolerance) {
  bool ok = diff <= tolerance;
  std::string lines = "op " + op + "\n" + "max abs diff vs reference " + fmt(diff) + "\n" +
                      "tolerance " + fmt(tolerance) + ": " + (ok ? "PASS" : "FAIL") + "\n";
  fs::path path = out_path(ctx, "report.txt");
  std::ofstream out = open_text(path);
  write_header(out, ctx);
  out << lines;
  finish(out, path);
  std::cout << lines;
  return ok ? 0 : 1;
}

int run_distill_check(const json& cfg, RunContext& ctx) {
  if (!cfg.is_object()) throw UsageError("the distill-check config must be a JSON object");
  auto op_it = cfg.find("op");
  if (op_it == cfg.end()) throw UsageError("missing config key \"op\" in the distill-check config");
  if (!op_it->is_string()) throw UsageError("config key \"op\" must be a string");
  std::string op = op_it->get<std::string>();

  if (op == "padnet") {
    static const KeySpec spec[] = {
        {"op", Kind::string, true},
        {"features", Kind::array, true},
        {"attention", Kind::array, false},
        {"tolerance", Kind::number, false},
    };
    check_keys(cfg, "the distill-check config", spec);
    double tolerance = positive_number(cfg, "tolerance", 1e-12);
    json effective = cfg;
    effective["tolerance"] = tolerance;
    seal(ctx, "distill-check", effective);
    mtl::distill::TaskFeatureStack stack = load_stack(ctx, cfg["features"], "features");
    const json* attention = cfg.contains("attention") ? &cfg["attention"] : nullptr;
    mtl::distill::AttentionParams params =
        load_attention(ctx, attention, stack.size(), stack[0].channels, "attention", false);
    mtl::distill::TaskFeatureStack out = mtl::distill::padnet_distill(stack, params);
    mtl::distill::TaskFeatureStack ref = naive::distill_scale(stack, params);
    double diff = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) {
      diff = std::max(diff, map_diff(out[k], ref[k]));
      write_tensor_artifact(out[k].to_tensor(), ctx, "distilled_" + std::to_string(k) + ".mtkt");
    }
    return write_distill_report(ctx, op, diff, tolerance);
  }

  if (op == "mtinet") {
    static const KeySpec spec[] = {
        {"op", Kind::string, true},
        {"scales", Kind::array, true},
        {"tolerance", Kind::number, false},
    };
    check_keys(cfg, "the distill-check config", spec);
    double tolerance = positive_number(cfg, "tolerance", 1e-12);
    json effective = cfg;
    effective["tolerance"] = tolerance;
    seal(ctx, "distill-check", effective);
    const json& scales = cfg["scales"];
    if (scales.empty()) throw UsageError("config key \"scales\" must not be empty");
    std::vector<mtl::distill::TaskFeatureStack> stacks;
    std::vector<mtl::distill::AttentionParams> params;
    for (std::size_t s = 0; s < scales.size(); ++s) {
      std::string where = "scales[" + std::to_string(s) + "]";
      static const KeySpec scale_spec[] = {
          {"features", Kind::array, true},
          {"attention", Kind::array, false},
      };
      check_keys(scales[s], where, scale_spec);
      stacks.push_back(load_stack(ctx, scales[s]["features"], where + ".features"));
      const json* attention = scales[s].contains("attention") ? &scales[s]["attention"] : nullptr;
      params.push_back(load_attention(ctx, attention, stacks[s].size(), stacks[s][0].channels,
                                      where + ".attention", true));
    }
    std::vector<mtl::distill::TaskFeatureStack> out = mtl::distill::mtinet_distill(stacks, params);
    double diff = 0.0;
    for (std::size_t s = 0; s < out.size(); ++s) {
      mtl::distill::TaskFeatureStack ref = naive::distill_scale(stacks[s], params[s]);
      for (std::size_t k = 0; k < out[s].size(); ++k) {
        diff = std::max(diff, map_diff(out[s][k], ref[k]));
        write_tensor_artifact(out[s][k].to_tensor(), ctx,
                              "distilled_s" + std::to_string(s) + "_t" + std::to_string(k) + ".mtkt");
      }
    }
    return write_distill_report(ctx, op, diff, tolerance);
  }

  if (op == "harmonize") {
    static const KeySpec spec[] = {
        {"op", Kind::string, true},          {"features", Kind::array, true},
        {"mix_weight", Kind::string, true},  {"mix_bias", Kind::string, false},
        {"reduce_weight", Kind::string, true}, {"reduce_bias", Kind::string, false},
        {"tolerance", Kind::number, false},
    };
    check_keys(cfg, "the distill-check config", spec);
    double tolerance = positive_number(cfg, "tolerance", 1e-12);
    json effective = cfg;
    effective["tolerance"] = tolerance;
    seal(ctx, "distill-check", effective);
    mtl::distill::TaskFeatureStack stack = load_stack(ctx, cfg["features"], "features");
    mtl::distill::HarmonizeParams params;
    params.mix = conv_from_files(ctx, cfg["mix_weight"].get<std::string>(),
                                 optional_path(cfg, "mix_bias"), "mix");
    params.reduce = conv_from_files(ctx, cfg["reduce_weight"].get<std::string>(),
                                    optional_path(cfg, "reduce_bias"), "reduce");
    mtl::distill::HarmonizeResult out = mtl::distill::feature_harmonize(stack, params);
    mtl::distill::HarmonizeResult ref = naive::harmonize(stack, params);
    double diff = map_diff(out.fused, ref.fused);
    for (std::size_t t = 0; t < out.attention.size(); ++t) {
      diff = std::max(diff, map_diff(out.attention[t], ref.attention[t]));
      write_tensor_artifact(out.attention[t].to_tensor(), ctx,
                            "attention_" + std::to_string(t) + ".mtkt");
    }
    write_tensor_artifact(out.fused.to_tensor(), ctx, "fused.mtkt");
    return write_distill_report(ctx, op, diff, tolerance);
  }

  if (op == "se") {
    static const KeySpec spec[] = {
        {"op", Kind::string, true},
        {"feature", Kind::string, true},
        {"mlp", Kind::array, true},
        {"residual", Kind::boolean, false},
        {"tolerance", Kind::number, false},
    };
    check_keys(cfg, "the distill-check config", spec);
    double tolerance = positive_number(cfg, "tolerance", 1e-12);
    bool residual = cfg.value("residual", true);
    json effective = cfg;
    effective["tolerance"] = tolerance;
    effective["residual"] = residual;
    seal(ctx, "distill-check", effective);
    mtl::distill::FeatureMap feature = mtl::distill::FeatureMap::from_tensor(
        mtl::read_tensor_file(resolve_input(ctx, require_path(cfg, "feature")).string()));
    const json& mlp_cfg = cfg["mlp"];
    if (mlp_cfg.empty()) throw UsageError("config key \"mlp\" must not be empty");
    mtl::distill::SqueezeMlp mlp;
    for (std::size_t i = 0; i < mlp_cfg.size(); ++i) {
      std::string where = "mlp[" + std::to_string(i) + "]";
      static const KeySpec layer_spec[] = {
          {"weight", Kind::string, true},
          {"bias", Kind::string, false},
      };
      check_keys(mlp_cfg[i], where, layer_spec);
      mtl::Tensor w = mtl::read_tensor_file(
          resolve_input(ctx, mlp_cfg[i]["weight"].get<std::string>()).string());
      if (w.shape.size() != 2) {
        throw mtl::DimensionError(where + " weight tensor must have shape [out, in]");
      }
      mtl::distill::DenseLayer layer;
      layer.out = static_cast<std::size_t>(w.shape[0]);
      layer.in = static_cast<std::size_t>(w.shape[1]);
      layer.weight = w.data;
      if (mlp_cfg[i].contains("bias")) {
        mtl::Tensor b = mtl::read_tensor_file(
            resolve_input(ctx, mlp_cfg[i]["bias"].get<std::string>()).string());
        if (b.shape.size() != 1 || b.shape[0] != w.shape[0]) {
          throw mtl::DimensionError(where + " bias tensor must have shape [out]");
        }
        layer.bias = b.data;
      } else {
        layer.bias.assign(layer.out, 0.0);
      }
      mlp.layers.push_back(std::move(layer));
    }
    mtl::distill::SeResult out = mtl::distill::se_gate(feature, mlp);
    mtl::distill::SeResult ref = naive::se(feature, mlp);
    double diff = map_diff(out.gated, ref.gated);
    for (std::size_t c = 0; c < out.gates.size(); ++c) {
      diff = std::max(diff, std::abs(out.gates[c] - ref.gates[c]));
    }
    mtl::distill::FeatureMap final_map = out.gated;
    if (residual) {
      for (std::size_t i = 0; i < final_map.data.size(); ++i) final_map.data[i] += feature.data[i];
    }
    write_tensor_artifact(final_map.to_tensor(), ctx, "gated.mtkt");
    write_tensor_artifact(mtl::Tensor::from_values({out.gates.size()}, out.gates), ctx,
                          "gates.mtkt");
    return write_distill_report(ctx, op, diff, tolerance);
  }

  throw UsageError("config key \"op\" must be one of padnet, mtinet, harmonize, se");
}

// ---------------------------------------------------------------------------

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config file \"" + path + "\"");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("cannot parse config: ") + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string("mtl-lab ") + kVersion +
               ": deterministic multi-task learning numerics over tensor and trace files"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string output_dir = ".";

  auto add_common = [&](CLI::App* sub, bool config_required) {
    CLI::Option* c = sub->add_option(
        "--config", config_path, "JSON config; relative paths inside resolve against its directory");
    if (config_required) c->required();
    sub->add_option("--seed", seed, "seed driving any sampling, recorded in output metadata");
    sub->add_option("--threads", threads, "worker thread cap; never changes results")
        ->check(CLI::PositiveNumber);
    sub->add_option("--output", output_dir, "output directory, created if missing");
  };

  CLI::App* affinity = app.add_subcommand("affinity", kAffinityHelp);
  add_common(affinity, true);
  CLI::App* branch_search = app.add_subcommand("branch-search", kBranchHelp);
  add_common(branch_search, true);
  CLI::App* balance = app.add_subcommand("balance", kBalanceHelp);
  add_common(balance, true);
  CLI::App* delta = app.add_subcommand("delta-mtl", kDeltaHelp);
  add_common(delta, true);
  CLI::App* pixel = app.add_subcommand("pixel-affinity", kPixelHelp);
  add_common(pixel, true);
  CLI::App* contrastive = app.add_subcommand("contrastive-check", kContrastiveHelp);
  add_common(contrastive, false);
  CLI::App* crop = app.add_subcommand("crop-stats", kCropHelp);
  add_common(crop, true);
  CLI::App* distill = app.add_subcommand("distill-check", kDistillHelp);
  add_common(distill, true);

  CLI11_PARSE(app, argc, argv);

  try {
    RunContext ctx;
    ctx.seed = seed;
    ctx.threads = threads;
    ctx.out_dir = output_dir;
    ctx.config_dir = config_path.empty() ? fs::path(".") : fs::path(config_path).parent_path();
    if (ctx.config_dir.empty()) ctx.config_dir = ".";
    json cfg = load_config(config_path);

    if (app.got_subcommand(affinity)) return run_affinity(cfg, ctx);
    if (app.got_subcommand(branch_search)) return run_branch_search(cfg, ctx);
    if (app.got_subcommand(balance)) return run_balance(cfg, ctx);
    if (app.got_subcommand(delta)) return run_delta_mtl(cfg, ctx);
    if (app.got_subcommand(pixel)) return run_pixel_affinity(cfg, ctx);
    if (app.got_subcommand(contrastive)) return run_contrastive_check(cfg, ctx);
    if (app.got_subcommand(crop)) return run_crop_stats(cfg, ctx);
    if (app.got_subcommand(distill)) return run_distill_check(cfg, ctx);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const mtl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
