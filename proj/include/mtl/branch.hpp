#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mtl/rsa.hpp"

namespace mtl::branch {

// Partition of tasks {0..N-1} into disjoint blocks. Canonical form: members
// ascending within a block, blocks ordered by smallest member.
struct Partition {
  std::vector<std::vector<int>> blocks;

  static Partition single_block(int n);
  static Partition singletons(int n);

  int task_count() const;
  void canonicalize();
  // Block index per task with blocks in canonical order (a restricted growth
  // string); the key used for ordering partitions.
  std::vector<int> growth_string() const;
  // True when every block of *this is contained in some block of coarser.
  bool refines(const Partition& coarser) const;
};

bool operator==(const Partition& a, const Partition& b);
// Lexicographic on growth strings; defines the canonical enumeration order.
bool partition_less(const Partition& a, const Partition& b);

// A depth-D chain of partitions, each layer refining the one above, plus the
// totals the search ranks by.
struct BranchTree {
  std::vector<Partition> layers;
  double cost = 0.0;
  double resource = 0.0;
};

struct BudgetModel {
  std::vector<double> shared_costs;   // per location, one branch instance
  std::vector<double> decoder_costs;  // per task
  double budget = 0.0;
};

// Chain counts grow super-exponentially; refuse rather than run forever.
inline constexpr int kMaxTasks = 12;

// All partitions of {0..n-1}, canonical order.
std::vector<Partition> all_partitions(int n);
// All partitions refining base (equality included), canonical order.
std::vector<Partition> refinements(const Partition& base);

// Streams every depth-D chain of refining partitions in canonical order
// (layers compared lexicographically). Returns the number of chains visited.
std::uint64_t for_each_chain(int n, int depth,
                             const std::function<void(const std::vector<Partition>&)>& visit);

// Materialized skeletons (cost/resource zero) in canonical order.
std::vector<BranchTree> enumerate_partition_chains(int n, int depth);

// Sum over depths of the mean, over blocks, of the maximum pairwise
// dissimilarity 1 - A[l][i][j] inside the block; singletons contribute 0.
double tree_dissimilarity_cost(const std::vector<Partition>& layers,
                               const rsa::AffinityTensor& affinity);

// Sum of per-location branch costs (one shared_costs[l] per block) plus one
// decoder cost per task.
double tree_resource(const std::vector<Partition>& layers, const BudgetModel& model);

struct SearchResult {
  BranchTree best;
  std::uint64_t enumerated = 0;
  std::uint64_t feasible = 0;
  // Feasible trees sorted by (cost, resource, canonical order); only filled
  // when requested.
  std::vector<BranchTree> ranked;
};

// Exhaustive argmin of tree_dissimilarity_cost over all chains with
// tree_resource <= budget. Ties break to lower resource, then canonical
// enumeration order. Throws InfeasibleError (carrying the cheapest resource
// seen) when nothing fits.
SearchResult search_optimal_tree(const rsa::AffinityTensor& affinity, const BudgetModel& model,
                                 bool collect_ranked = false);

// "{a b} {c}" style rendering, names optional (task indices otherwise).
std::string format_partition(const Partition& p, const std::vector<std::string>& names = {});

}  // namespace mtl::branch
