#include "mtl/branch.hpp"

#include <algorithm>
#include <numeric>

#include "mtl/error.hpp"

namespace mtl::branch {

Partition Partition::single_block(int n) {
  Partition p;
  p.blocks.emplace_back(n);
  std::iota(p.blocks[0].begin(), p.blocks[0].end(), 0);
  return p;
}

Partition Partition::singletons(int n) {
  Partition p;
  for (int i = 0; i < n; ++i) p.blocks.push_back({i});
  return p;
}

int Partition::task_count() const {
  int n = 0;
  for (const auto& b : blocks) n += static_cast<int>(b.size());
  return n;
}

void Partition::canonicalize() {
  for (auto& b : blocks) std::sort(b.begin(), b.end());
  std::sort(blocks.begin(), blocks.end(),
            [](const std::vector<int>& a, const std::vector<int>& b) { return a[0] < b[0]; });
}

std::vector<int> Partition::growth_string() const {
  std::vector<int> g(static_cast<std::size_t>(task_count()), -1);
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    for (int t : blocks[bi]) g[static_cast<std::size_t>(t)] = static_cast<int>(bi);
  }
  return g;
}

bool Partition::refines(const Partition& coarser) const {
  std::vector<int> owner(static_cast<std::size_t>(coarser.task_count()), -1);
  for (std::size_t bi = 0; bi < coarser.blocks.size(); ++bi) {
    for (int t : coarser.blocks[bi]) owner[static_cast<std::size_t>(t)] = static_cast<int>(bi);
  }
  for (const auto& b : blocks) {
    int home = owner[static_cast<std::size_t>(b[0])];
    for (int t : b) {
      if (owner[static_cast<std::size_t>(t)] != home) return false;
    }
  }
  return true;
}

bool operator==(const Partition& a, const Partition& b) { return a.blocks == b.blocks; }

bool partition_less(const Partition& a, const Partition& b) {
  return a.growth_string() < b.growth_string();
}

namespace {

void check_guard(int n, int depth) {
  if (n < 1 || n > kMaxTasks) {
    throw CapacityError("task count " + std::to_string(n) + " outside guard range [1, " +
                        std::to_string(kMaxTasks) + "]");
  }
  if (depth < 1) {
    throw CapacityError("depth must be at least 1");
  }
}

// Partitions of the values in `members`, emitted with sorted blocks. The
// first member stays in the first block, which keeps the recursion from
// producing duplicates.
void partitions_of(const std::vector<int>& members, std::size_t next,
                   std::vector<std::vector<int>>& acc,
                   const std::function<void(const std::vector<std::vector<int>>&)>& emit) {
  if (next == members.size()) {
    emit(acc);
    return;
  }
  int v = members[next];
  // Index, not iterate: the recursion grows acc and may reallocate it.
  std::size_t existing = acc.size();
  for (std::size_t bi = 0; bi < existing; ++bi) {
    acc[bi].push_back(v);
    partitions_of(members, next + 1, acc, emit);
    acc[bi].pop_back();
  }
  acc.push_back({v});
  partitions_of(members, next + 1, acc, emit);
  acc.pop_back();
}

}  // namespace

std::vector<Partition> all_partitions(int n) {
  check_guard(n, 1);
  std::vector<int> members(static_cast<std::size_t>(n));
  std::iota(members.begin(), members.end(), 0);
  std::vector<Partition> out;
  std::vector<std::vector<int>> acc;
  partitions_of(members, 0, acc, [&](const std::vector<std::vector<int>>& blocks) {
    Partition p;
    p.blocks = blocks;
    p.canonicalize();
    out.push_back(std::move(p));
  });
  std::sort(out.begin(), out.end(), partition_less);
  return out;
}

std::vector<Partition> refinements(const Partition& base) {
  // Refine each block independently, then take every combination.
  std::vector<std::vector<std::vector<std::vector<int>>>> per_block;
  for (const auto& block : base.blocks) {
    std::vector<std::vector<std::vector<int>>> subs;
    std::vector<std::vector<int>> acc;
    partitions_of(block, 0, acc,
                  [&](const std::vector<std::vector<int>>& blocks) { subs.push_back(blocks); });
    per_block.push_back(std::move(subs));
  }
  std::vector<Partition> out;
  std::vector<std::size_t> pick(per_block.size(), 0);
  while (true) {
    Partition p;
    for (std::size_t b = 0; b < per_block.size(); ++b) {
      for (const auto& sub : per_block[b][pick[b]]) p.blocks.push_back(sub);
    }
    p.canonicalize();
    out.push_back(std::move(p));
    std::size_t b = 0;
    while (b < pick.size() && ++pick[b] == per_block[b].size()) {
      pick[b] = 0;
      ++b;
    }
    if (b == pick.size()) break;
  }
  std::sort(out.begin(), out.end(), partition_less);
  return out;
}

namespace {

std::uint64_t chains_from(const Partition& layer, int remaining, std::vector<Partition>& stack,
                          const std::function<void(const std::vector<Partition>&)>& visit) {
  stack.push_back(layer);
  std::uint64_t count = 0;
  if (remaining == 0) {
    count = 1;
    if (visit) visit(stack);
  } else {
    for (const Partition& next : refinements(layer)) {
      count += chains_from(next, remaining - 1, stack, visit);
    }
  }
  stack.pop_back();
  return count;
}

}  // namespace

std::uint64_t for_each_chain(int n, int depth,
                             const std::function<void(const std::vector<Partition>&)>& visit) {
  check_guard(n, depth);
  std::uint64_t count = 0;
  std::vector<Partition> stack;
  for (const Partition& first : all_partitions(n)) {
    count += chains_from(first, depth - 1, stack, visit);
  }
  return count;
}

std::vector<BranchTree> enumerate_partition_chains(int n, int depth) {
  std::vector<BranchTree> out;
  for_each_chain(n, depth, [&](const std::vector<Partition>& layers) {
    BranchTree t;
    t.layers = layers;
    out.push_back(std::move(t));
  });
  return out;
}

double tree_dissimilarity_cost(const std::vector<Partition>& layers,
                               const rsa::AffinityTensor& affinity) {
  if (layers.size() != affinity.D) {
    throw DimensionError("tree depth " + std::to_string(layers.size()) +
                         " does not match affinity depth " + std::to_string(affinity.D));
  }
  double total = 0.0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (static_cast<std::size_t>(layers[l].task_count()) != affinity.N) {
      throw DimensionError("layer task count does not match affinity task count");
    }
    double layer_sum = 0.0;
    for (const auto& block : layers[l].blocks) {
      double worst = 0.0;  // empty pairwise max: singletons cost nothing
      for (std::size_t a = 0; a < block.size(); ++a) {
        for (std::size_t b = a + 1; b < block.size(); ++b) {
          double d = 1.0 - affinity.at(l, static_cast<std::size_t>(block[a]),
                                       static_cast<std::size_t>(block[b]));
          worst = std::max(worst, d);
        }
      }
      layer_sum += worst;
    }
    total += layer_sum / static_cast<double>(layers[l].blocks.size());
  }
  return total;
}

double tree_resource(const std::vector<Partition>& layers, const BudgetModel& model) {
  if (layers.size() != model.shared_costs.size()) {
    throw DimensionError("location count of the budget model does not match tree depth");
  }
  double total = 0.0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    total += static_cast<double>(layers[l].blocks.size()) * model.shared_costs[l];
  }
  for (double d : model.decoder_costs) total += d;
  return total;
}

SearchResult search_optimal_tree(const rsa::AffinityTensor& affinity, const BudgetModel& model,
                                 bool collect_ranked) {
  if (model.decoder_costs.size() != affinity.N) {
    throw DimensionError("decoder cost count does not match task count");
  }
  SearchResult result;
  bool found = false;
  double cheapest = 0.0;
  bool have_cheapest = false;

  for_each_chain(static_cast<int>(affinity.N), static_cast<int>(affinity.D),
                 [&](const std::vector<Partition>& layers) {
                   ++result.enumerated;
                   BranchTree t;
                   t.layers = layers;
                   t.cost = tree_dissimilarity_cost(layers, affinity);
                   t.resource = tree_resource(layers, model);
                   if (!have_cheapest || t.resource < cheapest) {
                     cheapest = t.resource;
                     have_cheapest = true;
                   }
                   if (t.resource > model.budget) return;
                   ++result.feasible;
                   if (collect_ranked) result.ranked.push_back(t);
                   // Canonical enumeration order breaks the remaining ties:
                   // strictly-better-only replacement keeps the earliest.
                   if (!found || t.cost < result.best.cost ||
                       (t.cost == result.best.cost && t.resource < result.best.resource)) {
                     result.best = std::move(t);
                     found = true;
                   }
                 });
  if (!found) {
    throw InfeasibleError("no tree fits the budget " + std::to_string(model.budget) +
                              "; cheapest tree needs " + std::to_string(cheapest),
                          cheapest);
  }
  if (collect_ranked) {
    std::stable_sort(result.ranked.begin(), result.ranked.end(),
                     [](const BranchTree& a, const BranchTree& b) {
                       if (a.cost != b.cost) return a.cost < b.cost;
                       return a.resource < b.resource;
                     });
  }
  return result;
}

std::string format_partition(const Partition& p, const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    if (b > 0) out += ' ';
    out += '{';
    for (std::size_t i = 0; i < p.blocks[b].size(); ++i) {
      if (i > 0) out += ' ';
      int t = p.blocks[b][i];
      if (static_cast<std::size_t>(t) < names.size()) {
        out += names[static_cast<std::size_t>(t)];
      } else {
        out += std::to_string(t);
      }
    }
    out += '}';
  }
  return out;
}

}  // namespace mtl::branch
