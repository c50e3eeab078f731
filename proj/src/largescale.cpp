#include "rosd/largescale.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>

#include "rosd/errors.hpp"

namespace rosd {
namespace {

NeighborSets restrict_to(const NeighborSets& global, std::span<const std::size_t> members, std::size_t cap) {
  std::vector<std::size_t> local_of(global.size(), global.size());
  for (std::size_t m = 0; m < members.size(); ++m) local_of[members[m]] = m;
  NeighborSets out;
  out.lists.resize(members.size());
  for (std::size_t m = 0; m < members.size(); ++m) {
    out.image_ids.push_back(global.image_ids[members[m]]);
    for (std::size_t j : global.of(members[m])) {
      if (local_of[j] != global.size() && out.lists[m].size() < cap) out.lists[m].push_back(local_of[j]);
    }
  }
  return out;
}

StageOneResult stage_one_part(const CollectionData& data, const BudgetPlan& plan, std::size_t part,
                              const TwoStageOptions& options, const NeighborSets* global_neighbors,
                              std::size_t workers) {
  const auto& members = plan.members.at(part);
  if (members.size() < 2) {
    throw Error(ErrorCode::PartTooSmall, "part " + std::to_string(part) + " has " + std::to_string(members.size()) +
                                             " image(s); at least 2 are needed");
  }
  const std::size_t cap = std::min(plan.neighbor_cap, members.size() - 1);

  NeighborSets neighbors;
  if (global_neighbors != nullptr) {
    neighbors = restrict_to(*global_neighbors, members, cap);
  } else {
    std::vector<GlobalDescriptor> globals;
    for (std::size_t i : members) globals.push_back(data.globals[i]);
    neighbors = prefilter_neighbors(globals, cap);
  }

  std::vector<DescriptorSet> regions;
  std::vector<std::vector<std::size_t>> labels;
  for (std::size_t i : members) {
    regions.push_back(data.regions[i]);
    labels.push_back(data.group_labels[i]);
  }
  const ScoreStore store = score_all(neighbors, regions, static_cast<std::size_t>(plan.k1), workers);
  const DiscoveryProblem problem(std::move(neighbors), std::move(labels), store);

  DiscoveryConfig config = options.stage1;
  config.mode = DiscoveryMode::Proxy;
  if (config.nu == 0) config.nu = static_cast<std::size_t>(plan.k2);
  config.workers = workers;
  const DiscoverySolution solution = run(problem, config);

  StageOneResult result;
  result.shortlists.resize(data.size());
  for (std::size_t m = 0; m < members.size(); ++m) result.shortlists[members[m]] = solution.selected(m);
  result.part_entries.assign(plan.parts, 0);
  result.part_entries[part] = store.entry_count();
  return result;
}

void check_data(const CollectionData& data, const BudgetPlan& plan) {
  if (data.regions.size() != data.size() || data.group_labels.size() != data.size()) {
    throw Error(ErrorCode::InvalidArgument, "collection data arrays have different lengths");
  }
  if (plan.part_of.size() != data.size()) {
    throw Error(ErrorCode::InvalidArgument, "budget plan was made for " + std::to_string(plan.part_of.size()) +
                                                " images, collection has " + std::to_string(data.size()));
  }
}

}  // namespace

BudgetPlan plan_budget(std::size_t n, std::size_t k, std::size_t neighbor_cap, std::uint64_t memory_limit,
                       std::uint64_t seed) {
  if (k < 1 || n < k) {
    throw Error(ErrorCode::InvalidArgument, "need 1 <= k <= n, got k = " + std::to_string(k) + ", n = " + std::to_string(n));
  }
  if (neighbor_cap < 1) throw Error(ErrorCode::InvalidArgument, "neighbour cap must be at least 1");

  BudgetPlan plan;
  plan.memory_limit = memory_limit;
  plan.parts = k;
  plan.neighbor_cap = neighbor_cap;
  plan.seed = seed;
  const std::uint64_t base = n / k;
  plan.k1 = memory_limit / (static_cast<std::uint64_t>(neighbor_cap) * base);
  plan.k2 = memory_limit / (static_cast<std::uint64_t>(n) * neighbor_cap);
  if (plan.k2 == 0) {
    throw Error(ErrorCode::ZeroBudget, "memory limit " + std::to_string(memory_limit) + " is below n * N = " +
                                           std::to_string(static_cast<std::uint64_t>(n) * neighbor_cap));
  }

  std::uint64_t state = seed;
  const auto shuffled = sweep_order(n, state);
  plan.part_of.assign(n, 0);
  plan.members.assign(k, {});
  const std::size_t larger = n % k;  // the first `larger` parts get one extra image
  std::size_t cursor = 0;
  for (std::size_t part = 0; part < k; ++part) {
    const std::size_t size = base + (part < larger ? 1 : 0);
    for (std::size_t t = 0; t < size; ++t) {
      const std::size_t image = shuffled[cursor++];
      plan.part_of[image] = part;
      plan.members[part].push_back(image);
    }
    std::sort(plan.members[part].begin(), plan.members[part].end());
  }
  return plan;
}

std::vector<std::string> CollectionData::image_ids() const {
  std::vector<std::string> ids;
  for (const auto& g : globals) ids.push_back(g.image_id);
  return ids;
}

DiscoveryProblem TwoStageResult::stage2_problem() const {
  return DiscoveryProblem(stage2_neighbors, stage2_labels, stage2_scores);
}

StageOneResult run_stage_one_part(const CollectionData& data, const BudgetPlan& plan, std::size_t part,
                                  const TwoStageOptions& options) {
  check_data(data, plan);
  std::optional<NeighborSets> global;
  if (options.global_prefilter) global = prefilter_neighbors(data.globals, plan.neighbor_cap);
  return stage_one_part(data, plan, part, options, global ? &*global : nullptr, std::max<std::size_t>(1, options.workers));
}

StageOneResult run_stage_one(const CollectionData& data, const BudgetPlan& plan, const TwoStageOptions& options) {
  check_data(data, plan);
  std::optional<NeighborSets> global;
  if (options.global_prefilter) global = prefilter_neighbors(data.globals, plan.neighbor_cap);

  std::vector<StageOneResult> parts(plan.parts);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    try {
      for (std::size_t p = next++; p < plan.parts; p = next++) {
        parts[p] = stage_one_part(data, plan, p, options, global ? &*global : nullptr, 1);
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = plan.parts;
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(options.workers, 1, plan.parts);
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);

  StageOneResult merged;
  merged.shortlists.resize(data.size());
  merged.part_entries.assign(plan.parts, 0);
  for (std::size_t p = 0; p < plan.parts; ++p) {
    for (std::size_t i : plan.members[p]) merged.shortlists[i] = std::move(parts[p].shortlists[i]);
    merged.part_entries[p] = parts[p].part_entries[p];
  }
  return merged;
}

TwoStageResult run_stage_two(const CollectionData& data, const BudgetPlan& plan, StageOneResult stage1,
                             const TwoStageOptions& options) {
  check_data(data, plan);
  if (stage1.shortlists.size() != data.size()) {
    throw Error(ErrorCode::InvalidArgument, "stage-one shortlists do not cover the collection");
  }
  TwoStageResult result;
  std::vector<DescriptorSet> regions;
  for (std::size_t i = 0; i < data.size(); ++i) {
    regions.push_back(select_rows(data.regions[i], stage1.shortlists[i]));
    std::vector<std::size_t> labels;
    for (std::size_t k : stage1.shortlists[i]) labels.push_back(data.group_labels[i].at(k));
    result.stage2_labels.push_back(std::move(labels));
  }
  result.stage1 = std::move(stage1);
  result.stage2_neighbors =
      prefilter_neighbors(data.globals, std::min(plan.neighbor_cap, data.size() > 0 ? data.size() - 1 : 0));
  result.stage2_scores = score_all(result.stage2_neighbors, regions, static_cast<std::size_t>(plan.k2),
                                   std::max<std::size_t>(1, options.workers));
  result.stage2_entries = result.stage2_scores.entry_count();

  DiscoveryConfig config = options.stage2;
  config.workers = std::max<std::size_t>(1, options.workers);
  result.solution = run(result.stage2_problem(), config);
  return result;
}

TwoStageResult run_two_stage(const CollectionData& data, const BudgetPlan& plan, const TwoStageOptions& options) {
  return run_stage_two(data, plan, run_stage_one(data, plan, options), options);
}

}  // namespace rosd
