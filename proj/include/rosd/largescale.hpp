#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rosd/discovery.hpp"
#include "rosd/matching.hpp"
#include "rosd/region_features.hpp"
#include "rosd/tensor_store.hpp"

namespace rosd {

/// Memory budget split for the two-stage run. Budgets count score entries.
struct BudgetPlan {
  std::uint64_t memory_limit = 0;  // M
  std::size_t parts = 1;           // k
  std::size_t neighbor_cap = 50;   // N
  std::uint64_t k1 = 0;            // per-part entries per matrix: M / (N * floor(n / k))
  std::uint64_t k2 = 0;            // whole-collection entries per matrix: M / (n * N)
  std::uint64_t seed = 0;
  std::vector<std::size_t> part_of;               // image -> part
  std::vector<std::vector<std::size_t>> members;  // part -> images, ascending
};

// Seeded uniform partition of n images into k parts of floor/ceil(n/k)
// images. Throws ZeroBudget when K2 would be 0.
BudgetPlan plan_budget(std::size_t n, std::size_t k, std::size_t neighbor_cap, std::uint64_t memory_limit,
                       std::uint64_t seed);

/// Per-image inputs of a collection-wide run.
struct CollectionData {
  std::vector<GlobalDescriptor> globals;
  std::vector<DescriptorSet> regions;                  // one row per proposal
  std::vector<std::vector<std::size_t>> group_labels;  // per proposal

  std::size_t size() const { return globals.size(); }
  std::vector<std::string> image_ids() const;
};

struct TwoStageOptions {
  DiscoveryConfig stage1;  // proxy run per part; nu == 0 means nu = K2
  DiscoveryConfig stage2;
  std::size_t workers = 1;
  // Prefilter stage-1 neighbours over the whole collection and restrict them
  // to the part, instead of prefiltering inside each part.
  bool global_prefilter = false;
};

struct StageOneResult {
  std::vector<std::vector<std::size_t>> shortlists;  // image -> retained original proposal indices
  std::vector<std::uint64_t> part_entries;           // stored score entries per part
};

struct TwoStageResult {
  StageOneResult stage1;
  NeighborSets stage2_neighbors;
  ScoreStore stage2_scores;
  std::vector<std::vector<std::size_t>> stage2_labels;
  DiscoverySolution solution;  // indices into the shortlists
  std::uint64_t stage2_entries = 0;

  // Problem view of stage 2; borrows stage2_scores.
  DiscoveryProblem stage2_problem() const;
  // Original proposal index of shortlisted region `local` of image i.
  std::size_t original_index(std::size_t i, std::size_t local) const { return stage1.shortlists[i][local]; }
};

// Proxy discovery inside one part; returns the retained regions of its
// images (original indices, ascending) and the part's stored entry count.
StageOneResult run_stage_one_part(const CollectionData& data, const BudgetPlan& plan, std::size_t part,
                                  const TwoStageOptions& options);
StageOneResult run_stage_one(const CollectionData& data, const BudgetPlan& plan, const TwoStageOptions& options);

// Whole-collection discovery over the shortlisted regions at budget K2.
TwoStageResult run_stage_two(const CollectionData& data, const BudgetPlan& plan, StageOneResult stage1,
                             const TwoStageOptions& options);

TwoStageResult run_two_stage(const CollectionData& data, const BudgetPlan& plan, const TwoStageOptions& options);

}  // namespace rosd
