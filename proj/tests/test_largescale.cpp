#include <algorithm>

#include "doctest.h"
#include "rosd/errors.hpp"
#include "rosd/evaluation.hpp"
#include "rosd/largescale.hpp"

using namespace rosd;

namespace {

CollectionData collection(std::size_t images, std::uint64_t seed) {
  SyntheticOptions options;
  options.n_images = images;
  options.classes = 3;
  options.seed = seed;
  const SyntheticDataset data = generate_synthetic(options);
  CollectionData out;
  for (const auto& image : data.images) {
    const std::vector<ProposalSet> layers{generate_for_layer(image.fine, {}, image.size, image.image_id),
                                          generate_for_layer(image.coarse, {}, image.size, image.image_id)};
    const ProposalSet fused = fuse_layers(layers);
    out.globals.push_back(image.descriptor);
    out.regions.push_back(describe_proposals(image.coarse, fused, image.size));
    out.group_labels.push_back(fused.group_labels());
  }
  return out;
}

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("budgets of the three published collection sizes") {
  const BudgetPlan voc = plan_budget(3550, 5, 50, 8875000, 1);
  CHECK(voc.k1 == 250);
  CHECK(voc.k2 == 50);
  const BudgetPlan voc12 = plan_budget(7838, 10, 50, 7838ULL * 50 * 50, 1);
  CHECK(voc12.k1 >= 499);
  CHECK(voc12.k1 <= 501);
  CHECK(voc12.k2 == 50);
  const BudgetPlan coco = plan_budget(19817, 20, 50, 49542500, 1);
  CHECK(coco.k1 >= 999);
  CHECK(coco.k1 <= 1001);
  CHECK(coco.k2 == 50);
}

TEST_CASE("a single part degenerates to the baseline budget") {
  const BudgetPlan plan = plan_budget(97, 1, 10, 97ULL * 10 * 30, 5);
  CHECK(plan.k1 == plan.k2);
  CHECK(plan.members.size() == 1);
  CHECK(plan.members[0].size() == 97);
}

TEST_CASE("the partition is a seeded bijection onto balanced parts") {
  for (std::size_t n : {10, 11, 37, 100}) {
    for (std::size_t k : {1, 2, 3, 7}) {
      const BudgetPlan a = plan_budget(n, k, 5, 1000000, 17);
      const BudgetPlan b = plan_budget(n, k, 5, 1000000, 17);
      CHECK(a.members == b.members);
      std::vector<std::size_t> seen;
      for (std::size_t p = 0; p < k; ++p) {
        CHECK((a.members[p].size() == n / k || a.members[p].size() == (n + k - 1) / k));
        CHECK(std::is_sorted(a.members[p].begin(), a.members[p].end()));
        for (std::size_t i : a.members[p]) {
          CHECK(a.part_of[i] == p);
          seen.push_back(i);
        }
      }
      std::sort(seen.begin(), seen.end());
      for (std::size_t i = 0; i < n; ++i) CHECK(seen[i] == i);
    }
  }
  CHECK(plan_budget(60, 3, 5, 100000, 1).members != plan_budget(60, 3, 5, 100000, 2).members);
}

TEST_CASE("budget errors") {
  CHECK(code_of([] { plan_budget(100, 5, 50, 4999, 1); }) == ErrorCode::ZeroBudget);
  CHECK(code_of([] { plan_budget(3, 5, 50, 1000000, 1); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { plan_budget(10, 0, 50, 1000000, 1); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("two-stage run respects the budget and keeps group labels") {
  const CollectionData data = collection(30, 4);
  const std::size_t cap = 10;
  const std::uint64_t memory = 30ULL * cap * 20;  // K2 = 20
  const BudgetPlan plan = plan_budget(30, 3, cap, memory, 9);
  CHECK(plan.k2 == 20);
  CHECK(plan.k1 == 60);

  TwoStageOptions options;
  options.stage1.mode = DiscoveryMode::Proxy;
  options.stage1.nu = 0;
  options.stage1.seed = 1;
  options.stage2.seed = 2;
  options.workers = 3;
  const TwoStageResult result = run_two_stage(data, plan, options);

  for (std::size_t p = 0; p < plan.parts; ++p) {
    CHECK(result.stage1.part_entries[p] <= cap * (30 / 3) * plan.k1);
    CHECK(result.stage1.part_entries[p] <= memory);
  }
  CHECK(result.stage2_entries <= 30 * cap * plan.k2);
  CHECK(result.stage2_entries <= memory);

  for (std::size_t i = 0; i < 30; ++i) {
    const auto& shortlist = result.stage1.shortlists[i];
    CHECK(shortlist.size() <= plan.k2);
    CHECK(!shortlist.empty());
    CHECK(std::is_sorted(shortlist.begin(), shortlist.end()));
    REQUIRE(result.stage2_labels[i].size() == shortlist.size());
    for (std::size_t local = 0; local < shortlist.size(); ++local) {
      CHECK(result.stage2_labels[i][local] == data.group_labels[i][shortlist[local]]);
      CHECK(result.original_index(i, local) == shortlist[local]);
    }
    // Stage-1 neighbours live inside the part, stage-2 neighbours span the collection.
    const auto sel = result.solution.selected(i);
    CHECK(sel.size() <= options.stage2.nu);
  }
  const DiscoveryProblem stage2 = result.stage2_problem();
  CHECK(stage2.image_count() == 30);
}

TEST_CASE("two-stage output does not depend on the worker count") {
  const CollectionData data = collection(24, 6);
  const BudgetPlan plan = plan_budget(24, 4, 8, 24ULL * 8 * 15, 3);
  TwoStageOptions options;
  options.stage1.mode = DiscoveryMode::Proxy;
  options.stage1.seed = 5;
  options.stage2.seed = 6;
  options.workers = 1;
  const TwoStageResult a = run_two_stage(data, plan, options);
  options.workers = 4;
  const TwoStageResult b = run_two_stage(data, plan, options);
  CHECK(a.stage1.shortlists == b.stage1.shortlists);
  CHECK(a.solution.assignment == b.solution.assignment);

  // Running the parts one at a time gives the same shortlists.
  for (std::size_t p = 0; p < plan.parts; ++p) {
    const StageOneResult part = run_stage_one_part(data, plan, p, options);
    for (std::size_t i : plan.members[p]) CHECK(part.shortlists[i] == a.stage1.shortlists[i]);
    CHECK(part.part_entries[p] == a.stage1.part_entries[p]);
  }
}

TEST_CASE("global prefiltering restricts collection neighbours to the part") {
  const CollectionData data = collection(18, 8);
  const BudgetPlan plan = plan_budget(18, 3, 6, 18ULL * 6 * 10, 4);
  TwoStageOptions options;
  options.stage1.mode = DiscoveryMode::Proxy;
  options.global_prefilter = true;
  const TwoStageResult result = run_two_stage(data, plan, options);
  for (std::size_t i = 0; i < 18; ++i) CHECK(!result.stage1.shortlists[i].empty());
}

TEST_CASE("a part with a single image is too small") {
  const CollectionData data = collection(5, 2);
  const BudgetPlan plan = plan_budget(5, 5, 4, 5ULL * 4 * 10, 1);
  TwoStageOptions options;
  CHECK(code_of([&] { run_two_stage(data, plan, options); }) == ErrorCode::PartTooSmall);
}
