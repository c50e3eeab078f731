#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rosd/box.hpp"
#include "rosd/matching.hpp"
#include "rosd/proposals.hpp"

namespace rosd {

// Standard: nu is the number of objects sought. Proxy: nu is large and the
// selections are read as shortlists of promising regions. Same algorithm.
enum class DiscoveryMode { Standard, Proxy };

struct DiscoveryConfig {
  std::size_t nu = 5;    // max selected regions per image
  std::size_t tau = 10;  // max out-edges per image
  bool use_groups = true;
  std::size_t max_sweeps = 50;
  std::uint64_t seed = 0;
  DiscoveryMode mode = DiscoveryMode::Standard;
  std::size_t workers = 1;
};

/// Everything the solver reads: candidate neighbours, group labels of every
/// proposal, and the sparse score matrices.
class DiscoveryProblem {
 public:
  // group_labels[i][k] is the group of proposal k of image i; labels need not
  // be dense. The store must outlive the problem.
  DiscoveryProblem(NeighborSets neighbors, std::vector<std::vector<std::size_t>> group_labels,
                   const ScoreStore& scores);

  std::size_t image_count() const { return neighbors_.size(); }
  std::size_t proposal_count(std::size_t i) const { return labels_[i].size(); }
  std::size_t max_proposal_count() const;
  const std::string& image_id(std::size_t i) const { return neighbors_.image_ids[i]; }
  const NeighborSets& neighbor_sets() const { return neighbors_; }
  const std::vector<std::size_t>& neighbors(std::size_t i) const { return neighbors_.lists[i]; }
  // Images sharing a stored score matrix with i: N(i) plus every j with i in N(j).
  const std::vector<std::size_t>& linked(std::size_t i) const { return linked_[i]; }
  // Members of each group of image i, groups ordered by label.
  const std::vector<std::vector<std::size_t>>& groups(std::size_t i) const { return groups_[i]; }
  const std::vector<std::size_t>& group_labels(std::size_t i) const { return labels_[i]; }
  const ScoreStore& scores() const { return *scores_; }

 private:
  NeighborSets neighbors_;
  std::vector<std::vector<std::size_t>> labels_;
  std::vector<std::vector<std::vector<std::size_t>>> groups_;
  std::vector<std::vector<std::size_t>> linked_;
  const ScoreStore* scores_;
};

/// Region indicators x and out-edges e.
struct Assignment {
  std::vector<std::vector<std::uint8_t>> x;
  std::vector<std::vector<std::size_t>> e;  // ordered by decreasing edge score

  // x_i = all ones, e_i = N(i).
  static Assignment initial(const DiscoveryProblem& problem);

  std::vector<std::size_t> selected(std::size_t i) const;
  void select(std::size_t i, std::span<const std::size_t> regions);
  bool has_edge(std::size_t i, std::size_t j) const;

  friend bool operator==(const Assignment&, const Assignment&) = default;
};

struct DiscoverySolution {
  Assignment assignment;
  double objective = 0.0;
  std::size_t sweeps_run = 0;
  std::vector<double> objective_history;  // objective after each sweep
  bool converged = false;

  std::vector<std::size_t> selected(std::size_t i) const { return assignment.selected(i); }
  const std::vector<std::size_t>& edges(std::size_t i) const { return assignment.e[i]; }
};

struct RankedRegion {
  std::size_t proposal_index = 0;
  double rank_score = 0.0;
};

// x_i^T S_ij x_j over the stored sparse entries.
double pair_score(const DiscoveryProblem& problem, const Assignment& a, std::size_t i, std::size_t j);

// Sum over images and active out-edges of x_i^T S_ij x_j.
double objective(const DiscoveryProblem& problem, const Assignment& a);

// R = sum_j (e_ij S_ij + e_ji S_ji^T) x_j: the linear coefficient of x_i in
// the objective with everything else fixed.
std::vector<double> region_scores(const DiscoveryProblem& problem, const Assignment& a, std::size_t i);

// Best feasible x_i for fixed (x_-i, e): with groups, the best region of each
// group competes for the nu slots; without, plain top-nu. Ties favour the
// lower proposal index. Returns the chosen indices in ascending order.
std::vector<std::size_t> update_regions(const DiscoveryProblem& problem, const Assignment& a, std::size_t i,
                                        const DiscoveryConfig& config);

// The min(tau, |N(i)|) neighbours with the largest x_i^T S_ij x_j; ties favour
// the lexicographically smaller image id.
std::vector<std::size_t> update_edges(const DiscoveryProblem& problem, const Assignment& a, std::size_t i,
                                      const DiscoveryConfig& config);

void validate(const DiscoveryProblem& problem, const DiscoveryConfig& config);

// Block-coordinate ascent from the all-ones start. Each sweep updates the
// regions of every image in a fresh seeded random order, then all edges;
// stops at a fixed point or after max_sweeps.
DiscoverySolution run(const DiscoveryProblem& problem, const DiscoveryConfig& config);

// The Fisher-Yates permutation used for each sweep; exposed so the order is
// reproducible outside the solver.
std::vector<std::size_t> sweep_order(std::size_t n, std::uint64_t& state);

// Retained regions of image i ranked by the summed best match in each image
// linked to i by an active edge (either direction).
std::vector<RankedRegion> rank_regions(const DiscoveryProblem& problem, const DiscoverySolution& solution,
                                       std::size_t i);

// Index of the top-ranked retained region. Throws EmptySelection.
std::size_t postprocess_single(const DiscoveryProblem& problem, const DiscoverySolution& solution, std::size_t i);
Box postprocess_single(const DiscoveryProblem& problem, const DiscoverySolution& solution, std::size_t i,
                       const ProposalSet& proposals);

// Greedy NMS over the ranked retained regions; a region is dropped when its
// IoU with a kept one exceeds nms_iou. Returns up to max_regions indices.
std::vector<std::size_t> postprocess_multi(const DiscoveryProblem& problem, const DiscoverySolution& solution,
                                           std::size_t i, const ProposalSet& proposals, double nms_iou,
                                           std::size_t max_regions);

/// One image of a serialized solution.
struct SolutionRecord {
  std::string image_id;
  std::vector<std::size_t> selected;
  std::vector<std::string> neighbors;
  std::vector<double> rank_scores;  // aligned with `selected`
  std::vector<Box> boxes;           // final predictions, when post-processed
};

std::vector<SolutionRecord> make_records(const DiscoveryProblem& problem, const DiscoverySolution& solution);

// One JSON object per line. Deterministic for a given solution.
std::string records_to_jsonl(std::span<const SolutionRecord> records);
std::vector<SolutionRecord> records_from_jsonl(std::string_view text);

}  // namespace rosd
