#include "rosd/discovery.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "rosd/errors.hpp"

namespace rosd {

DiscoveryProblem::DiscoveryProblem(NeighborSets neighbors, std::vector<std::vector<std::size_t>> group_labels,
                                   const ScoreStore& scores)
    : neighbors_(std::move(neighbors)), labels_(std::move(group_labels)), scores_(&scores) {
  const std::size_t n = neighbors_.size();
  if (labels_.size() != n) {
    throw Error(ErrorCode::InvalidArgument, "group labels given for " + std::to_string(labels_.size()) +
                                                " images, neighbour sets for " + std::to_string(n));
  }
  if (neighbors_.image_ids.size() != n) neighbors_.image_ids.resize(n);

  linked_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : neighbors_.lists[i]) {
      if (j == i || j >= n) throw Error(ErrorCode::InvalidArgument, "invalid neighbour of image " + image_id(i));
      linked_[i].push_back(j);
      linked_[j].push_back(i);
    }
  }
  for (auto& l : linked_) {
    std::sort(l.begin(), l.end());
    l.erase(std::unique(l.begin(), l.end()), l.end());
  }

  groups_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::map<std::size_t, std::vector<std::size_t>> by_label;
    for (std::size_t k = 0; k < labels_[i].size(); ++k) by_label[labels_[i][k]].push_back(k);
    for (auto& [label, members] : by_label) groups_[i].push_back(std::move(members));
  }
}

std::size_t DiscoveryProblem::max_proposal_count() const {
  std::size_t best = 0;
  for (const auto& l : labels_) best = std::max(best, l.size());
  return best;
}

Assignment Assignment::initial(const DiscoveryProblem& problem) {
  Assignment a;
  const std::size_t n = problem.image_count();
  a.x.resize(n);
  a.e.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    a.x[i].assign(problem.proposal_count(i), 1);
    a.e[i] = problem.neighbors(i);
  }
  return a;
}

std::vector<std::size_t> Assignment::selected(std::size_t i) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < x[i].size(); ++k) {
    if (x[i][k]) out.push_back(k);
  }
  return out;
}

void Assignment::select(std::size_t i, std::span<const std::size_t> regions) {
  std::fill(x[i].begin(), x[i].end(), 0);
  for (std::size_t k : regions) x[i][k] = 1;
}

bool Assignment::has_edge(std::size_t i, std::size_t j) const {
  return std::find(e[i].begin(), e[i].end(), j) != e[i].end();
}

double pair_score(const DiscoveryProblem& problem, const Assignment& a, std::size_t i, std::size_t j) {
  double total = 0.0;
  const auto& xi = a.x[i];
  const auto& xj = a.x[j];
  problem.scores().for_each(i, j, [&](std::uint32_t k, std::uint32_t l, float s) {
    if (xi[k] && xj[l]) total += s;
  });
  return total;
}

double objective(const DiscoveryProblem& problem, const Assignment& a) {
  double total = 0.0;
  for (std::size_t i = 0; i < problem.image_count(); ++i) {
    for (std::size_t j : a.e[i]) total += pair_score(problem, a, i, j);
  }
  return total;
}

std::vector<double> region_scores(const DiscoveryProblem& problem, const Assignment& a, std::size_t i) {
  std::vector<double> r(problem.proposal_count(i), 0.0);
  for (std::size_t j : problem.linked(i)) {
    const int weight = static_cast<int>(a.has_edge(i, j)) + static_cast<int>(a.has_edge(j, i));
    if (weight == 0) continue;
    const auto& xj = a.x[j];
    problem.scores().for_each(i, j, [&](std::uint32_t k, std::uint32_t l, float s) {
      if (xj[l]) r[k] += weight * static_cast<double>(s);
    });
  }
  return r;
}

std::vector<std::size_t> update_regions(const DiscoveryProblem& problem, const Assignment& a, std::size_t i,
                                        const DiscoveryConfig& config) {
  const std::vector<double> r = region_scores(problem, a, i);
  auto better = [&](std::size_t p, std::size_t q) { return r[p] > r[q] || (r[p] == r[q] && p < q); };

  std::vector<std::size_t> candidates;
  if (config.use_groups) {
    for (const auto& members : problem.groups(i)) {
      candidates.push_back(*std::min_element(members.begin(), members.end(), better));
    }
  } else {
    candidates.resize(problem.proposal_count(i));
    for (std::size_t k = 0; k < candidates.size(); ++k) candidates[k] = k;
  }
  const std::size_t keep = std::min(config.nu, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                    better);
  candidates.resize(keep);
  std::sort(candidates.begin(), candidates.end());
  return candidates;
}

std::vector<std::size_t> update_edges(const DiscoveryProblem& problem, const Assignment& a, std::size_t i,
                                      const DiscoveryConfig& config) {
  std::vector<std::size_t> candidates = problem.neighbors(i);
  std::vector<double> score(problem.image_count(), 0.0);
  for (std::size_t j : candidates) score[j] = pair_score(problem, a, i, j);
  const std::size_t keep = std::min(config.tau, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                    [&](std::size_t p, std::size_t q) {
                      if (score[p] != score[q]) return score[p] > score[q];
                      return problem.image_id(p) < problem.image_id(q);
                    });
  candidates.resize(keep);
  return candidates;
}

void validate(const DiscoveryProblem&, const DiscoveryConfig& config) {
  if (config.nu < 1 || config.tau < 1) throw Error(ErrorCode::InvalidArgument, "nu and tau must be at least 1");
  if (config.max_sweeps < 1) throw Error(ErrorCode::InvalidArgument, "max_sweeps must be at least 1");
}

std::vector<std::size_t> sweep_order(std::size_t n, std::uint64_t& state) {
  std::mt19937_64 rng(state);
  std::vector<std::size_t> order(n);
  for (std::size_t k = 0; k < n; ++k) order[k] = k;
  // Explicit Fisher-Yates: std::shuffle is not specified bit-for-bit across
  // standard libraries.
  for (std::size_t k = n; k > 1; --k) {
    const std::size_t pick = static_cast<std::size_t>(rng() % k);
    std::swap(order[k - 1], order[pick]);
  }
  state = rng();
  return order;
}

DiscoverySolution run(const DiscoveryProblem& problem, const DiscoveryConfig& config) {
  validate(problem, config);
  const std::size_t n = problem.image_count();
  DiscoverySolution solution;
  Assignment& a = solution.assignment;
  a = Assignment::initial(problem);
  std::uint64_t state = config.seed;

  std::vector<std::vector<std::size_t>> next_edges(n);
  for (std::size_t sweep = 0; sweep < config.max_sweeps; ++sweep) {
    const Assignment before = a;
    for (std::size_t i : sweep_order(n, state)) {
      const auto chosen = update_regions(problem, a, i, config);
      a.select(i, chosen);
    }

    // Edge updates only read x, so images are independent here.
    const std::size_t threads = std::clamp<std::size_t>(config.workers, 1, std::max<std::size_t>(n, 1));
    if (threads <= 1) {
      for (std::size_t i = 0; i < n; ++i) next_edges[i] = update_edges(problem, a, i, config);
    } else {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
          for (std::size_t i = t; i < n; i += threads) next_edges[i] = update_edges(problem, a, i, config);
        });
      }
    }
    for (std::size_t i = 0; i < n; ++i) a.e[i] = next_edges[i];

    solution.objective_history.push_back(objective(problem, a));
    solution.sweeps_run = sweep + 1;
    if (a == before) {
      solution.converged = true;
      break;
    }
  }
  solution.objective = solution.objective_history.empty() ? 0.0 : solution.objective_history.back();
  return solution;
}

std::vector<RankedRegion> rank_regions(const DiscoveryProblem& problem, const DiscoverySolution& solution,
                                       std::size_t i) {
  const Assignment& a = solution.assignment;
  const std::size_t p = problem.proposal_count(i);
  std::vector<double> total(p, 0.0);
  std::vector<float> best(p);
  for (std::size_t j : problem.linked(i)) {
    if (!a.has_edge(i, j) && !a.has_edge(j, i)) continue;
    std::fill(best.begin(), best.end(), 0.0f);
    const auto& xi = a.x[i];
    const auto& xj = a.x[j];
    problem.scores().for_each(i, j, [&](std::uint32_t k, std::uint32_t l, float s) {
      if (xi[k] && xj[l]) best[k] = std::max(best[k], s);
    });
    for (std::size_t k = 0; k < p; ++k) total[k] += best[k];
  }
  std::vector<RankedRegion> ranked;
  for (std::size_t k : a.selected(i)) ranked.push_back({k, total[k]});
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedRegion& u, const RankedRegion& v) { return u.rank_score > v.rank_score; });
  return ranked;
}

std::size_t postprocess_single(const DiscoveryProblem& problem, const DiscoverySolution& solution, std::size_t i) {
  const auto ranked = rank_regions(problem, solution, i);
  if (ranked.empty()) throw Error(ErrorCode::EmptySelection, "no retained regions in image " + problem.image_id(i));
  return ranked.front().proposal_index;
}

Box postprocess_single(const DiscoveryProblem& problem, const DiscoverySolution& solution, std::size_t i,
                       const ProposalSet& proposals) {
  return proposals.proposals.at(postprocess_single(problem, solution, i)).box;
}

std::vector<std::size_t> postprocess_multi(const DiscoveryProblem& problem, const DiscoverySolution& solution,
                                           std::size_t i, const ProposalSet& proposals, double nms_iou,
                                           std::size_t max_regions) {
  if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw Error(ErrorCode::InvalidArgument, "nms_iou must lie in (0, 1]");
  if (max_regions < 1) throw Error(ErrorCode::InvalidArgument, "max_regions must be at least 1");
  const auto ranked = rank_regions(problem, solution, i);
  if (ranked.empty()) throw Error(ErrorCode::EmptySelection, "no retained regions in image " + problem.image_id(i));

  std::vector<std::size_t> kept;
  for (const auto& region : ranked) {
    if (kept.size() >= max_regions) break;
    const Box& box = proposals.proposals.at(region.proposal_index).box;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return iou(proposals.proposals[k].box, box) > nms_iou;
    });
    if (!suppressed) kept.push_back(region.proposal_index);
  }
  return kept;
}

std::vector<SolutionRecord> make_records(const DiscoveryProblem& problem, const DiscoverySolution& solution) {
  std::vector<SolutionRecord> records;
  for (std::size_t i = 0; i < problem.image_count(); ++i) {
    SolutionRecord r;
    r.image_id = problem.image_id(i);
    r.selected = solution.selected(i);
    for (std::size_t j : solution.edges(i)) r.neighbors.push_back(problem.image_id(j));
    const auto ranked = rank_regions(problem, solution, i);
    for (std::size_t k : r.selected) {
      auto it = std::find_if(ranked.begin(), ranked.end(),
                             [k](const RankedRegion& rr) { return rr.proposal_index == k; });
      r.rank_scores.push_back(it->rank_score);
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::string records_to_jsonl(std::span<const SolutionRecord> records) {
  using nlohmann::json;
  std::string out;
  for (const auto& r : records) {
    json line;
    line["image_id"] = r.image_id;
    line["selected"] = r.selected;
    line["neighbors"] = r.neighbors;
    line["rank_scores"] = r.rank_scores;
    if (!r.boxes.empty()) {
      json boxes = json::array();
      for (const auto& b : r.boxes) boxes.push_back({b.xmin, b.ymin, b.xmax, b.ymax});
      line["boxes"] = std::move(boxes);
    }
    out += line.dump();
    out += '\n';
  }
  return out;
}

std::vector<SolutionRecord> records_from_jsonl(std::string_view text) {
  using nlohmann::json;
  std::vector<SolutionRecord> records;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json doc = json::parse(line);
      if (doc.contains("header")) continue;
      SolutionRecord r;
      r.image_id = doc.at("image_id").get<std::string>();
      r.selected = doc.at("selected").get<std::vector<std::size_t>>();
      r.neighbors = doc.at("neighbors").get<std::vector<std::string>>();
      r.rank_scores = doc.value("rank_scores", std::vector<double>{});
      if (auto it = doc.find("boxes"); it != doc.end()) {
        for (const auto& b : *it) {
          r.boxes.push_back(Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                                b.at(3).get<double>()});
        }
      }
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::ParseError, "solution line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

}  // namespace rosd
