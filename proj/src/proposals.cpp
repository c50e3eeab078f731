#include "rosd/proposals.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <tuple>

#include "json.hpp"
#include "rosd/errors.hpp"

namespace rosd {
namespace {

// 4-connected component of {s_y >= threshold, unmasked} that contains the seed.
GridBox grow_component(const SaliencyMap& local, const std::vector<char>& masked, std::size_t seed, double threshold,
                       std::vector<char>& visited, std::vector<std::size_t>& stack) {
  const std::size_t w = local.width;
  std::fill(visited.begin(), visited.end(), 0);
  stack.clear();
  stack.push_back(seed);
  visited[seed] = 1;
  GridBox box{seed / w, seed % w, seed / w, seed % w};
  while (!stack.empty()) {
    const std::size_t p = stack.back();
    stack.pop_back();
    const std::size_t r = p / w;
    const std::size_t c = p % w;
    box.row_min = std::min(box.row_min, r);
    box.row_max = std::max(box.row_max, r);
    box.col_min = std::min(box.col_min, c);
    box.col_max = std::max(box.col_max, c);
    auto visit = [&](std::size_t q) {
      if (!visited[q] && !masked[q] && local.scores[q] >= threshold) {
        visited[q] = 1;
        stack.push_back(q);
      }
    };
    if (r > 0) visit(p - w);
    if (r + 1 < local.height) visit(p + w);
    if (c > 0) visit(p - 1);
    if (c + 1 < w) visit(p + 1);
  }
  return box;
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

std::vector<std::size_t> ProposalSet::group_labels() const {
  std::vector<std::size_t> labels;
  labels.reserve(proposals.size());
  for (const auto& p : proposals) labels.push_back(p.group_id);
  return labels;
}

Box map_grid_box_to_image(const GridBox& g, std::size_t grid_height, std::size_t grid_width, ImageSize image) {
  // Cell c spans [c * W_img / W, (c + 1) * W_img / W); integer floor/ceil keep it exact.
  const std::size_t x0 = g.col_min * image.width / grid_width;
  const std::size_t y0 = g.row_min * image.height / grid_height;
  const std::size_t x1 = ((g.col_max + 1) * image.width + grid_width - 1) / grid_width;
  const std::size_t y1 = ((g.row_max + 1) * image.height + grid_height - 1) / grid_height;
  return clamp_to_image(Box{static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x1),
                            static_cast<double>(y1)},
                        image);
}

GridBox map_image_box_to_grid(const Box& box, std::size_t grid_height, std::size_t grid_width, ImageSize image) {
  const Box b = clamp_to_image(box, image);
  const double sx = static_cast<double>(grid_width) / static_cast<double>(image.width);
  const double sy = static_cast<double>(grid_height) / static_cast<double>(image.height);
  // A tiny slack absorbs rounding when the box sits exactly on cell edges.
  constexpr double eps = 1e-9;
  auto axis = [eps](double lo, double hi, double scale, std::size_t cells) {
    const double a = std::ceil(lo * scale - eps);
    const double b = std::floor(hi * scale + eps);  // exclusive
    std::size_t first;
    std::size_t last;
    if (b > a) {
      first = static_cast<std::size_t>(std::max(0.0, a));
      last = static_cast<std::size_t>(std::max(0.0, b)) - 1;
    } else {
      const double centre = 0.5 * (lo + hi) * scale;
      first = last = static_cast<std::size_t>(std::max(0.0, std::floor(centre)));
    }
    first = std::min(first, cells - 1);
    last = std::clamp(last, first, cells - 1);
    return std::pair{first, last};
  };
  const auto [c0, c1] = axis(b.xmin, b.xmax, sx, grid_width);
  const auto [r0, r1] = axis(b.ymin, b.ymax, sy, grid_height);
  return GridBox{r0, c0, r1, c1};
}

ProposalSet generate_for_layer(const FeatureTensor& tensor, const ProposalParams& params, ImageSize image,
                               std::string image_id) {
  if (params.alpha < 0.0 || params.alpha > 1.0 || params.beta < 0.0 || params.beta > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "alpha and beta must lie in [0, 1]");
  }
  if (params.max_maxima < 1 || params.threshold_count < 1) {
    throw Error(ErrorCode::InvalidArgument, "max_maxima and threshold_count must be at least 1");
  }
  if (image.width == 0 || image.height == 0) throw Error(ErrorCode::InvalidArgument, "image size must be positive");
  if (tensor.cells() == 1) {
    throw Error(ErrorCode::DegenerateTensor, "layer " + tensor.layer_tag + " of " + image_id + " has a 1x1 grid");
  }

  ProposalSet out;
  out.image_id = std::move(image_id);
  out.group_count[tensor.layer_tag] = 0;

  const SaliencyMap global = global_saliency(tensor);
  const double floor = params.alpha * global.max();
  std::vector<LocalMaximum> maxima;
  try {
    maxima = select_maxima(compute_persistence(global, floor), params.max_maxima);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptyAfterFloor) throw;
    out.empty_after_floor = true;
    return out;
  }

  const std::size_t cells = tensor.cells();
  double global_mean = 0.0;
  std::size_t retained = 0;
  std::vector<char> in_scope(cells, 1);
  if (params.mean_scope == MeanScope::RetainedLocations) {
    for (std::size_t p = 0; p < cells; ++p) in_scope[p] = global.scores[p] >= floor;
  }
  for (std::size_t p = 0; p < cells; ++p) {
    if (in_scope[p]) {
      global_mean += global.scores[p];
      ++retained;
    }
  }
  global_mean /= static_cast<double>(retained);

  std::vector<char> masked(cells);
  std::vector<char> visited(cells);
  std::vector<std::size_t> stack;
  const std::size_t v = params.threshold_count;

  for (const LocalMaximum& maximum : maxima) {
    SaliencyMap local;
    try {
      local = local_saliency(tensor, maximum);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ZeroNormAtMaximum) throw;
      ++out.skipped_maxima;
      continue;
    }

    double local_mean = 0.0;
    for (std::size_t p = 0; p < cells; ++p) {
      if (in_scope[p]) local_mean += local.scores[p];
    }
    local_mean /= static_cast<double>(retained);

    const std::size_t seed = maximum.row * tensor.width + maximum.col;
    double lo = local.scores[seed];
    double hi = local.scores[seed];
    for (std::size_t p = 0; p < cells; ++p) {
      const bool weak_local = local.scores[p] < local_mean;
      const bool weak_global = global.scores[p] < params.beta * global_mean;
      masked[p] = params.mask_rule == MaskRule::Conjunction ? (weak_local && weak_global) : (weak_local || weak_global);
      if (p == seed) masked[p] = 0;
      if (!masked[p]) {
        lo = std::min(lo, local.scores[p]);
        hi = std::max(hi, local.scores[p]);
      }
    }

    const std::size_t group_id = out.groups.size();
    out.groups.push_back({tensor.layer_tag, maximum.row, maximum.col, maximum.persistence});
    std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> seen;
    for (std::size_t k = 0; k < v; ++k) {
      const double threshold =
          (v == 1) ? lo : (k + 1 == v ? hi : lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(v - 1));
      const GridBox g = grow_component(local, masked, seed, threshold, visited, stack);
      if (!seen.insert({g.row_min, g.col_min, g.row_max, g.col_max}).second) continue;
      out.proposals.push_back({map_grid_box_to_image(g, tensor.height, tensor.width, image), group_id,
                               tensor.layer_tag, k});
    }
  }
  out.group_count[tensor.layer_tag] = out.groups.size();
  return out;
}

ProposalSet fuse_layers(std::span<const ProposalSet> sets) {
  ProposalSet out;
  if (sets.empty()) return out;
  out.image_id = sets.front().image_id;
  for (const auto& set : sets) {
    if (set.image_id != out.image_id) {
      throw Error(ErrorCode::MixedImageIds, "cannot fuse proposals of '" + out.image_id + "' and '" + set.image_id + "'");
    }
    const std::size_t offset = out.groups.size();
    out.groups.insert(out.groups.end(), set.groups.begin(), set.groups.end());
    for (const auto& p : set.proposals) {
      Proposal shifted = p;
      shifted.group_id += offset;
      out.proposals.push_back(std::move(shifted));
    }
    for (const auto& [layer, count] : set.group_count) out.group_count[layer] += count;
    out.empty_after_floor = out.empty_after_floor || set.empty_after_floor;
    out.skipped_maxima += set.skipped_maxima;
  }
  return out;
}

std::string proposals_to_jsonl_line(const ProposalSet& set) {
  using nlohmann::json;
  std::string line = "{\"image_id\":" + json(set.image_id).dump();
  line += ",\"empty_after_floor\":";
  line += set.empty_after_floor ? "true" : "false";
  line += ",\"skipped_maxima\":" + std::to_string(set.skipped_maxima);
  line += ",\"group_count\":" + json(set.group_count).dump();
  line += ",\"groups\":[";
  for (std::size_t g = 0; g < set.groups.size(); ++g) {
    const auto& group = set.groups[g];
    if (g) line += ",";
    line += "{\"layer\":" + json(group.layer_tag).dump() + ",\"row\":" + std::to_string(group.row) +
            ",\"col\":" + std::to_string(group.col) + ",\"persistence\":" + fixed2(group.persistence) + "}";
  }
  line += "],\"proposals\":[";
  for (std::size_t i = 0; i < set.proposals.size(); ++i) {
    const auto& p = set.proposals[i];
    if (i) line += ",";
    line += "{\"box\":[" + fixed2(p.box.xmin) + "," + fixed2(p.box.ymin) + "," + fixed2(p.box.xmax) + "," +
            fixed2(p.box.ymax) + "],\"group\":" + std::to_string(p.group_id) +
            ",\"layer\":" + json(p.layer_tag).dump() + ",\"threshold\":" + std::to_string(p.threshold_index) + "}";
  }
  line += "]}";
  return line;
}

ProposalSet proposals_from_jsonl_line(std::string_view line) {
  using nlohmann::json;
  ProposalSet set;
  try {
    const json doc = json::parse(line);
    set.image_id = doc.at("image_id").get<std::string>();
    set.empty_after_floor = doc.value("empty_after_floor", false);
    set.skipped_maxima = doc.value("skipped_maxima", std::size_t{0});
    set.group_count = doc.at("group_count").get<std::map<std::string, std::size_t>>();
    for (const auto& g : doc.at("groups")) {
      set.groups.push_back({g.at("layer").get<std::string>(), g.at("row").get<std::size_t>(),
                            g.at("col").get<std::size_t>(), g.at("persistence").get<double>()});
    }
    for (const auto& p : doc.at("proposals")) {
      const auto& b = p.at("box");
      Proposal proposal;
      proposal.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
      proposal.group_id = p.at("group").get<std::size_t>();
      proposal.layer_tag = p.at("layer").get<std::string>();
      proposal.threshold_index = p.at("threshold").get<std::size_t>();
      if (proposal.group_id >= set.groups.size()) {
        throw Error(ErrorCode::ParseError, "proposal group " + std::to_string(proposal.group_id) + " out of range");
      }
      set.proposals.push_back(std::move(proposal));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("proposal line: ") + e.what());
  }
  return set;
}

}  // namespace rosd
