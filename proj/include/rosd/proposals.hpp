#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rosd/box.hpp"
#include "rosd/saliency.hpp"
#include "rosd/tensor_store.hpp"

namespace rosd {

// How the two low-score conditions on a local saliency map combine.
enum class MaskRule {
  Conjunction,  // masked iff below the local mean AND globally weak
  Disjunction,  // masked iff below the local mean OR globally weak
};

// Locations over which mean(s_g) and mean(s_y) are taken.
enum class MeanScope { AllLocations, RetainedLocations };

struct ProposalParams {
  double alpha = 0.3;                // persistence floor, as a fraction of max(s_g)
  double beta = 0.5;                 // global-saliency mask, as a fraction of mean(s_g)
  std::size_t max_maxima = 20;       // u
  std::size_t threshold_count = 50;  // v
  MaskRule mask_rule = MaskRule::Conjunction;
  MeanScope mean_scope = MeanScope::AllLocations;
};

// Inclusive cell range on a feature grid.
struct GridBox {
  std::size_t row_min = 0;
  std::size_t col_min = 0;
  std::size_t row_max = 0;
  std::size_t col_max = 0;

  friend bool operator==(const GridBox&, const GridBox&) = default;
};

struct Proposal {
  Box box;
  std::size_t group_id = 0;
  std::string layer_tag;
  std::size_t threshold_index = 0;
};

// The local maximum a group of proposals was grown from.
struct ProposalGroup {
  std::string layer_tag;
  std::size_t row = 0;
  std::size_t col = 0;
  double persistence = 0.0;
};

/// Proposals of one image, partitioned into groups by source maximum.
struct ProposalSet {
  std::string image_id;
  std::vector<Proposal> proposals;
  std::vector<ProposalGroup> groups;               // indexed by group_id
  std::map<std::string, std::size_t> group_count;  // L_i per layer
  bool empty_after_floor = false;                  // some layer had nothing above the floor
  std::size_t skipped_maxima = 0;                  // maxima with a zero feature vector

  std::size_t size() const { return proposals.size(); }
  std::size_t group_total() const { return groups.size(); }
  std::vector<std::size_t> group_labels() const;
};

ProposalSet generate_for_layer(const FeatureTensor& tensor, const ProposalParams& params, ImageSize image,
                               std::string image_id = {});

// Concatenates per-layer sets; group ids of later sets are shifted past the
// earlier ones. Throws MixedImageIds.
ProposalSet fuse_layers(std::span<const ProposalSet> sets);

// Union of the pixel rectangles of the cells, rounded outward and clamped.
Box map_grid_box_to_image(const GridBox& grid_box, std::size_t grid_height, std::size_t grid_width,
                          ImageSize image);

// Cells fully covered by the box (inward rounding); never empty, a box that
// covers no full cell maps to the cell holding its centre.
GridBox map_image_box_to_grid(const Box& box, std::size_t grid_height, std::size_t grid_width, ImageSize image);

// One JSON object per image; coordinates printed with two decimals.
std::string proposals_to_jsonl_line(const ProposalSet& set);
ProposalSet proposals_from_jsonl_line(std::string_view line);

}  // namespace rosd
