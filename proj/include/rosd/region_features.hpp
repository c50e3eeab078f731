#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rosd/box.hpp"
#include "rosd/proposals.hpp"
#include "rosd/tensor_store.hpp"

namespace rosd {

/// Max-pooled feature of one proposal; layout is [bin_row][bin_col][channel].
struct RegionDescriptor {
  std::string image_id;
  std::size_t proposal_index = 0;
  std::vector<float> vector;
  double norm = 0.0;
};

// RoI max pooling over a pool_grid x pool_grid partition of the cells the box
// covers. Bins that receive no cell copy the nearest non-empty bin along
// each axis. The result is not normalised, so pooling is homogeneous in the
// tensor: roi_pool(c * T) == c * roi_pool(T) for c > 0.
RegionDescriptor roi_pool(const FeatureTensor& tensor, const Box& box, ImageSize image, std::size_t pool_grid = 3);

double cosine(std::span<const float> a, std::span<const float> b);
double cosine(const RegionDescriptor& a, const RegionDescriptor& b);

/// Row-major matrix of L2-normalised region descriptors for one image.
struct DescriptorSet {
  std::size_t dim = 0;
  std::vector<float> values;

  std::size_t rows() const { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const float> row(std::size_t k) const { return {values.data() + k * dim, dim}; }
};

// Pools every proposal of the set and normalises to unit length (zero
// vectors stay zero).
DescriptorSet describe_proposals(const FeatureTensor& tensor, const ProposalSet& proposals, ImageSize image,
                                 std::size_t pool_grid = 3);

// Keeps only the listed rows, in the given order.
DescriptorSet select_rows(const DescriptorSet& set, std::span<const std::size_t> rows);

// Descriptor cache: a (num_proposals, dim) float32 NPY file.
void save_descriptor_cache(const DescriptorSet& set, const fs::path& path);
DescriptorSet load_descriptor_cache(const fs::path& path);

}  // namespace rosd
