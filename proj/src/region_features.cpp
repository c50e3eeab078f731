#include "rosd/region_features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rosd/errors.hpp"

namespace rosd {
namespace {

struct Bin {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
};

// Splits [first, first + extent) into `count` near-equal, non-overlapping
// bins; empty bins borrow the nearest non-empty one (lower index on ties).
std::vector<Bin> partition_axis(std::size_t first, std::size_t extent, std::size_t count) {
  std::vector<Bin> bins(count);
  for (std::size_t b = 0; b < count; ++b) {
    bins[b].begin = first + b * extent / count;
    bins[b].end = first + (b + 1) * extent / count;
  }
  std::vector<Bin> filled = bins;
  for (std::size_t b = 0; b < count; ++b) {
    if (bins[b].end > bins[b].begin) continue;
    for (std::size_t d = 1; d < count; ++d) {
      if (b >= d && bins[b - d].end > bins[b - d].begin) {
        filled[b] = bins[b - d];
        break;
      }
      if (b + d < count && bins[b + d].end > bins[b + d].begin) {
        filled[b] = bins[b + d];
        break;
      }
    }
  }
  return filled;
}

double l2(std::span<const float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  return std::sqrt(sq);
}

}  // namespace

RegionDescriptor roi_pool(const FeatureTensor& tensor, const Box& box, ImageSize image, std::size_t pool_grid) {
  if (pool_grid == 0) throw Error(ErrorCode::InvalidArgument, "pool_grid must be positive");
  const GridBox g = map_image_box_to_grid(box, tensor.height, tensor.width, image);
  const auto row_bins = partition_axis(g.row_min, g.row_max - g.row_min + 1, pool_grid);
  const auto col_bins = partition_axis(g.col_min, g.col_max - g.col_min + 1, pool_grid);

  RegionDescriptor out;
  out.vector.assign(pool_grid * pool_grid * tensor.depth, -std::numeric_limits<float>::infinity());
  for (std::size_t br = 0; br < pool_grid; ++br) {
    for (std::size_t bc = 0; bc < pool_grid; ++bc) {
      float* dst = out.vector.data() + (br * pool_grid + bc) * tensor.depth;
      for (std::size_t r = row_bins[br].begin; r < row_bins[br].end; ++r) {
        for (std::size_t c = col_bins[bc].begin; c < col_bins[bc].end; ++c) {
          const auto f = tensor.feature(r, c);
          for (std::size_t d = 0; d < tensor.depth; ++d) dst[d] = std::max(dst[d], f[d]);
        }
      }
    }
  }
  out.norm = l2(out.vector);
  return out;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::InvalidArgument, "cosine of vectors with different sizes");
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double cosine(const RegionDescriptor& a, const RegionDescriptor& b) { return cosine(a.vector, b.vector); }

DescriptorSet describe_proposals(const FeatureTensor& tensor, const ProposalSet& proposals, ImageSize image,
                                 std::size_t pool_grid) {
  DescriptorSet set;
  set.dim = pool_grid * pool_grid * tensor.depth;
  set.values.reserve(proposals.size() * set.dim);
  for (std::size_t k = 0; k < proposals.size(); ++k) {
    RegionDescriptor d = roi_pool(tensor, proposals.proposals[k].box, image, pool_grid);
    const double scale = d.norm > 0.0 ? 1.0 / d.norm : 0.0;
    for (float v : d.vector) set.values.push_back(static_cast<float>(v * scale));
  }
  return set;
}

DescriptorSet select_rows(const DescriptorSet& set, std::span<const std::size_t> rows) {
  DescriptorSet out;
  out.dim = set.dim;
  out.values.reserve(rows.size() * set.dim);
  for (std::size_t k : rows) {
    const auto r = set.row(k);
    out.values.insert(out.values.end(), r.begin(), r.end());
  }
  return out;
}

void save_descriptor_cache(const DescriptorSet& set, const fs::path& path) {
  const std::size_t shape[] = {set.rows(), set.dim};
  write_npy(path, shape, set.values);
}

DescriptorSet load_descriptor_cache(const fs::path& path) {
  NpyArray array = read_npy(path, 2);
  DescriptorSet set;
  set.dim = array.shape[1];
  set.values = std::move(array.values);
  return set;
}

}  // namespace rosd
