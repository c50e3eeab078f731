#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "rosd/errors.hpp"
#include "rosd/evaluation.hpp"
#include "rosd/proposals.hpp"

namespace rosd {
namespace {

// Portable draws; <random> distributions are not bit-reproducible across
// standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }
  double normal() {
    const double u1 = std::max(uniform(), 1e-300);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

struct Blob {
  GridBox cells;
  std::vector<std::vector<float>> parts;  // quadrant patterns, L1-normalised; one entry for uniform blobs
  double amplitude = 1.0;
  std::size_t peak_row = 0;
  std::size_t peak_col = 0;
  bool labelled = true;
};

constexpr double kStrength = 4.0;

std::vector<float> l1_normalised(std::vector<double> v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  std::vector<float> out(v.size());
  for (std::size_t d = 0; d < v.size(); ++d) out[d] = static_cast<float>(v[d] / sum);
  return out;
}

// Shared class direction on the class's channel block, plus one emphasised
// slice of that block per object quadrant.
std::vector<std::vector<float>> class_parts(Rng& rng, std::size_t cls, std::size_t classes, std::size_t depth,
                                            double contrast) {
  const std::size_t width = depth / classes;
  const std::size_t lo = cls * width;
  std::vector<double> shared(depth, 0.0);
  double sum = 0.0;
  for (std::size_t d = lo; d < lo + width; ++d) sum += shared[d] = rng.uniform(0.5, 1.0);
  for (auto& v : shared) v /= sum;
  std::vector<std::vector<float>> parts;
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<double> v = shared;
    const std::size_t slice = std::max<std::size_t>(1, width / 4);
    const std::size_t first = lo + (k * slice) % width;
    for (std::size_t d = first; d < std::min(first + slice, lo + width); ++d) v[d] += contrast / static_cast<double>(slice);
    parts.push_back(l1_normalised(std::move(v)));
  }
  return parts;
}

std::vector<float> distractor_direction(Rng& rng, std::size_t depth) {
  const std::size_t active = std::max<std::size_t>(2, depth / 8);
  std::vector<double> dir(depth, 0.0);
  for (std::size_t t = 0; t < active; ++t) dir[rng.below(depth)] += rng.uniform(0.5, 1.0);
  return l1_normalised(std::move(dir));
}

bool overlaps_with_gap(const GridBox& a, const GridBox& b, std::size_t gap) {
  return !(a.row_max + gap < b.row_min || b.row_max + gap < a.row_min || a.col_max + gap < b.col_min ||
           b.col_max + gap < a.col_min);
}

// Blobs sit on even fine cells with extents of 4 or 8, so each quadrant is
// a whole number of cells of the 2x coarser layer; at least two empty fine
// cells separate blobs.
std::optional<GridBox> place_blob(Rng& rng, std::size_t grid, const std::vector<Blob>& placed) {
  static constexpr std::size_t kSizes[] = {4, 8};
  for (int attempt = 0; attempt < 200; ++attempt) {
    const std::size_t h = kSizes[rng.below(2)];
    const std::size_t w = kSizes[rng.below(2)];
    if (h > grid || w > grid) continue;
    const std::size_t r0 = 2 * rng.below((grid - h) / 2 + 1);
    const std::size_t c0 = 2 * rng.below((grid - w) / 2 + 1);
    const GridBox box{r0, c0, r0 + h - 1, c0 + w - 1};
    const bool clash = std::any_of(placed.begin(), placed.end(),
                                   [&](const Blob& b) { return overlaps_with_gap(box, b.cells, 1); });
    if (!clash) return box;
  }
  return std::nullopt;
}

FeatureTensor max_pool_2x2(const FeatureTensor& fine, const std::string& tag) {
  FeatureTensor coarse(fine.height / 2, fine.width / 2, fine.depth, tag);
  for (std::size_t r = 0; r < coarse.height; ++r) {
    for (std::size_t c = 0; c < coarse.width; ++c) {
      for (std::size_t d = 0; d < fine.depth; ++d) {
        float m = fine.at(2 * r, 2 * c, d);
        m = std::max(m, fine.at(2 * r + 1, 2 * c, d));
        m = std::max(m, fine.at(2 * r, 2 * c + 1, d));
        m = std::max(m, fine.at(2 * r + 1, 2 * c + 1, d));
        coarse.at(r, c, d) = m;
      }
    }
  }
  return coarse;
}

std::string numbered(const char* prefix, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%04zu", prefix, i);
  return buf;
}

}  // namespace

SyntheticDataset generate_synthetic(const SyntheticOptions& options) {
  if (options.classes < 1) throw Error(ErrorCode::InvalidArgument, "need at least one class");
  if (options.depth < options.classes) throw Error(ErrorCode::InvalidArgument, "depth must be >= number of classes");
  if (options.grid < 4 || options.grid % 2 != 0) throw Error(ErrorCode::InvalidArgument, "grid must be even and >= 4");
  if (options.min_objects < 1 || options.max_objects < options.min_objects) {
    throw Error(ErrorCode::InvalidArgument, "need 1 <= min_objects <= max_objects");
  }
  if (options.noise_level < 0.0) throw Error(ErrorCode::InvalidArgument, "noise level must be nonnegative");
  if (options.part_contrast < 0.0) throw Error(ErrorCode::InvalidArgument, "part contrast must be nonnegative");

  Rng rng(options.seed);
  std::vector<std::vector<std::vector<float>>> patterns;
  for (std::size_t c = 0; c < options.classes; ++c) {
    patterns.push_back(class_parts(rng, c, options.classes, options.depth, options.part_contrast));
  }
  const double noise_sigma =
      options.noise_level * kStrength / static_cast<double>(options.depth / options.classes);
  const ImageSize size{options.image_size, options.image_size};

  SyntheticDataset dataset;
  dataset.options = options;
  for (std::size_t i = 0; i < options.n_images; ++i) {
    const std::size_t cls = i % options.classes;
    SyntheticImage image;
    image.image_id = numbered("img_", i);
    image.class_label = numbered("class_", cls);
    image.size = size;

    std::vector<Blob> blobs;
    auto add_blob = [&](const GridBox& cells, std::vector<std::vector<float>> parts, bool labelled) {
      Blob b{cells, std::move(parts), rng.uniform(0.8, 1.2), 0, 0, labelled};
      b.peak_row = cells.row_min + rng.below(cells.row_max - cells.row_min + 1);
      b.peak_col = cells.col_min + rng.below(cells.col_max - cells.col_min + 1);
      blobs.push_back(std::move(b));
    };
    const std::size_t objects = options.min_objects + rng.below(options.max_objects - options.min_objects + 1);
    for (std::size_t o = 0; o < objects; ++o) {
      auto cells = place_blob(rng, options.grid, blobs);
      if (!cells) break;
      add_blob(*cells, patterns[cls], true);
    }
    if (options.distractor) {
      if (auto cells = place_blob(rng, options.grid, blobs)) add_blob(*cells, {distractor_direction(rng, options.depth)}, false);
    }

    // Activations peak at a random cell of each blob, so the seed of a
    // blob's proposals lands in a random quadrant.
    FeatureTensor fine(options.grid, options.grid, options.depth, options.fine_layer);
    for (const auto& blob : blobs) {
      const std::size_t h = blob.cells.row_max - blob.cells.row_min + 1;
      const std::size_t w = blob.cells.col_max - blob.cells.col_min + 1;
      const double sigma = 0.5 * static_cast<double>(std::max(h, w));
      for (std::size_t r = blob.cells.row_min; r <= blob.cells.row_max; ++r) {
        for (std::size_t c = blob.cells.col_min; c <= blob.cells.col_max; ++c) {
          const double dr = static_cast<double>(r) - static_cast<double>(blob.peak_row);
          const double dc = static_cast<double>(c) - static_cast<double>(blob.peak_col);
          const double profile = 0.5 + 0.5 * std::exp(-(dr * dr + dc * dc) / (2.0 * sigma * sigma));
          const double level = kStrength * blob.amplitude * profile;
          std::size_t part = 0;
          if (blob.parts.size() == 4) {
            part = (2 * (r - blob.cells.row_min) >= h ? 2 : 0) + (2 * (c - blob.cells.col_min) >= w ? 1 : 0);
          }
          const auto& dir = blob.parts[part];
          for (std::size_t d = 0; d < options.depth; ++d) fine.at(r, c, d) = static_cast<float>(level * dir[d]);
        }
      }
      if (blob.labelled) {
        const Box box = map_grid_box_to_image(blob.cells, options.grid, options.grid, size);
        image.ground_truth.push_back({box, image.class_label});
      }
    }
    if (noise_sigma > 0.0) {
      for (auto& v : fine.values) v += static_cast<float>(std::abs(rng.normal()) * noise_sigma);
    }

    image.coarse = max_pool_2x2(fine, options.coarse_layer);
    std::vector<float> pooled(options.depth, 0.0f);
    for (std::size_t r = 0; r < fine.height; ++r) {
      for (std::size_t c = 0; c < fine.width; ++c) {
        const auto f = fine.feature(r, c);
        for (std::size_t d = 0; d < options.depth; ++d) pooled[d] += f[d];
      }
    }
    image.descriptor = GlobalDescriptor::make(image.image_id, std::move(pooled));
    image.fine = std::move(fine);
    dataset.images.push_back(std::move(image));
  }
  return dataset;
}

DatasetManifest write_synthetic(const SyntheticDataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir / "tensors", ec);
  fs::create_directories(dir / "descriptors", ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());

  DatasetManifest manifest;
  manifest.base_dir = dir;
  for (const auto& image : dataset.images) {
    ImageRecord record;
    record.image_id = image.image_id;
    record.original_width = image.size.width;
    record.original_height = image.size.height;
    for (const FeatureTensor* t : {&image.fine, &image.coarse}) {
      const fs::path rel = fs::path("tensors") / (image.image_id + "." + t->layer_tag + ".npy");
      save_tensor(*t, dir / rel);
      record.tensor_paths[t->layer_tag] = rel;
    }
    record.descriptor_path = fs::path("descriptors") / (image.image_id + ".npy");
    save_descriptor(image.descriptor, dir / record.descriptor_path);
    record.ground_truth = image.ground_truth;
    record.class_label = image.class_label;
    manifest.images.push_back(std::move(record));
  }
  save_manifest(manifest, dir / "manifest.json");
  return manifest;
}

}  // namespace rosd
