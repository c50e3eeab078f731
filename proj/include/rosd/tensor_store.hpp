#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rosd/box.hpp"

namespace rosd {

namespace fs = std::filesystem;

/// Activation volume of one image at one layer, stored row-major as (H, W, D).
struct FeatureTensor {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t depth = 0;
  std::vector<float> values;
  std::string layer_tag;

  FeatureTensor() = default;
  FeatureTensor(std::size_t h, std::size_t w, std::size_t d, std::string tag = {})
      : height(h), width(w), depth(d), values(h * w * d, 0.0f), layer_tag(std::move(tag)) {}

  std::size_t cells() const { return height * width; }

  float& at(std::size_t r, std::size_t c, std::size_t d) { return values[(r * width + c) * depth + d]; }
  float at(std::size_t r, std::size_t c, std::size_t d) const { return values[(r * width + c) * depth + d]; }

  std::span<const float> feature(std::size_t r, std::size_t c) const {
    return {values.data() + (r * width + c) * depth, depth};
  }
  std::span<float> feature(std::size_t r, std::size_t c) {
    return {values.data() + (r * width + c) * depth, depth};
  }
};

// Throws ShapeMismatch / NonFiniteValue if the tensor breaks its invariants.
void check_invariants(const FeatureTensor& tensor);

/// A float32 array as stored in an NPY v1.0 file.
struct NpyArray {
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

// Reads the NPY v1.0 subset: dtype "<f4", fortran_order False. When
// `expected_rank` is nonzero the shape must have exactly that many axes.
// Errors (MalformedHeader, ShapeMismatch, NonFiniteValue, IoFailure) carry
// the path and the byte offset of the problem.
NpyArray read_npy(const fs::path& path, std::size_t expected_rank = 0);

// Writes atomically (sibling temp file, then rename).
void write_npy(const fs::path& path, std::span<const std::size_t> shape, std::span<const float> values);

FeatureTensor load_tensor(const fs::path& path, std::string layer_tag = {});
void save_tensor(const FeatureTensor& tensor, const fs::path& path);

/// Image-level descriptor used to prefilter candidate neighbours.
struct GlobalDescriptor {
  std::string image_id;
  std::vector<float> vector;
  double norm = 0.0;

  static GlobalDescriptor make(std::string image_id, std::vector<float> vector);
};

GlobalDescriptor load_descriptor(const fs::path& path, std::string image_id);
void save_descriptor(const GlobalDescriptor& descriptor, const fs::path& path);

struct GroundTruthBox {
  Box box;
  std::string label;
};

struct ImageRecord {
  std::string image_id;
  std::size_t original_width = 0;
  std::size_t original_height = 0;
  std::map<std::string, fs::path> tensor_paths;  // layer tag -> path relative to the manifest
  fs::path descriptor_path;
  std::optional<std::vector<GroundTruthBox>> ground_truth;
  std::optional<std::string> class_label;

  ImageSize size() const { return {original_width, original_height}; }
};

struct DatasetManifest {
  fs::path base_dir;  // directory the relative paths are resolved against
  std::vector<ImageRecord> images;

  fs::path resolve(const fs::path& relative) const;
  const ImageRecord* find(std::string_view image_id) const;
};

struct ManifestViolation {
  std::string image_id;
  std::string field;
  std::string message;
};

// Parses a manifest document. Throws ParseError with line/column or field
// context. Does not check that referenced files exist; see validate_manifest.
DatasetManifest parse_manifest(std::string_view text, const fs::path& base_dir);
DatasetManifest load_manifest(const fs::path& path);
std::vector<ManifestViolation> validate_manifest(const DatasetManifest& manifest);

std::string manifest_to_json(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const fs::path& path);

// Writes `contents` to `path` through a sibling temp file and rename.
void write_file_atomic(const fs::path& path, std::string_view contents);
std::string read_file(const fs::path& path);

}  // namespace rosd
