#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "rosd/box.hpp"
#include "rosd/tensor_store.hpp"

namespace rosd {

enum class MetricKind { CorLoc, DetectionRate, CorRet };

// Colocalization: per-class runs, overall = mean of class scores.
// Discovery: one pooled run, overall = pooled percentage.
enum class EvalSetting { Discovery, Colocalization };

/// Percentages in [0, 100].
struct EvalReport {
  MetricKind metric = MetricKind::CorLoc;
  double iou_threshold = 0.5;
  std::map<std::string, double> per_class;
  double overall = 0.0;
  std::size_t evaluated = 0;  // images (CorLoc, CorRet) or boxes (detection rate)
};

struct ImageTruth {
  std::string image_id;
  std::string class_label;
  std::vector<GroundTruthBox> boxes;
};

// Images with at least one prediction overlapping a ground-truth box at
// IoU strictly above the threshold. Every listed image needs ground truth
// (MissingGroundTruth otherwise); images absent from `predictions` count as
// misses.
EvalReport corloc(const std::map<std::string, std::vector<Box>>& predictions, std::span<const ImageTruth> truth,
                  double iou_threshold = 0.5, EvalSetting setting = EvalSetting::Discovery);

// Ground-truth boxes matched by some prediction at IoU > zeta; the class of a
// box is its own label, falling back to the image label.
EvalReport detection_rate(const std::map<std::string, std::vector<Box>>& predictions,
                          std::span<const ImageTruth> truth, double zeta = 0.5,
                          EvalSetting setting = EvalSetting::Discovery);

// Mean over images with at least one out-edge of the share of out-neighbours
// with the same class. Throws UnlabeledImage.
EvalReport corret(const std::map<std::string, std::vector<std::string>>& out_edges,
                  const std::map<std::string, std::string>& class_labels);

struct SeedSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single value
  std::size_t count = 0;
};

SeedSummary summarize(std::span<const double> values);

std::string metric_name(MetricKind metric);
std::string report_to_json(std::span<const EvalReport> runs);
std::string report_to_table(std::span<const EvalReport> runs);
std::string report_to_csv(std::span<const EvalReport> runs);

// Ground truth of every manifest image that has any.
std::vector<ImageTruth> truth_from_manifest(const DatasetManifest& manifest);

// ---------------------------------------------------------------------------
// Synthetic planted-object collections.

struct SyntheticOptions {
  std::size_t n_images = 40;
  std::size_t classes = 4;
  double noise_level = 0.0;
  // Weight of the per-quadrant slice of the class pattern; 0 makes objects
  // uniform.
  double part_contrast = 1.0;
  std::uint64_t seed = 1;
  std::size_t grid = 16;         // fine layer is grid x grid, coarse layer grid/2 x grid/2
  std::size_t depth = 32;
  std::size_t image_size = 256;  // square images, pixels
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  bool distractor = true;        // one unlabeled blob with an image-specific pattern
  std::string fine_layer = "relu4_3";
  std::string coarse_layer = "relu5_3";
};

struct SyntheticImage {
  std::string image_id;
  std::string class_label;
  ImageSize size;
  FeatureTensor fine;
  FeatureTensor coarse;
  GlobalDescriptor descriptor;
  std::vector<GroundTruthBox> ground_truth;
};

struct SyntheticDataset {
  SyntheticOptions options;
  std::vector<SyntheticImage> images;
};

// Images cycle through the classes. Each carries 1-3 blobs drawn from its
// class pattern (one channel slice per quadrant), plus an optional uniform
// distractor blob; classes use disjoint channel sets. Activations peak at a
// random cell of each blob. Noise is |N(0, sigma)| added to every activation.
SyntheticDataset generate_synthetic(const SyntheticOptions& options);

// Writes tensors, descriptors and manifest.json under `dir`.
DatasetManifest write_synthetic(const SyntheticDataset& dataset, const fs::path& dir);

}  // namespace rosd
