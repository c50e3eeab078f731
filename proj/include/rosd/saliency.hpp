#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rosd/tensor_store.hpp"

namespace rosd {

enum class SaliencyKind { Global, Local };

/// H x W score grid derived from a feature tensor, row-major.
struct SaliencyMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> scores;
  SaliencyKind kind = SaliencyKind::Global;
  // Source location for Local maps.
  std::size_t source_row = 0;
  std::size_t source_col = 0;

  double at(std::size_t r, std::size_t c) const { return scores[r * width + c]; }
  double max() const;
  double min() const;
  double mean() const;
};

/// A peak of the superlevel-set filtration of a saliency map.
struct LocalMaximum {
  std::size_t row = 0;
  std::size_t col = 0;
  double saliency = 0.0;  // birth
  double death = 0.0;
  double persistence = 0.0;
  std::size_t rank = 0;
  // True when the component never merged into an older one; its death is
  // then the lowest retained score.
  bool essential = false;
};

// Depthwise sum of the tensor.
SaliencyMap global_saliency(const FeatureTensor& tensor);

// Cosine similarity of every feature vector to the one at (row, col).
// Zero-norm locations score 0. Throws ZeroNormAtMaximum when the reference
// vector itself is zero.
SaliencyMap local_saliency(const FeatureTensor& tensor, std::size_t row, std::size_t col);
SaliencyMap local_saliency(const FeatureTensor& tensor, const LocalMaximum& maximum);

// Peaks of the map restricted to scores >= floor, under 4-connectivity,
// sorted by decreasing persistence, then higher saliency, then row-major
// location. When two components meet, the one whose peak is higher survives
// (equal peaks: the row-major-first peak survives). Components that never
// merge die at the lowest retained score. Throws EmptyAfterFloor.
std::vector<LocalMaximum> compute_persistence(const SaliencyMap& map, double floor);

// Greedy 3x3 non-maximum suppression in list order, keeping at most
// `max_count`. Kept entries are re-ranked 0..n-1.
std::vector<LocalMaximum> select_maxima(std::span<const LocalMaximum> candidates, std::size_t max_count);

}  // namespace rosd
