#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rosd/region_features.hpp"
#include "rosd/tensor_store.hpp"

namespace rosd {

struct ScoreEntry {
  std::uint32_t k = 0;  // proposal in the row image
  std::uint32_t l = 0;  // proposal in the column image
  float score = 0.0f;

  friend bool operator==(const ScoreEntry&, const ScoreEntry&) = default;
};

/// Sparse, strictly positive region-similarity matrix S_ij; entries are kept
/// in row-major (k, l) order.
struct ScoreMatrix {
  std::size_t i = 0;
  std::size_t j = 0;
  std::size_t rows = 0;  // p_i
  std::size_t cols = 0;  // p_j
  std::vector<ScoreEntry> entries;

  ScoreMatrix transposed() const;
};

/// Candidate neighbours N(i) for every image, by position in `image_ids`.
struct NeighborSets {
  std::vector<std::string> image_ids;
  std::vector<std::vector<std::size_t>> lists;

  std::size_t size() const { return lists.size(); }
  const std::vector<std::size_t>& of(std::size_t i) const { return lists[i]; }
  std::vector<std::string> ids_of(std::size_t i) const;
};

// Dense similarity between every descriptor pair of two images. Implement
// this to swap in another matching kernel.
class SimilarityKernel {
 public:
  virtual ~SimilarityKernel() = default;
  virtual void similarities(const DescriptorSet& a, const DescriptorSet& b, std::span<float> out) const = 0;
};

class CosineKernel final : public SimilarityKernel {
 public:
  void similarities(const DescriptorSet& a, const DescriptorSet& b, std::span<float> out) const override;
};

// The N_max most cosine-similar other images for each descriptor; ties go to
// the lexicographically smaller image id.
NeighborSets prefilter_neighbors(std::span<const GlobalDescriptor> descriptors, std::size_t n_max);

// Keeps the K largest strictly positive entries of a dense rows x cols block;
// ties go to the row-major-first entry.
ScoreMatrix sparsify(std::span<const float> dense, std::size_t rows, std::size_t cols, std::size_t k);

ScoreMatrix score_pair(const DescriptorSet& descs_i, const DescriptorSet& descs_j, std::size_t k,
                       const SimilarityKernel& kernel = CosineKernel{});

// (sum_i |N(i)|) * K score entries.
std::uint64_t memory_cost(const NeighborSets& neighbors, std::size_t k);

/// Score matrices keyed by unordered image pair; S_ji is served as the
/// transpose of the stored S_ij.
class ScoreStore {
 public:
  void insert(ScoreMatrix matrix);
  bool contains(std::size_t i, std::size_t j) const;
  const ScoreMatrix* find_canonical(std::size_t i, std::size_t j) const;

  // Calls f(k, l, score) for every entry of S_ij, k indexing image i.
  template <class F>
  void for_each(std::size_t i, std::size_t j, F&& f) const {
    const ScoreMatrix* m = find_canonical(i, j);
    if (m == nullptr) return;
    if (i < j) {
      for (const auto& e : m->entries) f(e.k, e.l, e.score);
    } else {
      for (const auto& e : m->entries) f(e.l, e.k, e.score);
    }
  }

  ScoreMatrix oriented(std::size_t i, std::size_t j) const;

  std::size_t pair_count() const { return matrices_.size(); }
  std::uint64_t entry_count() const;
  const std::map<std::pair<std::size_t, std::size_t>, ScoreMatrix>& matrices() const { return matrices_; }

 private:
  std::map<std::pair<std::size_t, std::size_t>, ScoreMatrix> matrices_;
};

// Unordered pairs {i, j} with j in N(i) or i in N(j), as (min, max), sorted.
std::vector<std::pair<std::size_t, std::size_t>> pairs_to_score(const NeighborSets& neighbors);

// Scores every needed pair with up to `workers` threads. Peak transient
// memory is one dense p_i x p_j block per worker.
ScoreStore score_all(const NeighborSets& neighbors, std::span<const DescriptorSet> descriptors, std::size_t k,
                     std::size_t workers, const SimilarityKernel& kernel = CosineKernel{});

// Binary layout: `<stem>.bin` holds little-endian (u32 k, u32 l, f32 score)
// triplets, one block per stored pair; `<stem>.index.json` maps each pair to
// its byte offset, entry count and dimensions.
void save_score_store(const ScoreStore& store, std::span<const std::string> image_ids, const fs::path& stem);
ScoreStore load_score_store(const fs::path& stem, std::span<const std::string> image_ids);

}  // namespace rosd
