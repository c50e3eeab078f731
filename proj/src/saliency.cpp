#include "rosd/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rosd/errors.hpp"

namespace rosd {
namespace {

double norm_of(std::span<const float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  return std::sqrt(sq);
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t v) {
    while (parent_[v] != v) {
      parent_[v] = parent_[parent_[v]];
      v = parent_[v];
    }
    return v;
  }

  std::size_t unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return a;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return a;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

}  // namespace

double SaliencyMap::max() const { return *std::max_element(scores.begin(), scores.end()); }
double SaliencyMap::min() const { return *std::min_element(scores.begin(), scores.end()); }
double SaliencyMap::mean() const {
  return std::accumulate(scores.begin(), scores.end(), 0.0) / static_cast<double>(scores.size());
}

SaliencyMap global_saliency(const FeatureTensor& tensor) {
  SaliencyMap map;
  map.height = tensor.height;
  map.width = tensor.width;
  map.kind = SaliencyKind::Global;
  map.scores.resize(tensor.cells());
  for (std::size_t r = 0; r < tensor.height; ++r) {
    for (std::size_t c = 0; c < tensor.width; ++c) {
      double sum = 0.0;
      for (float v : tensor.feature(r, c)) sum += v;
      map.scores[r * tensor.width + c] = sum;
    }
  }
  return map;
}

SaliencyMap local_saliency(const FeatureTensor& tensor, std::size_t row, std::size_t col) {
  if (row >= tensor.height || col >= tensor.width) {
    throw Error(ErrorCode::InvalidArgument, "local maximum outside the feature grid");
  }
  const auto ref = tensor.feature(row, col);
  const double ref_norm = norm_of(ref);
  if (ref_norm == 0.0) {
    throw Error(ErrorCode::ZeroNormAtMaximum,
                "feature vector at (" + std::to_string(row) + ", " + std::to_string(col) + ") is zero");
  }

  SaliencyMap map;
  map.height = tensor.height;
  map.width = tensor.width;
  map.kind = SaliencyKind::Local;
  map.source_row = row;
  map.source_col = col;
  map.scores.resize(tensor.cells());
  for (std::size_t r = 0; r < tensor.height; ++r) {
    for (std::size_t c = 0; c < tensor.width; ++c) {
      const auto f = tensor.feature(r, c);
      const double n = norm_of(f);
      double score = 0.0;
      if (n > 0.0) {
        double dot = 0.0;
        for (std::size_t d = 0; d < tensor.depth; ++d) dot += static_cast<double>(f[d]) * ref[d];
        score = std::clamp(dot / (n * ref_norm), -1.0, 1.0);
      }
      map.scores[r * tensor.width + c] = score;
    }
  }
  map.scores[row * tensor.width + col] = 1.0;
  return map;
}

SaliencyMap local_saliency(const FeatureTensor& tensor, const LocalMaximum& maximum) {
  return local_saliency(tensor, maximum.row, maximum.col);
}

std::vector<LocalMaximum> compute_persistence(const SaliencyMap& map, double floor) {
  const std::size_t w = map.width;
  const std::size_t n = map.height * map.width;

  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t p = 0; p < n; ++p) {
    if (map.scores[p] >= floor) order.push_back(p);
  }
  if (order.empty()) throw Error(ErrorCode::EmptyAfterFloor, "no location scores at or above the floor");
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return map.scores[a] > map.scores[b]; });
  const double lowest = map.scores[order.back()];

  // A peak "beats" another when it is higher, or equally high and earlier.
  auto elder = [&](std::size_t a, std::size_t b) {
    return map.scores[a] > map.scores[b] || (map.scores[a] == map.scores[b] && a < b);
  };

  UnionFind uf(n);
  std::vector<char> active(n, 0);
  std::vector<std::size_t> peak(n);  // valid at component roots
  std::vector<LocalMaximum> result;
  std::vector<std::size_t> born;     // peaks in birth order, indexes `result`
  std::vector<std::size_t> slot_of(n, 0);

  auto neighbours = [&](std::size_t p, auto&& visit) {
    const std::size_t r = p / w;
    const std::size_t c = p % w;
    if (r > 0) visit(p - w);
    if (r + 1 < map.height) visit(p + w);
    if (c > 0) visit(p - 1);
    if (c + 1 < w) visit(p + 1);
  };

  // Process one level (all pixels of equal score) at a time so a plateau
  // behaves as a single pixel: it either extends, merges, or gives birth once.
  std::vector<std::size_t> older;
  std::vector<std::vector<std::size_t>> touched;
  for (std::size_t begin = 0; begin < order.size();) {
    std::size_t end = begin;
    const double level = map.scores[order[begin]];
    while (end < order.size() && map.scores[order[end]] == level) ++end;
    std::sort(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));

    // Peaks of the pre-existing components adjacent to each level pixel.
    touched.assign(end - begin, {});
    for (std::size_t t = begin; t < end; ++t) {
      neighbours(order[t], [&](std::size_t q) {
        if (active[q]) touched[t - begin].push_back(peak[uf.find(q)]);
      });
    }
    for (std::size_t t = begin; t < end; ++t) active[order[t]] = 1;
    for (std::size_t t = begin; t < end; ++t) {
      neighbours(order[t], [&](std::size_t q) {
        if (active[q]) uf.unite(order[t], q);
      });
    }

    // Group level pixels by their new component; pixels are row-major sorted
    // so the first one seen in a component is its row-major-first pixel.
    std::vector<std::size_t> roots;
    std::vector<std::size_t> first_pixel;
    std::vector<std::vector<std::size_t>> old_peaks;
    for (std::size_t t = begin; t < end; ++t) {
      const std::size_t root = uf.find(order[t]);
      auto it = std::find(roots.begin(), roots.end(), root);
      std::size_t g;
      if (it == roots.end()) {
        g = roots.size();
        roots.push_back(root);
        first_pixel.push_back(order[t]);
        old_peaks.emplace_back();
      } else {
        g = static_cast<std::size_t>(it - roots.begin());
      }
      auto& peaks = old_peaks[g];
      peaks.insert(peaks.end(), touched[t - begin].begin(), touched[t - begin].end());
    }

    for (std::size_t g = 0; g < roots.size(); ++g) {
      auto& peaks = old_peaks[g];
      std::sort(peaks.begin(), peaks.end());
      peaks.erase(std::unique(peaks.begin(), peaks.end()), peaks.end());
      if (peaks.empty()) {
        const std::size_t p = first_pixel[g];
        LocalMaximum m;
        m.row = p / w;
        m.col = p % w;
        m.saliency = level;
        slot_of[p] = result.size();
        result.push_back(m);
        born.push_back(p);
        peak[roots[g]] = p;
        continue;
      }
      std::size_t survivor = peaks.front();
      for (std::size_t candidate : peaks) {
        if (elder(candidate, survivor)) survivor = candidate;
      }
      for (std::size_t candidate : peaks) {
        if (candidate == survivor) continue;
        LocalMaximum& dying = result[slot_of[candidate]];
        dying.death = level;
        dying.persistence = dying.saliency - level;
      }
      peak[roots[g]] = survivor;
    }
    begin = end;
  }

  // Components alive at the end of the sweep.
  for (std::size_t p : order) {
    if (uf.find(p) != p) continue;
    LocalMaximum& m = result[slot_of[peak[p]]];
    m.death = lowest;
    m.persistence = m.saliency - lowest;
    m.essential = true;
  }

  std::sort(result.begin(), result.end(), [w](const LocalMaximum& a, const LocalMaximum& b) {
    if (a.persistence != b.persistence) return a.persistence > b.persistence;
    if (a.saliency != b.saliency) return a.saliency > b.saliency;
    return a.row * w + a.col < b.row * w + b.col;
  });
  for (std::size_t i = 0; i < result.size(); ++i) result[i].rank = i;
  return result;
}

std::vector<LocalMaximum> select_maxima(std::span<const LocalMaximum> candidates, std::size_t max_count) {
  std::vector<LocalMaximum> kept;
  for (const auto& candidate : candidates) {
    if (kept.size() >= max_count) break;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const LocalMaximum& k) {
      const auto dr = candidate.row > k.row ? candidate.row - k.row : k.row - candidate.row;
      const auto dc = candidate.col > k.col ? candidate.col - k.col : k.col - candidate.col;
      return dr <= 1 && dc <= 1;
    });
    if (suppressed) continue;
    kept.push_back(candidate);
    kept.back().rank = kept.size() - 1;
  }
  return kept;
}

}  // namespace rosd
