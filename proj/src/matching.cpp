#include "rosd/matching.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <mutex>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "rosd/errors.hpp"

namespace rosd {

ScoreMatrix ScoreMatrix::transposed() const {
  ScoreMatrix t;
  t.i = j;
  t.j = i;
  t.rows = cols;
  t.cols = rows;
  t.entries.reserve(entries.size());
  for (const auto& e : entries) t.entries.push_back({e.l, e.k, e.score});
  std::sort(t.entries.begin(), t.entries.end(),
            [](const ScoreEntry& a, const ScoreEntry& b) { return a.k != b.k ? a.k < b.k : a.l < b.l; });
  return t;
}

std::vector<std::string> NeighborSets::ids_of(std::size_t i) const {
  std::vector<std::string> ids;
  for (std::size_t j : lists[i]) ids.push_back(image_ids[j]);
  return ids;
}

void CosineKernel::similarities(const DescriptorSet& a, const DescriptorSet& b, std::span<float> out) const {
  if (a.dim != b.dim) throw Error(ErrorCode::InvalidArgument, "descriptor dimensions differ");
  const std::size_t dim = a.dim;
  auto norms = [dim](const DescriptorSet& s) {
    std::vector<double> n(s.rows());
    for (std::size_t k = 0; k < s.rows(); ++k) {
      double sq = 0.0;
      for (float v : s.row(k)) sq += static_cast<double>(v) * v;
      n[k] = std::sqrt(sq);
    }
    return n;
  };
  const auto na = norms(a);
  const auto nb = norms(b);
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const float* x = a.values.data() + k * dim;
    for (std::size_t l = 0; l < b.rows(); ++l) {
      const float* y = b.values.data() + l * dim;
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += static_cast<double>(x[d]) * y[d];
      const double denom = na[k] * nb[l];
      out[k * b.rows() + l] = denom > 0.0 ? static_cast<float>(std::clamp(dot / denom, -1.0, 1.0)) : 0.0f;
    }
  }
}

NeighborSets prefilter_neighbors(std::span<const GlobalDescriptor> descriptors, std::size_t n_max) {
  const std::size_t n = descriptors.size();
  NeighborSets out;
  out.lists.resize(n);
  for (const auto& d : descriptors) out.image_ids.push_back(d.image_id);

  std::vector<double> sim(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      sim[i * n + j] = sim[j * n + i] = cosine(descriptors[i].vector, descriptors[j].vector);
    }
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    const std::size_t keep = std::min(n_max, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double sa = sim[i * n + a];
                        const double sb = sim[i * n + b];
                        if (sa != sb) return sa > sb;
                        return out.image_ids[a] < out.image_ids[b];
                      });
    out.lists[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  return out;
}

ScoreMatrix sparsify(std::span<const float> dense, std::size_t rows, std::size_t cols, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "score budget K must be at least 1");
  std::vector<std::uint32_t> positive;
  for (std::size_t idx = 0; idx < rows * cols; ++idx) {
    if (dense[idx] > 0.0f) positive.push_back(static_cast<std::uint32_t>(idx));
  }
  const std::size_t keep = std::min(k, positive.size());
  std::partial_sort(positive.begin(), positive.begin() + static_cast<std::ptrdiff_t>(keep), positive.end(),
                    [&](std::uint32_t a, std::uint32_t b) {
                      if (dense[a] != dense[b]) return dense[a] > dense[b];
                      return a < b;
                    });
  positive.resize(keep);
  std::sort(positive.begin(), positive.end());

  ScoreMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.entries.reserve(keep);
  for (std::uint32_t idx : positive) {
    m.entries.push_back({static_cast<std::uint32_t>(idx / cols), static_cast<std::uint32_t>(idx % cols), dense[idx]});
  }
  return m;
}

ScoreMatrix score_pair(const DescriptorSet& descs_i, const DescriptorSet& descs_j, std::size_t k,
                       const SimilarityKernel& kernel) {
  std::vector<float> dense(descs_i.rows() * descs_j.rows());
  kernel.similarities(descs_i, descs_j, dense);
  return sparsify(dense, descs_i.rows(), descs_j.rows(), k);
}

std::uint64_t memory_cost(const NeighborSets& neighbors, std::size_t k) {
  std::uint64_t pairs = 0;
  for (const auto& list : neighbors.lists) pairs += list.size();
  return pairs * k;
}

void ScoreStore::insert(ScoreMatrix matrix) {
  if (matrix.i == matrix.j) throw Error(ErrorCode::InvalidArgument, "score matrix of an image with itself");
  if (matrix.i > matrix.j) matrix = matrix.transposed();
  const auto key = std::make_pair(matrix.i, matrix.j);
  matrices_[key] = std::move(matrix);
}

bool ScoreStore::contains(std::size_t i, std::size_t j) const { return find_canonical(i, j) != nullptr; }

const ScoreMatrix* ScoreStore::find_canonical(std::size_t i, std::size_t j) const {
  auto it = matrices_.find({std::min(i, j), std::max(i, j)});
  return it == matrices_.end() ? nullptr : &it->second;
}

ScoreMatrix ScoreStore::oriented(std::size_t i, std::size_t j) const {
  const ScoreMatrix* m = find_canonical(i, j);
  if (m == nullptr) {
    ScoreMatrix empty;
    empty.i = i;
    empty.j = j;
    return empty;
  }
  return i < j ? *m : m->transposed();
}

std::uint64_t ScoreStore::entry_count() const {
  std::uint64_t total = 0;
  for (const auto& [key, m] : matrices_) total += m.entries.size();
  return total;
}

std::vector<std::pair<std::size_t, std::size_t>> pairs_to_score(const NeighborSets& neighbors) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    for (std::size_t j : neighbors.of(i)) pairs.emplace_back(std::min(i, j), std::max(i, j));
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  return pairs;
}

ScoreStore score_all(const NeighborSets& neighbors, std::span<const DescriptorSet> descriptors, std::size_t k,
                     std::size_t workers, const SimilarityKernel& kernel) {
  if (descriptors.size() != neighbors.size()) {
    throw Error(ErrorCode::InvalidArgument, "descriptor sets and neighbour sets disagree on the image count");
  }
  const auto pairs = pairs_to_score(neighbors);
  std::vector<ScoreMatrix> results(pairs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto work = [&] {
    try {
      for (std::size_t t = next++; t < pairs.size(); t = next++) {
        const auto [i, j] = pairs[t];
        ScoreMatrix m = score_pair(descriptors[i], descriptors[j], k, kernel);
        m.i = i;
        m.j = j;
        results[t] = std::move(m);
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = pairs.size();
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(1, pairs.size()));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);

  ScoreStore store;
  for (auto& m : results) store.insert(std::move(m));
  return store;
}

void save_score_store(const ScoreStore& store, std::span<const std::string> image_ids, const fs::path& stem) {
  using nlohmann::json;
  std::string data;
  json pairs = json::array();
  for (const auto& [key, m] : store.matrices()) {
    pairs.push_back({{"i", image_ids[m.i]},
                     {"j", image_ids[m.j]},
                     {"rows", m.rows},
                     {"cols", m.cols},
                     {"offset", data.size()},
                     {"count", m.entries.size()}});
    for (const auto& e : m.entries) {
      std::uint32_t words[3];
      words[0] = e.k;
      words[1] = e.l;
      std::memcpy(&words[2], &e.score, sizeof(float));
      for (std::uint32_t w : words) {
        if constexpr (std::endian::native == std::endian::big) {
          w = (w >> 24) | ((w >> 8) & 0xff00u) | ((w << 8) & 0xff0000u) | (w << 24);
        }
        char buf[4];
        std::memcpy(buf, &w, 4);
        data.append(buf, 4);
      }
    }
  }
  json index;
  index["format"] = "rosd-scores";
  index["version"] = 1;
  index["entry_bytes"] = 12;
  index["images"] = std::vector<std::string>(image_ids.begin(), image_ids.end());
  index["pairs"] = std::move(pairs);

  fs::path bin = stem;
  bin += ".bin";
  fs::path idx = stem;
  idx += ".index.json";
  write_file_atomic(bin, data);
  write_file_atomic(idx, index.dump(1) + "\n");
}

ScoreStore load_score_store(const fs::path& stem, std::span<const std::string> image_ids) {
  using nlohmann::json;
  fs::path bin = stem;
  bin += ".bin";
  fs::path idx = stem;
  idx += ".index.json";
  const std::string data = read_file(bin);
  json index;
  try {
    index = json::parse(read_file(idx));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, idx.string() + ": " + e.what());
  }

  std::map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < image_ids.size(); ++i) position[image_ids[i]] = i;

  ScoreStore store;
  try {
    for (const auto& p : index.at("pairs")) {
      const auto i_id = p.at("i").get<std::string>();
      const auto j_id = p.at("j").get<std::string>();
      if (!position.count(i_id) || !position.count(j_id)) {
        throw Error(ErrorCode::ParseError, idx.string() + ": unknown image in pair " + i_id + "/" + j_id);
      }
      ScoreMatrix m;
      m.i = position[i_id];
      m.j = position[j_id];
      m.rows = p.at("rows").get<std::size_t>();
      m.cols = p.at("cols").get<std::size_t>();
      const auto offset = p.at("offset").get<std::size_t>();
      const auto count = p.at("count").get<std::size_t>();
      if (offset + count * 12 > data.size()) {
        throw Error(ErrorCode::ShapeMismatch, bin.string() + ": block at byte " + std::to_string(offset) +
                                                  " runs past the end of the file");
      }
      m.entries.resize(count);
      for (std::size_t e = 0; e < count; ++e) {
        std::uint32_t words[3];
        std::memcpy(words, data.data() + offset + e * 12, 12);
        if constexpr (std::endian::native == std::endian::big) {
          for (auto& w : words) w = (w >> 24) | ((w >> 8) & 0xff00u) | ((w << 8) & 0xff0000u) | (w << 24);
        }
        m.entries[e].k = words[0];
        m.entries[e].l = words[1];
        std::memcpy(&m.entries[e].score, &words[2], sizeof(float));
      }
      store.insert(std::move(m));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, idx.string() + ": " + e.what());
  }
  return store;
}

}  // namespace rosd
