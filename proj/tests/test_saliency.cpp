#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "rosd/errors.hpp"
#include "rosd/saliency.hpp"

using namespace rosd;

namespace {

FeatureTensor random_tensor(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t d) {
  std::uniform_real_distribution<float> value(0.0f, 1.0f);
  FeatureTensor t(h, w, d);
  for (auto& v : t.values) v = value(rng);
  return t;
}

SaliencyMap map_of(std::size_t h, std::size_t w, std::vector<double> scores) {
  SaliencyMap m;
  m.height = h;
  m.width = w;
  m.scores = std::move(scores);
  return m;
}

constexpr double kNoFloor = -std::numeric_limits<double>::infinity();

}  // namespace

TEST_CASE("global saliency of all ones is the depth") {
  FeatureTensor t(2, 2, 3);
  std::fill(t.values.begin(), t.values.end(), 1.0f);
  const SaliencyMap m = global_saliency(t);
  CHECK(m.kind == SaliencyKind::Global);
  for (double s : m.scores) CHECK(s == 3.0);
}

TEST_CASE("global saliency with one nonzero channel equals that channel") {
  std::mt19937_64 rng(1);
  FeatureTensor t(4, 3, 5);
  std::uniform_real_distribution<float> value(0.0f, 2.0f);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) t.at(r, c, 2) = value(rng);
  }
  const SaliencyMap m = global_saliency(t);
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) CHECK(m.at(r, c) == doctest::Approx(t.at(r, c, 2)));
  }
}

TEST_CASE("global saliency matches a per-cell summation") {
  std::mt19937_64 rng(2);
  const FeatureTensor t = random_tensor(rng, 7, 5, 16);
  const SaliencyMap m = global_saliency(t);
  for (std::size_t r = 0; r < 7; ++r) {
    for (std::size_t c = 0; c < 5; ++c) {
      double sum = 0.0;
      for (std::size_t d = 0; d < 16; ++d) sum += t.at(r, c, d);
      CHECK(std::abs(m.at(r, c) - sum) < 1e-5);
    }
  }
}

TEST_CASE("global saliency is linear") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const FeatureTensor a = random_tensor(rng, 6, 6, 8);
    const FeatureTensor b = random_tensor(rng, 6, 6, 8);
    FeatureTensor sum = a;
    for (std::size_t i = 0; i < sum.values.size(); ++i) sum.values[i] += b.values[i];
    const SaliencyMap sa = global_saliency(a), sb = global_saliency(b), ss = global_saliency(sum);
    for (std::size_t p = 0; p < ss.scores.size(); ++p) CHECK(std::abs(ss.scores[p] - sa.scores[p] - sb.scores[p]) < 1e-4);
  }
}

TEST_CASE("local saliency of a constant field is one everywhere") {
  FeatureTensor t(3, 4, 2);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      t.at(r, c, 0) = 0.3f;
      t.at(r, c, 1) = 0.7f;
    }
  }
  const SaliencyMap m = local_saliency(t, 1, 2);
  CHECK(m.kind == SaliencyKind::Local);
  for (double s : m.scores) CHECK(s == doctest::Approx(1.0));
}

TEST_CASE("local saliency is zero at orthogonal and zero-norm locations") {
  FeatureTensor t(1, 3, 2);
  t.at(0, 0, 0) = 1.0f;
  t.at(0, 1, 1) = 2.0f;
  const SaliencyMap m = local_saliency(t, 0, 0);
  CHECK(m.at(0, 0) == doctest::Approx(1.0));
  CHECK(m.at(0, 1) == 0.0);
  CHECK(m.at(0, 2) == 0.0);
}

TEST_CASE("local saliency matches a normalised dot product") {
  std::mt19937_64 rng(4);
  const FeatureTensor t = random_tensor(rng, 5, 6, 12);
  const SaliencyMap m = local_saliency(t, 2, 3);
  const auto ref = t.feature(2, 3);
  double ref_norm = 0.0;
  for (float v : ref) ref_norm += double(v) * v;
  ref_norm = std::sqrt(ref_norm);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 6; ++c) {
      const auto f = t.feature(r, c);
      double dot = 0.0, norm = 0.0;
      for (std::size_t d = 0; d < 12; ++d) {
        dot += double(f[d]) * ref[d];
        norm += double(f[d]) * f[d];
      }
      CHECK(std::abs(m.at(r, c) - dot / (std::sqrt(norm) * ref_norm)) < 1e-5);
    }
  }
}

TEST_CASE("a zero reference vector is an error") {
  FeatureTensor t(2, 2, 2);
  t.at(0, 0, 0) = 1.0f;
  CHECK_THROWS_AS(local_saliency(t, 1, 1), Error);
  try {
    local_saliency(t, 1, 1);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ZeroNormAtMaximum);
  }
}

TEST_CASE("persistence of [3, 1, 2]") {
  const auto maxima = compute_persistence(map_of(1, 3, {3, 1, 2}), kNoFloor);
  REQUIRE(maxima.size() == 2);
  CHECK(maxima[0].col == 0);
  CHECK(maxima[0].saliency == 3.0);
  CHECK(maxima[0].persistence == 2.0);
  CHECK(maxima[0].essential);
  CHECK(maxima[1].col == 2);
  CHECK(maxima[1].persistence == 1.0);
  CHECK(maxima[1].death == 1.0);
  CHECK_FALSE(maxima[1].essential);
}

TEST_CASE("a constant map has one maximum with zero persistence") {
  const auto maxima = compute_persistence(map_of(3, 3, std::vector<double>(9, 4.0)), kNoFloor);
  REQUIRE(maxima.size() == 1);
  CHECK(maxima[0].persistence == 0.0);
  CHECK(maxima[0].row == 0);
  CHECK(maxima[0].col == 0);
}

TEST_CASE("a lower peak behind a deep valley outranks a higher shallow bump") {
  // Global peak 10 at 0; bump of height 9 separated by a shallow dip to 8;
  // peak of height 7 separated by a valley down to 1.
  const auto maxima = compute_persistence(map_of(1, 7, {10, 8, 9, 5, 1, 7, 1}), kNoFloor);
  REQUIRE(maxima.size() == 3);
  CHECK(maxima[0].col == 0);
  CHECK(maxima[1].col == 5);
  CHECK(maxima[1].persistence == 6.0);
  CHECK(maxima[2].col == 2);
  CHECK(maxima[2].persistence == 1.0);
}

TEST_CASE("equal peaks merge in favour of the row-major-first one") {
  const auto maxima = compute_persistence(map_of(1, 3, {5, 1, 5}), kNoFloor);
  REQUIRE(maxima.size() == 2);
  CHECK(maxima[0].col == 0);
  CHECK(maxima[0].essential);
  CHECK(maxima[1].col == 2);
  CHECK(maxima[1].death == 1.0);
}

TEST_CASE("a plateau yields at most one maximum") {
  const auto maxima = compute_persistence(map_of(2, 3, {1, 6, 6, 1, 6, 1}), kNoFloor);
  REQUIRE(maxima.size() == 1);
  CHECK(maxima[0].row == 0);
  CHECK(maxima[0].col == 1);
}

TEST_CASE("the floor removes low locations and an empty result is an error") {
  const auto maxima = compute_persistence(map_of(1, 5, {4, 1, 3, 0, 2}), 2.0);
  // 4 and 3 are split by the masked 1, so both are essential components.
  REQUIRE(maxima.size() == 3);
  for (const auto& m : maxima) CHECK(m.death == 2.0);
  CHECK_THROWS_AS(compute_persistence(map_of(1, 2, {1, 1}), 5.0), Error);
}

TEST_CASE("persistence matches the threshold-sweep oracle on random maps") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const SaliencyMap map = oracle::random_integer_map(rng, 12, 9);
    const double floor = trial % 3 == 0 ? 3.0 : kNoFloor;
    bool any = false;
    for (double s : map.scores) any = any || s >= floor;
    if (!any) continue;
    const auto got = compute_persistence(map, floor);
    const auto want = oracle::persistence(map, floor);
    REQUIRE(got.size() == want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      CHECK(got[k].row == want[k].row);
      CHECK(got[k].col == want[k].col);
      CHECK(got[k].saliency == want[k].birth);
      CHECK(got[k].death == want[k].death);
      CHECK(got[k].persistence == want[k].persistence);
      CHECK(got[k].death <= got[k].saliency);
      CHECK(got[k].rank == k);
    }
  }
}

TEST_CASE("exactly one maximum dies at the lowest score when the global maximum is unique") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    SaliencyMap map = oracle::random_integer_map(rng, 10, 9);
    map.scores[std::uniform_int_distribution<std::size_t>(0, map.scores.size() - 1)(rng)] = 20;
    std::size_t alive = 0;
    for (const auto& m : compute_persistence(map, kNoFloor)) alive += m.essential ? 1 : 0;
    CHECK(alive == 1);
  }
}

TEST_CASE("adjacent maxima keep only the more persistent one") {
  LocalMaximum a{3, 3, 9.0, 1.0, 8.0, 0, false};
  LocalMaximum b{3, 4, 8.0, 1.0, 7.0, 1, false};
  const std::vector<LocalMaximum> list{a, b};
  const auto kept = select_maxima(list, 20);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].col == 3);
}

TEST_CASE("distant maxima are both kept") {
  const std::vector<LocalMaximum> list{{0, 0, 9.0, 1.0, 8.0, 0, false}, {5, 5, 8.0, 1.0, 7.0, 1, false}};
  CHECK(select_maxima(list, 20).size() == 2);
}

TEST_CASE("of 30 separated maxima the 20 most persistent are kept") {
  std::vector<LocalMaximum> list;
  for (std::size_t k = 0; k < 30; ++k) {
    LocalMaximum m;
    m.row = 3 * (k / 6);
    m.col = 3 * (k % 6);
    m.persistence = static_cast<double>((k * 7) % 30);
    list.push_back(m);
  }
  std::sort(list.begin(), list.end(), [](const auto& a, const auto& b) { return a.persistence > b.persistence; });
  const auto kept = select_maxima(list, 20);
  REQUIRE(kept.size() == 20);
  for (std::size_t k = 0; k < 20; ++k) {
    CHECK(kept[k].persistence == 29.0 - static_cast<double>(k));
    CHECK(kept[k].rank == k);
  }
}

TEST_CASE("selected maxima are 3x3 separated") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const SaliencyMap map = oracle::random_integer_map(rng, 12, 9);
    const auto kept = select_maxima(compute_persistence(map, kNoFloor), 20);
    CHECK(kept.size() <= 20);
    for (std::size_t a = 0; a < kept.size(); ++a) {
      for (std::size_t b = a + 1; b < kept.size(); ++b) {
        const auto dr = kept[a].row > kept[b].row ? kept[a].row - kept[b].row : kept[b].row - kept[a].row;
        const auto dc = kept[a].col > kept[b].col ? kept[a].col - kept[b].col : kept[b].col - kept[a].col;
        CHECK(std::max(dr, dc) > 1);
      }
    }
  }
}
