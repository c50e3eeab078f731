#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "rosd/errors.hpp"
#include "rosd/region_features.hpp"
#include "support.hpp"

using namespace rosd;

namespace {

FeatureTensor random_tensor(std::mt19937_64& rng, std::size_t h, std::size_t w, std::size_t d) {
  std::uniform_real_distribution<float> value(-1.0f, 3.0f);
  FeatureTensor t(h, w, d);
  for (auto& v : t.values) v = value(rng);
  return t;
}

// Bin of cell `x` along an axis of `extent` cells split into `count` bins:
// the last bin whose start does not exceed x.
std::size_t bin_of(std::size_t x, std::size_t extent, std::size_t count) {
  std::size_t bin = 0;
  for (std::size_t b = 0; b < count; ++b) {
    if (b * extent / count <= x) bin = b;
  }
  return bin;
}

}  // namespace

TEST_CASE("a box over one cell replicates that cell into every bin") {
  std::mt19937_64 rng(1);
  const FeatureTensor t = random_tensor(rng, 14, 14, 5);
  const ImageSize image{224, 224};
  const RegionDescriptor d = roi_pool(t, Box{32, 48, 48, 64}, image, 2);  // cell (3, 2)
  REQUIRE(d.vector.size() == 4 * 5);
  for (std::size_t b = 0; b < 4; ++b) {
    for (std::size_t c = 0; c < 5; ++c) CHECK(d.vector[b * 5 + c] == t.at(3, 2, c));
  }
}

TEST_CASE("a constant tensor pools to a constant per channel") {
  FeatureTensor t(9, 7, 3);
  for (std::size_t r = 0; r < 9; ++r) {
    for (std::size_t c = 0; c < 7; ++c) {
      for (std::size_t d = 0; d < 3; ++d) t.at(r, c, d) = static_cast<float>(d) + 0.5f;
    }
  }
  const RegionDescriptor d = roi_pool(t, Box{10, 10, 60, 80}, {70, 90});
  for (std::size_t b = 0; b < 9; ++b) {
    for (std::size_t c = 0; c < 3; ++c) CHECK(d.vector[b * 3 + c] == static_cast<float>(c) + 0.5f);
  }
}

TEST_CASE("full-image pooling matches a naive channelwise max") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t h = 3 + rng() % 12, w = 3 + rng() % 12, depth = 1 + rng() % 6;
    const std::size_t grid = 1 + rng() % 3;
    const FeatureTensor t = random_tensor(rng, h, w, depth);
    const ImageSize image{w * 16, h * 16};
    const RegionDescriptor d = roi_pool(t, Box{0, 0, double(image.width), double(image.height)}, image, grid);
    std::vector<float> want(grid * grid * depth, -std::numeric_limits<float>::infinity());
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const std::size_t bin = bin_of(r, h, grid) * grid + bin_of(c, w, grid);
        for (std::size_t k = 0; k < depth; ++k) want[bin * depth + k] = std::max(want[bin * depth + k], t.at(r, c, k));
      }
    }
    CHECK(d.vector == want);
  }
}

TEST_CASE("pooling is homogeneous under positive scaling") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const FeatureTensor t = random_tensor(rng, 10, 12, 4);
    const float scale = 0.1f + static_cast<float>(rng() % 100) / 10.0f;
    FeatureTensor scaled = t;
    for (auto& v : scaled.values) v *= scale;
    const Box box{double(rng() % 60), double(rng() % 50), 100.0 + double(rng() % 90), 90.0 + double(rng() % 60)};
    const ImageSize image{192, 160};
    const RegionDescriptor a = roi_pool(t, box, image), b = roi_pool(scaled, box, image);
    for (std::size_t k = 0; k < a.vector.size(); ++k) CHECK(std::abs(b.vector[k] - scale * a.vector[k]) < 1e-5 * std::max(1.0f, std::abs(b.vector[k])));
  }
}

TEST_CASE("clamping a valid box changes nothing") {
  std::mt19937_64 rng(4);
  const FeatureTensor t = random_tensor(rng, 8, 8, 3);
  const ImageSize image{128, 128};
  const Box box{5, 17, 90, 111};
  CHECK(roi_pool(t, box, image).vector == roi_pool(t, clamp_to_image(box, image), image).vector);
}

TEST_CASE("cosine basics") {
  const std::vector<float> a{1.0f, 2.0f, 3.0f}, b{-2.0f, 1.0f, 0.0f}, z{0.0f, 0.0f, 0.0f};
  CHECK(cosine(a, a) == doctest::Approx(1.0));
  CHECK(cosine(a, b) == 0.0);
  CHECK(cosine(a, z) == 0.0);
  const std::vector<float> short_vec{1.0f};
  CHECK_THROWS_AS(cosine(a, short_vec), Error);
}

TEST_CASE("cosine matches an extended-precision recomputation") {
  std::mt19937_64 rng(5);
  std::normal_distribution<float> value(0.0f, 1.0f);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> a(64), b(64);
    for (auto& v : a) v = value(rng);
    for (auto& v : b) v = value(rng);
    long double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < 64; ++i) {
      dot += static_cast<long double>(a[i]) * b[i];
      na += static_cast<long double>(a[i]) * a[i];
      nb += static_cast<long double>(b[i]) * b[i];
    }
    CHECK(std::abs(cosine(a, b) - static_cast<double>(dot / std::sqrt(na * nb))) < 1e-6);
  }
}

TEST_CASE("described proposals are unit length rows") {
  std::mt19937_64 rng(6);
  FeatureTensor t = random_tensor(rng, 6, 6, 4);
  for (auto& v : t.values) v = std::abs(v);
  ProposalSet set;
  set.image_id = "img";
  set.proposals.push_back({Box{0, 0, 96, 96}, 0, "relu5_3", 0});
  set.proposals.push_back({Box{16, 16, 48, 64}, 0, "relu5_3", 1});
  const DescriptorSet descs = describe_proposals(t, set, {96, 96});
  REQUIRE(descs.rows() == 2);
  CHECK(descs.dim == 9 * 4);
  for (std::size_t k = 0; k < 2; ++k) {
    double sq = 0.0;
    for (float v : descs.row(k)) sq += double(v) * v;
    CHECK(std::sqrt(sq) == doctest::Approx(1.0));
  }
  const std::vector<std::size_t> rows{1};
  const DescriptorSet only = select_rows(descs, rows);
  REQUIRE(only.rows() == 1);
  CHECK(std::equal(only.row(0).begin(), only.row(0).end(), descs.row(1).begin()));
}

TEST_CASE("descriptor cache round-trips") {
  testing::TempDir dir;
  DescriptorSet set;
  set.dim = 3;
  set.values = {1, 0, 0, 0, 0.6f, 0.8f};
  save_descriptor_cache(set, dir / "c.npy");
  const DescriptorSet back = load_descriptor_cache(dir / "c.npy");
  CHECK(back.dim == 3);
  CHECK(back.values == set.values);
}
