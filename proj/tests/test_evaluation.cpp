#include <random>

#include "doctest.h"
#include "rosd/errors.hpp"
#include "rosd/evaluation.hpp"
#include "rosd/matching.hpp"
#include "rosd/proposals.hpp"
#include "support.hpp"

using namespace rosd;

namespace {

ImageTruth truth(const std::string& id, const std::string& label, std::vector<Box> boxes) {
  ImageTruth t{id, label, {}};
  for (const auto& b : boxes) t.boxes.push_back({b, ""});
  return t;
}

// Four images, two classes; image 0 and 3 are hit, 1 is a near miss, 2 has no prediction.
struct Fixture {
  std::vector<ImageTruth> truths{truth("a", "cat", {Box{0, 0, 10, 10}}), truth("b", "cat", {Box{0, 0, 10, 10}}),
                                 truth("c", "dog", {Box{0, 0, 10, 10}, Box{20, 20, 30, 30}}),
                                 truth("d", "dog", {Box{50, 50, 60, 60}})};
  std::map<std::string, std::vector<Box>> predictions{
      {"a", {Box{0, 0, 10, 10}}}, {"b", {Box{5, 0, 15, 10}}}, {"d", {Box{51, 50, 60, 60}}}};
};

Box random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.0, 80.0), size(1.0, 40.0);
  const double x = pos(rng), y = pos(rng);
  return Box{x, y, x + size(rng), y + size(rng)};
}

}  // namespace

TEST_CASE("iou") {
  CHECK(iou(Box{0, 0, 10, 10}, Box{0, 0, 10, 10}) == 1.0);
  CHECK(iou(Box{0, 0, 10, 10}, Box{20, 20, 30, 30}) == 0.0);
  CHECK(iou(Box{0, 0, 10, 10}, Box{5, 0, 15, 10}) == doctest::Approx(50.0 / 150.0));
  CHECK(iou(Box{0, 0, 0, 10}, Box{0, 0, 10, 10}) == 0.0);
}

TEST_CASE("iou is symmetric and bounded") {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const Box a = random_box(rng), b = random_box(rng);
    CHECK(iou(a, b) == iou(b, a));
    CHECK(iou(a, b) >= 0.0);
    CHECK(iou(a, b) <= 1.0);
    CHECK(iou(a, a) == 1.0);
  }
}

TEST_CASE("corloc of perfect and empty predictions") {
  Fixture f;
  std::map<std::string, std::vector<Box>> perfect;
  for (const auto& t : f.truths) perfect[t.image_id] = {t.boxes[0].box};
  CHECK(corloc(perfect, f.truths).overall == 100.0);
  CHECK(corloc({}, f.truths).overall == 0.0);
}

TEST_CASE("corloc of a crafted 4-image fixture") {
  Fixture f;
  const EvalReport r = corloc(f.predictions, f.truths);
  CHECK(r.overall == 50.0);  // a and d; b sits at exactly 1/3
  CHECK(r.evaluated == 4);
  CHECK(r.per_class.at("cat") == 50.0);
  CHECK(r.per_class.at("dog") == 50.0);
}

TEST_CASE("corloc uses a strict threshold") {
  const std::vector<ImageTruth> t{truth("a", "x", {Box{0, 0, 10, 10}})};
  // IoU exactly 0.5: [0,0,10,10] vs [0,0,10,20] -> 100 / 200.
  const std::map<std::string, std::vector<Box>> p{{"a", {Box{0, 0, 10, 20}}}};
  CHECK(corloc(p, t, 0.5).overall == 0.0);
  CHECK(corloc(p, t, 0.49).overall == 100.0);
}

TEST_CASE("colocalization averages class scores") {
  std::vector<ImageTruth> t{truth("a", "cat", {Box{0, 0, 10, 10}}), truth("b", "cat", {Box{0, 0, 10, 10}}),
                            truth("c", "cat", {Box{0, 0, 10, 10}}), truth("d", "dog", {Box{0, 0, 10, 10}})};
  const std::map<std::string, std::vector<Box>> p{{"a", {Box{0, 0, 10, 10}}}, {"d", {Box{0, 0, 10, 10}}}};
  CHECK(corloc(p, t, 0.5, EvalSetting::Discovery).overall == 50.0);
  CHECK(corloc(p, t, 0.5, EvalSetting::Colocalization).overall == doctest::Approx((100.0 / 3.0 + 100.0) / 2.0));
}

TEST_CASE("images without ground truth are an error") {
  const std::vector<ImageTruth> t{ImageTruth{"a", "cat", {}}};
  try {
    corloc({}, t);
    FAIL("expected MissingGroundTruth");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MissingGroundTruth);
  }
}

TEST_CASE("detection rate counts boxes") {
  Fixture f;
  std::map<std::string, std::vector<Box>> perfect;
  for (const auto& t : f.truths) {
    for (const auto& b : t.boxes) perfect[t.image_id].push_back(b.box);
  }
  CHECK(detection_rate(perfect, f.truths).overall == 100.0);

  const std::vector<ImageTruth> four{truth("a", "x", {Box{0, 0, 10, 10}, Box{20, 0, 30, 10}}),
                                     truth("b", "x", {Box{0, 0, 10, 10}, Box{20, 0, 30, 10}})};
  const std::map<std::string, std::vector<Box>> one{{"b", {Box{21, 0, 30, 10}}}};
  const EvalReport r = detection_rate(one, four);
  CHECK(r.overall == 25.0);
  CHECK(r.evaluated == 4);
}

TEST_CASE("box labels take precedence over image labels in the detection rate") {
  ImageTruth t{"a", "cat", {{Box{0, 0, 10, 10}, "dog"}, {Box{20, 0, 30, 10}, ""}}};
  const std::vector<ImageTruth> truths{t};
  const std::map<std::string, std::vector<Box>> p{{"a", {Box{0, 0, 10, 10}}}};
  const EvalReport r = detection_rate(p, truths);
  CHECK(r.per_class.at("dog") == 100.0);
  CHECK(r.per_class.at("cat") == 0.0);
}

TEST_CASE("detection rate is monotone in zeta and metrics are monotone in predictions") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ImageTruth> truths;
    std::map<std::string, std::vector<Box>> preds;
    for (int i = 0; i < 8; ++i) {
      const std::string id = "im" + std::to_string(i);
      truths.push_back(truth(id, i % 2 ? "a" : "b", {random_box(rng), random_box(rng)}));
      for (int k = 0; k < 3; ++k) preds[id].push_back(random_box(rng));
      preds[id].push_back(truths.back().boxes[0].box);
      preds[id].back().xmax += static_cast<double>(rng() % 10);
    }
    double previous = 101.0;
    for (double zeta = 0.0; zeta <= 1.0; zeta += 0.05) {
      const double v = detection_rate(preds, truths, zeta).overall;
      CHECK(v <= previous);
      previous = v;
    }
    auto more = preds;
    for (auto& [id, boxes] : more) boxes.push_back(random_box(rng));
    CHECK(corloc(more, truths).overall >= corloc(preds, truths).overall);
    CHECK(detection_rate(more, truths).overall >= detection_rate(preds, truths).overall);
  }
}

TEST_CASE("corret fixtures") {
  const std::map<std::string, std::string> labels{{"a", "cat"}, {"b", "cat"}, {"c", "dog"}, {"d", "dog"}};
  CHECK(corret({{"a", {"b"}}, {"b", {"a"}}, {"c", {"d"}}, {"d", {"c"}}}, labels).overall == 100.0);
  CHECK(corret({{"a", {"c", "d"}}, {"b", {"c"}}, {"c", {"a"}}, {"d", {"b"}}}, labels).overall == 0.0);
  CHECK(corret({{"a", {"b", "c"}}, {"c", {"d", "b"}}, {"d", {}}}, labels).overall == 50.0);
  try {
    corret({{"a", {"z"}}}, labels);
    FAIL("expected UnlabeledImage");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnlabeledImage);
  }
}

TEST_CASE("seed summaries use the sample standard deviation") {
  const std::vector<double> values{48.0, 50.0, 52.0};
  const SeedSummary s = summarize(values);
  CHECK(s.mean == 50.0);
  CHECK(s.stddev == doctest::Approx(2.0));
  CHECK(s.count == 3);
  const std::vector<double> one{7.0};
  CHECK(summarize(one).stddev == 0.0);
}

TEST_CASE("report rendering") {
  Fixture f;
  const std::vector<EvalReport> runs{corloc(f.predictions, f.truths), corloc({}, f.truths)};
  const std::string csv = report_to_csv(runs);
  CHECK(csv.find("corloc,0,overall,50.0000") != std::string::npos);
  CHECK(csv.find("corloc,1,overall,0.0000") != std::string::npos);
  const std::string table = report_to_table(runs);
  CHECK(table.find("25.00") != std::string::npos);  // mean over the two runs
  CHECK(report_to_json(runs).find("\"overall\"") != std::string::npos);
}

// ---------------------------------------------------------------------------
// Synthetic collections

TEST_CASE("the same seed gives identical dataset bytes") {
  testing::TempDir a, b;
  SyntheticOptions options;
  options.n_images = 6;
  options.noise_level = 0.05;
  write_synthetic(generate_synthetic(options), a.path());
  write_synthetic(generate_synthetic(options), b.path());
  for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a.path());
    CHECK(read_file(entry.path()) == read_file(b.path() / rel));
  }
  const DatasetManifest m = load_manifest(a / "manifest.json");
  CHECK(m.images.size() == 6);
  CHECK(validate_manifest(m).empty());
}

TEST_CASE("noise-free planted boxes are recovered at high overlap") {
  SyntheticOptions options;
  options.n_images = 30;
  options.seed = 3;
  const SyntheticDataset data = generate_synthetic(options);
  std::size_t boxes = 0, tight = 0;
  for (const auto& image : data.images) {
    const std::vector<ProposalSet> layers{generate_for_layer(image.fine, {}, image.size, image.image_id),
                                          generate_for_layer(image.coarse, {}, image.size, image.image_id)};
    const ProposalSet fused = fuse_layers(layers);
    for (const auto& gt : image.ground_truth) {
      double best = 0.0;
      for (const auto& p : fused.proposals) best = std::max(best, iou(p.box, gt.box));
      ++boxes;
      tight += best >= 0.9 ? 1 : 0;
    }
  }
  CHECK(tight == boxes);
}

TEST_CASE("global descriptors group two separated classes") {
  SyntheticOptions options;
  options.n_images = 40;
  options.classes = 2;
  options.seed = 4;
  const SyntheticDataset data = generate_synthetic(options);
  std::vector<GlobalDescriptor> globals;
  std::map<std::string, std::string> labels;
  for (const auto& image : data.images) {
    globals.push_back(image.descriptor);
    labels[image.image_id] = image.class_label;
  }
  const NeighborSets n = prefilter_neighbors(globals, 10);
  std::map<std::string, std::vector<std::string>> edges;
  for (std::size_t i = 0; i < n.size(); ++i) edges[n.image_ids[i]] = n.ids_of(i);
  CHECK(corret(edges, labels).overall >= 90.0);
}

TEST_CASE("synthetic options are validated") {
  SyntheticOptions bad;
  bad.grid = 7;
  CHECK_THROWS_AS(generate_synthetic(bad), Error);
  bad = {};
  bad.depth = 2;
  bad.classes = 4;
  CHECK_THROWS_AS(generate_synthetic(bad), Error);
  bad = {};
  bad.min_objects = 3;
  bad.max_objects = 2;
  CHECK_THROWS_AS(generate_synthetic(bad), Error);
}
