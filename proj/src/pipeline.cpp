#include "rosd/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>

#include "json.hpp"
#include "rosd/discovery.hpp"
#include "rosd/errors.hpp"
#include "rosd/evaluation.hpp"
#include "rosd/largescale.hpp"
#include "rosd/matching.hpp"
#include "rosd/proposals.hpp"
#include "rosd/region_features.hpp"

namespace rosd {
namespace {

using nlohmann::json;

// Runs f(index) for every index with up to `workers` threads; the first
// exception is rethrown after all threads stop.
template <class F>
void parallel_for(std::size_t count, std::size_t workers, F&& f) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    try {
      for (std::size_t i = next++; i < count; i = next++) f(i);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = count;
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
}

template <class F>
auto with_image(const std::string& image_id, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), "image " + image_id + ": " + e.detail());
  }
}

json config_slice(const PipelineConfig& config, std::initializer_list<const char*> keys) {
  const json doc = json::parse(config_to_json(config, false));
  json out = json::object();
  for (const char* k : keys) out[k] = doc.at(k);
  return out;
}

std::string solution_name(std::size_t run) { return "solution_seed" + std::to_string(run) + ".jsonl"; }

MaskRule mask_rule(const std::string& s) { return s == "disjunction" ? MaskRule::Disjunction : MaskRule::Conjunction; }
MeanScope mean_scope(const std::string& s) {
  return s == "retained" ? MeanScope::RetainedLocations : MeanScope::AllLocations;
}
EvalSetting eval_setting(const std::string& s) {
  return s == "colocalization" ? EvalSetting::Colocalization : EvalSetting::Discovery;
}

struct Stamp {
  std::string hash;
  std::vector<std::string> outputs;
};

std::string shortlist_name(std::size_t run, std::size_t part) {
  return "shortlist_seed" + std::to_string(run) + "_part" + std::to_string(part) + ".jsonl";
}

// Hash recorded in the header of a stage output, or "" when the file is
// missing or has no readable header.
std::string header_hash(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) return {};
  try {
    const std::string text = read_file(path);
    const json doc = path.extension() == ".json" ? json::parse(text) : json::parse(text.substr(0, text.find('\n')));
    return doc.at("header").at("hash").get<std::string>();
  } catch (const std::exception&) {
    return {};
  }
}

// Shortlist file of one stage-1 part: a header line carrying the part index
// and its stored entry count, then one line per member image.
void write_shortlist(const fs::path& path, const std::string& header, std::size_t part,
                     const std::vector<std::size_t>& members, const std::vector<std::string>& ids,
                     const StageOneResult& stage1) {
  json head = json::parse(header);
  head["part"] = part;
  head["entries"] = stage1.part_entries[part];
  std::string text = head.dump() + "\n";
  for (std::size_t i : members) {
    text += json{{"image_id", ids[i]}, {"shortlist", stage1.shortlists[i]}}.dump() + "\n";
  }
  write_file_atomic(path, text);
}

bool read_shortlist(const fs::path& path, const std::string& hash, std::size_t part, const std::vector<std::string>& ids,
                    StageOneResult& stage1) {
  if (header_hash(path) != hash) return false;
  const std::string text = read_file(path);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
  std::size_t start = 0;
  bool first = true;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const json line = json::parse(text.substr(start, end - start));
    start = end + 1;
    if (first) {
      if (line.at("part").get<std::size_t>() != part) return false;
      stage1.part_entries[part] = line.at("entries").get<std::uint64_t>();
      first = false;
      continue;
    }
    auto it = index.find(line.at("image_id").get<std::string>());
    if (it == index.end()) return false;
    stage1.shortlists[it->second] = line.at("shortlist").get<std::vector<std::size_t>>();
  }
  return !first;
}

std::optional<Stamp> read_stamp(const fs::path& dir, std::string_view stage) {
  const fs::path path = dir / "stamps" / (std::string(stage) + ".json");
  std::error_code ec;
  if (!fs::exists(path, ec)) return std::nullopt;
  try {
    const json doc = json::parse(read_file(path));
    return Stamp{doc.at("hash").get<std::string>(), doc.at("outputs").get<std::vector<std::string>>()};
  } catch (const std::exception&) {
    return std::nullopt;  // a damaged stamp just forces a rerun
  }
}

void write_stamp(const fs::path& dir, std::string_view stage, const Stamp& stamp) {
  fs::create_directories(dir / "stamps");
  const json doc = {{"stage", stage}, {"hash", stamp.hash}, {"outputs", stamp.outputs}};
  write_file_atomic(dir / "stamps" / (std::string(stage) + ".json"), doc.dump(2) + "\n");
}

bool outputs_exist(const fs::path& dir, const std::vector<std::string>& outputs) {
  std::error_code ec;
  return std::all_of(outputs.begin(), outputs.end(), [&](const std::string& o) { return fs::exists(dir / o, ec); });
}

std::string upstream_hash(const fs::path& dir, std::string_view stage) {
  auto stamp = read_stamp(dir, stage);
  if (!stamp || !outputs_exist(dir, stamp->outputs)) {
    throw Error(ErrorCode::InvalidArgument, "no outputs of stage '" + std::string(stage) + "' in " + dir.string() +
                                                "; run it first");
  }
  return stamp->hash;
}

DatasetManifest load_checked_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::error_code ec;
  if (!fs::exists(path, ec)) {
    throw Error(ErrorCode::InvalidArgument, "no manifest.json in " + dir.string());
  }
  DatasetManifest manifest = load_manifest(path);
  const auto violations = validate_manifest(manifest);
  if (!violations.empty()) {
    std::string msg = std::to_string(violations.size()) + " manifest violation(s)";
    for (std::size_t v = 0; v < std::min<std::size_t>(violations.size(), 5); ++v) {
      msg += "; image " + violations[v].image_id + " " + violations[v].field + ": " + violations[v].message;
    }
    throw Error(ErrorCode::InvalidArgument, msg);
  }
  if (manifest.images.empty()) throw Error(ErrorCode::InvalidArgument, "manifest lists no images");
  return manifest;
}

std::vector<std::string> manifest_ids(const DatasetManifest& manifest) {
  std::vector<std::string> ids;
  for (const auto& r : manifest.images) ids.push_back(r.image_id);
  return ids;
}

std::string header_line(const PipelineConfig& config, std::string_view stage, const std::string& hash) {
  json h = {{"header", {{"stage", stage}, {"hash", hash}, {"config", json::parse(config_to_json(config, false))}}}};
  return h.dump() + "\n";
}

std::vector<ProposalSet> load_proposals(const fs::path& dir, const std::vector<std::string>& ids) {
  const std::string text = read_file(dir / "proposals.jsonl");
  std::map<std::string, ProposalSet> by_id;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const std::string_view line(text.data() + start, end - start);
    if (!line.empty() && line.find("\"header\"") == std::string_view::npos) {
      ProposalSet set = proposals_from_jsonl_line(line);
      by_id[set.image_id] = std::move(set);
    }
    start = end + 1;
  }
  std::vector<ProposalSet> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error(ErrorCode::InvalidArgument, "image " + id + " missing from proposals.jsonl");
    out.push_back(std::move(it->second));
  }
  return out;
}

std::vector<DescriptorSet> load_regions(const fs::path& dir, const std::vector<std::string>& ids) {
  std::vector<DescriptorSet> out;
  for (const auto& id : ids) {
    out.push_back(with_image(id, [&] { return load_descriptor_cache(dir / "regions" / (id + ".npy")); }));
  }
  return out;
}

std::vector<GlobalDescriptor> load_globals(const DatasetManifest& manifest) {
  std::vector<GlobalDescriptor> out;
  for (const auto& r : manifest.images) {
    out.push_back(with_image(r.image_id, [&] { return load_descriptor(manifest.resolve(r.descriptor_path), r.image_id); }));
  }
  return out;
}

NeighborSets load_neighbors(const fs::path& dir, const std::vector<std::string>& ids) {
  const json doc = json::parse(read_file(dir / "neighbors.json"));
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index[ids[i]] = i;
  NeighborSets sets;
  sets.image_ids = ids;
  sets.lists.resize(ids.size());
  const json& lists = doc.at("neighbors");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (const auto& j : lists.at(ids[i])) {
      auto it = index.find(j.get<std::string>());
      if (it == index.end()) throw Error(ErrorCode::InvalidArgument, "neighbors.json names unknown image " + j.dump());
      sets.lists[i].push_back(it->second);
    }
  }
  return sets;
}

std::vector<std::vector<std::size_t>> labels_of(const std::vector<ProposalSet>& sets) {
  std::vector<std::vector<std::size_t>> labels;
  for (const auto& s : sets) labels.push_back(s.group_labels());
  return labels;
}

ProposalSet subset(const ProposalSet& set, std::span<const std::size_t> rows) {
  ProposalSet out;
  out.image_id = set.image_id;
  out.groups = set.groups;
  for (std::size_t k : rows) out.proposals.push_back(set.proposals.at(k));
  return out;
}

// Final boxes of image i; images with nothing selected get none.
std::vector<Box> final_boxes(const DiscoveryProblem& problem, const DiscoverySolution& solution, std::size_t i,
                             const ProposalSet& proposals, const PipelineConfig::Discover& d) {
  if (solution.selected(i).empty()) return {};
  if (d.postprocess == "multi") {
    std::vector<Box> boxes;
    for (std::size_t k : postprocess_multi(problem, solution, i, proposals, d.nms_iou, d.max_regions)) {
      boxes.push_back(proposals.proposals[k].box);
    }
    return boxes;
  }
  return {postprocess_single(problem, solution, i, proposals)};
}

DiscoveryConfig discovery_config(const PipelineConfig::Discover& d, std::uint64_t seed, std::size_t workers) {
  DiscoveryConfig c;
  c.nu = d.nu;
  c.tau = d.tau;
  c.use_groups = d.use_groups;
  c.max_sweeps = d.max_sweeps;
  c.seed = seed;
  c.mode = DiscoveryMode::Standard;
  c.workers = workers;
  return c;
}

}  // namespace

Pipeline::Pipeline(fs::path state_dir, PipelineConfig config, std::ostream& log)
    : dir_(std::move(state_dir)), config_(std::move(config)), log_(log) {
  validate_config(config_);
  workers_ = config_.workers ? config_.workers : std::max(1u, std::thread::hardware_concurrency());
}

std::string Pipeline::stage_hash(std::string_view stage) const {
  json basis;
  if (stage == "synth") {
    basis = config_slice(config_, {"synth", "seed"});
  } else if (stage == "propose") {
    basis = config_slice(config_, {"proposals"});
    basis["manifest"] = hex64(fnv1a64(read_file(dir_ / "manifest.json")));
  } else if (stage == "score") {
    basis = config_slice(config_, {"score", "setting"});
    basis["upstream"] = upstream_hash(dir_, "propose");
  } else if (stage == "discover") {
    basis = config_slice(config_, {"discover", "seed", "runs"});
    basis["upstream"] = upstream_hash(dir_, "score");
  } else if (stage == "discover-large") {
    basis = config_slice(config_, {"large", "discover", "score", "seed", "runs"});
    basis["upstream"] = upstream_hash(dir_, "propose");
  } else if (stage == "evaluate") {
    basis = config_slice(config_, {"evaluate", "setting", "runs"});
    basis["upstream"] = upstream_hash(dir_, config_.evaluate.source == "large" ? "discover-large" : "discover");
    basis["manifest"] = hex64(fnv1a64(read_file(dir_ / "manifest.json")));
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown stage " + std::string(stage));
  }
  return hex64(fnv1a64(std::string(stage) + "\n" + basis.dump()));
}

StageStatus Pipeline::synth() {
  const std::string hash = stage_hash("synth");
  const std::vector<std::string> outputs = {"manifest.json"};
  if (auto s = read_stamp(dir_, "synth"); s && s->hash == hash && outputs_exist(dir_, s->outputs)) {
    log_ << "synth: up to date (" << hash << ")\n";
    return StageStatus::UpToDate;
  }
  SyntheticOptions opt;
  opt.n_images = config_.synth.images;
  opt.classes = config_.synth.classes;
  opt.noise_level = config_.synth.noise;
  opt.part_contrast = config_.synth.part_contrast;
  opt.seed = derive_seed(config_.seed, "synth");
  opt.grid = config_.synth.grid;
  opt.depth = config_.synth.depth;
  opt.image_size = config_.synth.image_size;
  opt.min_objects = config_.synth.min_objects;
  opt.max_objects = config_.synth.max_objects;
  opt.distractor = config_.synth.distractor;
  const auto dataset = generate_synthetic(opt);
  write_synthetic(dataset, dir_);
  write_stamp(dir_, "synth", {hash, outputs});
  log_ << "synth: wrote " << dataset.images.size() << " images to " << dir_.string() << "\n";
  return StageStatus::Ran;
}

StageStatus Pipeline::propose() {
  const DatasetManifest manifest = load_checked_manifest(dir_);
  const std::string hash = stage_hash("propose");
  if (auto s = read_stamp(dir_, "propose"); s && s->hash == hash && outputs_exist(dir_, s->outputs)) {
    log_ << "propose: up to date (" << hash << ")\n";
    return StageStatus::UpToDate;
  }
  ProposalParams params;
  params.alpha = config_.proposals.alpha;
  params.beta = config_.proposals.beta;
  params.max_maxima = config_.proposals.max_maxima;
  params.threshold_count = config_.proposals.threshold_count;
  params.mask_rule = mask_rule(config_.proposals.mask_rule);
  params.mean_scope = mean_scope(config_.proposals.mean_scope);

  const std::size_t n = manifest.images.size();
  std::vector<std::string> lines(n);
  std::vector<std::size_t> counts(n);
  std::vector<std::string> outputs = {"proposals.jsonl"};
  fs::create_directories(dir_ / "regions");
  auto tensor_path = [&](const ImageRecord& r, const std::string& layer) {
    auto it = r.tensor_paths.find(layer);
    if (it == r.tensor_paths.end()) throw Error(ErrorCode::InvalidArgument, "no tensor for layer " + layer);
    return manifest.resolve(it->second);
  };
  parallel_for(n, workers_, [&](std::size_t i) {
    const ImageRecord& r = manifest.images[i];
    with_image(r.image_id, [&] {
      std::vector<ProposalSet> per_layer;
      for (const auto& layer : config_.proposals.layers) {
        const FeatureTensor t = load_tensor(tensor_path(r, layer), layer);
        per_layer.push_back(generate_for_layer(t, params, r.size(), r.image_id));
      }
      const ProposalSet fused = fuse_layers(per_layer);
      const FeatureTensor pool = load_tensor(tensor_path(r, config_.proposals.pool_layer), config_.proposals.pool_layer);
      save_descriptor_cache(describe_proposals(pool, fused, r.size(), config_.proposals.pool_grid),
                            dir_ / "regions" / (r.image_id + ".npy"));
      lines[i] = proposals_to_jsonl_line(fused) + "\n";
      counts[i] = fused.size();
      return 0;
    });
  });
  std::string text = header_line(config_, "propose", hash);
  std::size_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    text += lines[i];
    total += counts[i];
    outputs.push_back("regions/" + manifest.images[i].image_id + ".npy");
  }
  write_file_atomic(dir_ / "proposals.jsonl", text);
  write_stamp(dir_, "propose", {hash, outputs});
  log_ << "propose: " << total << " proposals over " << n << " images\n";
  return StageStatus::Ran;
}

StageStatus Pipeline::score() {
  const DatasetManifest manifest = load_checked_manifest(dir_);
  const std::string hash = stage_hash("score");
  const std::vector<std::string> outputs = {"neighbors.json", "scores.bin", "scores.index.json"};
  if (auto s = read_stamp(dir_, "score"); s && s->hash == hash && outputs_exist(dir_, s->outputs)) {
    log_ << "score: up to date (" << hash << ")\n";
    return StageStatus::UpToDate;
  }
  const auto ids = manifest_ids(manifest);
  const auto globals = load_globals(manifest);
  const auto regions = load_regions(dir_, ids);
  const std::size_t n = ids.size();

  NeighborSets neighbors;
  neighbors.image_ids = ids;
  neighbors.lists.resize(n);
  std::map<std::string, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string label =
        config_.setting == "colocalization" ? manifest.images[i].class_label.value_or("") : std::string();
    if (config_.setting == "colocalization" && label.empty()) {
      throw Error(ErrorCode::UnlabeledImage, "image " + ids[i] + " has no class label (colocalization setting)");
    }
    classes[label].push_back(i);
  }
  for (const auto& [label, members] : classes) {
    if (members.size() < 2) continue;
    std::vector<GlobalDescriptor> subset_globals;
    for (std::size_t i : members) subset_globals.push_back(globals[i]);
    const NeighborSets local = prefilter_neighbors(subset_globals, std::min(config_.score.neighbors, members.size() - 1));
    for (std::size_t m = 0; m < members.size(); ++m) {
      for (std::size_t j : local.of(m)) neighbors.lists[members[m]].push_back(members[j]);
    }
  }

  const ScoreStore store = score_all(neighbors, regions, config_.score.entries, workers_);
  json doc;
  doc["header"] = json::parse(header_line(config_, "score", hash))["header"];
  doc["images"] = ids;
  json lists = json::object();
  for (std::size_t i = 0; i < n; ++i) lists[ids[i]] = neighbors.ids_of(i);
  doc["neighbors"] = std::move(lists);
  write_file_atomic(dir_ / "neighbors.json", doc.dump(1) + "\n");
  save_score_store(store, ids, dir_ / "scores");
  write_stamp(dir_, "score", {hash, outputs});
  log_ << "score: " << store.pair_count() << " image pairs, " << store.entry_count() << " stored entries (budget "
       << memory_cost(neighbors, config_.score.entries) << ")\n";
  return StageStatus::Ran;
}

StageStatus Pipeline::discover() {
  const DatasetManifest manifest = load_checked_manifest(dir_);
  const std::string hash = stage_hash("discover");
  std::vector<std::string> outputs;
  for (std::size_t r = 0; r < config_.runs; ++r) outputs.push_back(solution_name(r));
  if (auto s = read_stamp(dir_, "discover"); s && s->hash == hash && outputs_exist(dir_, s->outputs)) {
    log_ << "discover: up to date (" << hash << ")\n";
    return StageStatus::UpToDate;
  }
  const auto ids = manifest_ids(manifest);
  const auto proposals = load_proposals(dir_, ids);
  const ScoreStore store = load_score_store(dir_ / "scores", ids);
  const DiscoveryProblem problem(load_neighbors(dir_, ids), labels_of(proposals), store);

  for (std::size_t r = 0; r < config_.runs; ++r) {
    const DiscoveryConfig dc = discovery_config(config_.discover, derive_seed(config_.seed, "discover", r), workers_);
    const DiscoverySolution solution = run(problem, dc);
    auto records = make_records(problem, solution);
    for (std::size_t i = 0; i < records.size(); ++i) {
      records[i].boxes = with_image(ids[i], [&] { return final_boxes(problem, solution, i, proposals[i], config_.discover); });
    }
    write_file_atomic(dir_ / solution_name(r), header_line(config_, "discover", hash) + records_to_jsonl(records));
    log_ << "discover: run " << r << " objective " << solution.objective << " after " << solution.sweeps_run
         << " sweep(s)" << (solution.converged ? "" : " (sweep cap reached)") << "\n";
  }
  write_stamp(dir_, "discover", {hash, outputs});
  return StageStatus::Ran;
}

StageStatus Pipeline::discover_large() {
  const DatasetManifest manifest = load_checked_manifest(dir_);
  const std::string hash = stage_hash("discover-large");
  std::vector<std::string> outputs;
  for (std::size_t r = 0; r < config_.runs; ++r) {
    outputs.push_back("large/" + solution_name(r));
    outputs.push_back("large/plan_seed" + std::to_string(r) + ".json");
    for (std::size_t p = 0; p < config_.large.parts; ++p) outputs.push_back("large/" + shortlist_name(r, p));
  }
  if (auto s = read_stamp(dir_, "discover-large"); s && s->hash == hash && outputs_exist(dir_, s->outputs)) {
    log_ << "discover-large: up to date (" << hash << ")\n";
    return StageStatus::UpToDate;
  }
  const auto ids = manifest_ids(manifest);
  const auto proposals = load_proposals(dir_, ids);
  CollectionData data;
  data.globals = load_globals(manifest);
  data.regions = load_regions(dir_, ids);
  data.group_labels = labels_of(proposals);
  const std::size_t n = ids.size();
  const std::size_t cap = config_.score.neighbors;
  const std::uint64_t memory =
      config_.large.memory_limit ? config_.large.memory_limit
                                 : static_cast<std::uint64_t>(n) * cap * config_.large.stage2_entries;
  fs::create_directories(dir_ / "large");
  std::mutex log_mutex;
  auto log_part = [&](std::size_t r, std::size_t p, const char* what) {
    std::lock_guard lock(log_mutex);
    log_ << "discover-large: run " << r << " part " << p << " " << what << "\n";
  };

  for (std::size_t r = 0; r < config_.runs; ++r) {
    const BudgetPlan plan = plan_budget(n, config_.large.parts, cap, memory, derive_seed(config_.seed, "partition", r));
    const fs::path solution_path = dir_ / "large" / solution_name(r);
    const fs::path plan_path = dir_ / "large" / ("plan_seed" + std::to_string(r) + ".json");
    if (header_hash(solution_path) == hash && header_hash(plan_path) == hash) {
      log_ << "discover-large: run " << r << " up to date\n";
      continue;
    }
    TwoStageOptions options;
    options.stage1 = discovery_config(config_.discover, derive_seed(config_.seed, "discover-large-1", r), workers_);
    options.stage1.nu = config_.large.stage1_nu;
    options.stage1.tau = config_.large.stage1_tau;
    options.stage1.use_groups = config_.large.stage1_use_groups;
    options.stage1.mode = DiscoveryMode::Proxy;
    options.stage2 = discovery_config(config_.discover, derive_seed(config_.seed, "discover-large-2", r), workers_);
    options.workers = workers_;
    options.global_prefilter = config_.large.global_prefilter;

    // Stage 1 part by part; a part whose shortlist file carries the current
    // hash is read back instead of recomputed.
    StageOneResult stage1;
    stage1.shortlists.resize(n);
    stage1.part_entries.assign(plan.parts, 0);
    TwoStageOptions part_options = options;
    part_options.workers = 1;
    part_options.stage1.workers = 1;
    parallel_for(plan.parts, workers_, [&](std::size_t p) {
      const fs::path path = dir_ / "large" / shortlist_name(r, p);
      if (read_shortlist(path, hash, p, ids, stage1)) {
        log_part(r, p, "reused");
        return;
      }
      StageOneResult part = run_stage_one_part(data, plan, p, part_options);
      for (std::size_t i : plan.members[p]) stage1.shortlists[i] = std::move(part.shortlists[i]);
      stage1.part_entries[p] = part.part_entries[p];
      write_shortlist(path, header_line(config_, "discover-large", hash), p, plan.members[p], ids, stage1);
      log_part(r, p, "done");
    });
    const TwoStageResult result = run_stage_two(data, plan, std::move(stage1), options);
    const DiscoveryProblem problem = result.stage2_problem();

    auto records = make_records(problem, result.solution);
    for (std::size_t i = 0; i < n; ++i) {
      const ProposalSet shortlisted = subset(proposals[i], result.stage1.shortlists[i]);
      records[i].boxes =
          with_image(ids[i], [&] { return final_boxes(problem, result.solution, i, shortlisted, config_.discover); });
      for (auto& k : records[i].selected) k = result.original_index(i, k);
    }
    write_file_atomic(solution_path, header_line(config_, "discover-large", hash) + records_to_jsonl(records));

    json plan_doc;
    plan_doc["header"] = json::parse(header_line(config_, "discover-large", hash))["header"];
    plan_doc["memory_limit"] = plan.memory_limit;
    plan_doc["parts"] = plan.parts;
    plan_doc["neighbor_cap"] = plan.neighbor_cap;
    plan_doc["k1"] = plan.k1;
    plan_doc["k2"] = plan.k2;
    plan_doc["seed"] = plan.seed;
    json members = json::array();
    for (const auto& part : plan.members) {
      json m = json::array();
      for (std::size_t i : part) m.push_back(ids[i]);
      members.push_back(std::move(m));
    }
    plan_doc["members"] = std::move(members);
    plan_doc["part_entries"] = result.stage1.part_entries;
    plan_doc["stage2_entries"] = result.stage2_entries;
    write_file_atomic(plan_path, plan_doc.dump(1) + "\n");
    log_ << "discover-large: run " << r << " K1 " << plan.k1 << " K2 " << plan.k2 << ", objective "
         << result.solution.objective << "\n";
  }
  write_stamp(dir_, "discover-large", {hash, outputs});
  return StageStatus::Ran;
}

StageStatus Pipeline::evaluate(std::ostream& out, bool csv) {
  const DatasetManifest manifest = load_checked_manifest(dir_);
  const std::string hash = stage_hash("evaluate");
  const std::vector<std::string> outputs = {"report.json", "report.txt", "report.csv"};
  if (auto s = read_stamp(dir_, "evaluate"); s && s->hash == hash && outputs_exist(dir_, s->outputs)) {
    log_ << "evaluate: up to date (" << hash << ")\n";
    out << read_file(dir_ / (csv ? "report.csv" : "report.txt"));
    return StageStatus::UpToDate;
  }
  const fs::path source = config_.evaluate.source == "large" ? dir_ / "large" : dir_;
  const auto truth = truth_from_manifest(manifest);
  if (truth.empty()) throw Error(ErrorCode::MissingGroundTruth, "no image in the manifest has ground-truth boxes");
  std::map<std::string, std::string> labels;
  bool all_labelled = true;
  for (const auto& r : manifest.images) {
    if (r.class_label && !r.class_label->empty()) {
      labels[r.image_id] = *r.class_label;
    } else {
      all_labelled = false;
    }
  }

  const EvalSetting setting = eval_setting(config_.setting);
  std::vector<EvalReport> loc_runs, det_runs, ret_runs;
  for (std::size_t r = 0; r < config_.runs; ++r) {
    const fs::path path = source / solution_name(r);
    std::error_code ec;
    if (!fs::exists(path, ec)) throw Error(ErrorCode::InvalidArgument, "missing " + path.string());
    std::map<std::string, std::vector<Box>> predictions;
    std::map<std::string, std::vector<std::string>> edges;
    for (auto& rec : records_from_jsonl(read_file(path))) {
      predictions[rec.image_id] = std::move(rec.boxes);
      edges[rec.image_id] = std::move(rec.neighbors);
    }
    loc_runs.push_back(corloc(predictions, truth, config_.evaluate.iou_threshold, setting));
    det_runs.push_back(detection_rate(predictions, truth, config_.evaluate.zeta, setting));
    if (all_labelled) ret_runs.push_back(corret(edges, labels));
  }

  json doc;
  doc["header"] = json::parse(header_line(config_, "evaluate", hash))["header"];
  doc["source"] = config_.evaluate.source;
  doc["corloc"] = json::parse(report_to_json(loc_runs));
  doc["detection_rate"] = json::parse(report_to_json(det_runs));
  if (!ret_runs.empty()) doc["corret"] = json::parse(report_to_json(ret_runs));
  std::string table = report_to_table(loc_runs) + "\n" + report_to_table(det_runs);
  std::string csv_text = report_to_csv(loc_runs);
  const std::string det_csv = report_to_csv(det_runs);
  csv_text += det_csv.substr(det_csv.find('\n') + 1);
  if (!ret_runs.empty()) {
    table += "\n" + report_to_table(ret_runs);
    const std::string ret_csv = report_to_csv(ret_runs);
    csv_text += ret_csv.substr(ret_csv.find('\n') + 1);
  }
  write_file_atomic(dir_ / "report.json", doc.dump(2) + "\n");
  write_file_atomic(dir_ / "report.txt", table);
  write_file_atomic(dir_ / "report.csv", csv_text);
  write_stamp(dir_, "evaluate", {hash, outputs});
  out << (csv ? csv_text : table);
  return StageStatus::Ran;
}

}  // namespace rosd
