#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include "json.hpp"
#include "rosd/errors.hpp"
#include "rosd/pipeline.hpp"

namespace rosd {
namespace {

using nlohmann::json;

json to_doc(const PipelineConfig& c) {
  json doc;
  doc["seed"] = c.seed;
  doc["runs"] = c.runs;
  doc["workers"] = c.workers;
  doc["setting"] = c.setting;
  doc["synth"] = {{"images", c.synth.images},
                  {"classes", c.synth.classes},
                  {"noise", c.synth.noise},
                  {"part_contrast", c.synth.part_contrast},
                  {"grid", c.synth.grid},
                  {"depth", c.synth.depth},
                  {"image_size", c.synth.image_size},
                  {"min_objects", c.synth.min_objects},
                  {"max_objects", c.synth.max_objects},
                  {"distractor", c.synth.distractor}};
  doc["proposals"] = {{"alpha", c.proposals.alpha},
                      {"beta", c.proposals.beta},
                      {"max_maxima", c.proposals.max_maxima},
                      {"threshold_count", c.proposals.threshold_count},
                      {"mask_rule", c.proposals.mask_rule},
                      {"mean_scope", c.proposals.mean_scope},
                      {"layers", c.proposals.layers},
                      {"pool_layer", c.proposals.pool_layer},
                      {"pool_grid", c.proposals.pool_grid}};
  doc["score"] = {{"neighbors", c.score.neighbors}, {"entries", c.score.entries}};
  doc["discover"] = {{"nu", c.discover.nu},
                     {"tau", c.discover.tau},
                     {"use_groups", c.discover.use_groups},
                     {"max_sweeps", c.discover.max_sweeps},
                     {"postprocess", c.discover.postprocess},
                     {"nms_iou", c.discover.nms_iou},
                     {"max_regions", c.discover.max_regions}};
  doc["large"] = {{"parts", c.large.parts},
                  {"memory_limit", c.large.memory_limit},
                  {"stage2_entries", c.large.stage2_entries},
                  {"stage1_nu", c.large.stage1_nu},
                  {"stage1_tau", c.large.stage1_tau},
                  {"stage1_use_groups", c.large.stage1_use_groups},
                  {"global_prefilter", c.large.global_prefilter}};
  doc["evaluate"] = {{"source", c.evaluate.source},
                     {"iou_threshold", c.evaluate.iou_threshold},
                     {"zeta", c.evaluate.zeta}};
  return doc;
}

PipelineConfig from_doc(const json& d) {
  PipelineConfig c;
  c.seed = d["seed"].get<std::uint64_t>();
  c.runs = d["runs"].get<std::size_t>();
  c.workers = d["workers"].get<std::size_t>();
  c.setting = d["setting"].get<std::string>();
  const json& s = d["synth"];
  c.synth.images = s["images"].get<std::size_t>();
  c.synth.classes = s["classes"].get<std::size_t>();
  c.synth.noise = s["noise"].get<double>();
  c.synth.part_contrast = s["part_contrast"].get<double>();
  c.synth.grid = s["grid"].get<std::size_t>();
  c.synth.depth = s["depth"].get<std::size_t>();
  c.synth.image_size = s["image_size"].get<std::size_t>();
  c.synth.min_objects = s["min_objects"].get<std::size_t>();
  c.synth.max_objects = s["max_objects"].get<std::size_t>();
  c.synth.distractor = s["distractor"].get<bool>();
  const json& p = d["proposals"];
  c.proposals.alpha = p["alpha"].get<double>();
  c.proposals.beta = p["beta"].get<double>();
  c.proposals.max_maxima = p["max_maxima"].get<std::size_t>();
  c.proposals.threshold_count = p["threshold_count"].get<std::size_t>();
  c.proposals.mask_rule = p["mask_rule"].get<std::string>();
  c.proposals.mean_scope = p["mean_scope"].get<std::string>();
  c.proposals.layers = p["layers"].get<std::vector<std::string>>();
  c.proposals.pool_layer = p["pool_layer"].get<std::string>();
  c.proposals.pool_grid = p["pool_grid"].get<std::size_t>();
  c.score.neighbors = d["score"]["neighbors"].get<std::size_t>();
  c.score.entries = d["score"]["entries"].get<std::size_t>();
  const json& q = d["discover"];
  c.discover.nu = q["nu"].get<std::size_t>();
  c.discover.tau = q["tau"].get<std::size_t>();
  c.discover.use_groups = q["use_groups"].get<bool>();
  c.discover.max_sweeps = q["max_sweeps"].get<std::size_t>();
  c.discover.postprocess = q["postprocess"].get<std::string>();
  c.discover.nms_iou = q["nms_iou"].get<double>();
  c.discover.max_regions = q["max_regions"].get<std::size_t>();
  const json& l = d["large"];
  c.large.parts = l["parts"].get<std::size_t>();
  c.large.memory_limit = l["memory_limit"].get<std::uint64_t>();
  c.large.stage2_entries = l["stage2_entries"].get<std::size_t>();
  c.large.stage1_nu = l["stage1_nu"].get<std::size_t>();
  c.large.stage1_tau = l["stage1_tau"].get<std::size_t>();
  c.large.stage1_use_groups = l["stage1_use_groups"].get<bool>();
  c.large.global_prefilter = l["global_prefilter"].get<bool>();
  const json& e = d["evaluate"];
  c.evaluate.source = e["source"].get<std::string>();
  c.evaluate.iou_threshold = e["iou_threshold"].get<double>();
  c.evaluate.zeta = e["zeta"].get<double>();
  return c;
}

[[noreturn]] void bad_field(const std::string& key, const std::string& what) {
  throw Error(ErrorCode::InvalidArgument, "config field '" + key + "': " + what);
}

// Overlays `in` onto the defaults document, checking names and types.
void merge_checked(json& base, const json& in, const std::string& prefix) {
  if (!in.is_object()) bad_field(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (const auto& [key, value] : in.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) bad_field(path, "unknown field");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_checked(slot, value, path);
    } else if (slot.is_number_unsigned()) {
      if (value.is_number_unsigned()) {
        slot = value;
      } else if (value.is_number_integer() && value.get<std::int64_t>() >= 0) {
        slot = value.get<std::uint64_t>();
      } else {
        bad_field(path, "expected a nonnegative integer");
      }
    } else if (slot.is_number_float()) {
      if (!value.is_number()) bad_field(path, "expected a number");
      slot = value.get<double>();
    } else if (slot.is_boolean()) {
      if (!value.is_boolean()) bad_field(path, "expected true or false");
      slot = value;
    } else if (slot.is_string()) {
      if (!value.is_string()) bad_field(path, "expected a string");
      slot = value;
    } else if (slot.is_array()) {
      if (!value.is_array()) bad_field(path, "expected a list of strings");
      for (const auto& item : value) {
        if (!item.is_string()) bad_field(path, "expected a list of strings");
      }
      slot = value;
    }
  }
}

json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Map: {
      json obj = json::object();
      for (const auto& kv : node) obj[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return obj;
    }
    case YAML::NodeType::Sequence: {
      json arr = json::array();
      for (const auto& item : node) arr.push_back(yaml_to_json(item));
      return arr;
    }
    case YAML::NodeType::Scalar: {
      const std::string text = node.Scalar();
      if (node.Tag() == "!") return text;  // quoted
      if (text == "true" || text == "false") return text == "true";
      std::uint64_t u = 0;
      if (auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), u);
          ec == std::errc() && p == text.data() + text.size()) {
        return u;
      }
      std::int64_t i = 0;
      if (auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), i);
          ec == std::errc() && p == text.data() + text.size()) {
        return i;
      }
      char* end = nullptr;
      const double d = std::strtod(text.c_str(), &end);
      if (!text.empty() && end == text.c_str() + text.size()) return d;
      return text;
    }
    default:
      return nullptr;
  }
}

std::string pointer_for(std::string_view key) {
  std::string ptr = "/";
  for (char ch : key) ptr += ch == '.' ? '/' : ch;
  return ptr;
}

bool one_of(const std::string& v, std::initializer_list<const char*> allowed) {
  for (const char* a : allowed) {
    if (v == a) return true;
  }
  return false;
}

}  // namespace

std::string config_to_json(const PipelineConfig& config, bool include_workers) {
  json doc = to_doc(config);
  if (!include_workers) doc.erase("workers");
  return doc.dump();
}

PipelineConfig config_from_json(std::string_view text) {
  json in;
  try {
    in = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, std::string("config: ") + e.what());
  }
  json doc = to_doc(PipelineConfig{});
  merge_checked(doc, in, "");
  return from_doc(doc);
}

PipelineConfig load_config_file(const fs::path& path, const PipelineConfig& base) {
  const std::string text = read_file(path);
  json in;
  const std::string ext = path.extension().string();
  if (ext == ".yaml" || ext == ".yml") {
    try {
      in = yaml_to_json(YAML::Load(text));
    } catch (const YAML::Exception& e) {
      throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
    if (in.is_null()) in = json::object();
  } else {
    try {
      in = json::parse(text);
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
    }
  }
  json doc = to_doc(base);
  merge_checked(doc, in, "");
  return from_doc(doc);
}

void validate_config(const PipelineConfig& c) {
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) bad_field(key, what);
  };
  require(one_of(c.setting, {"discovery", "colocalization"}), "setting", "must be discovery or colocalization");
  require(c.runs >= 1, "runs", "must be at least 1");
  require(c.proposals.alpha >= 0.0 && c.proposals.alpha <= 1.0, "proposals.alpha", "must lie in [0, 1]");
  require(c.proposals.beta >= 0.0 && c.proposals.beta <= 1.0, "proposals.beta", "must lie in [0, 1]");
  require(c.proposals.max_maxima >= 1, "proposals.max_maxima", "must be at least 1");
  require(c.proposals.threshold_count >= 1, "proposals.threshold_count", "must be at least 1");
  require(one_of(c.proposals.mask_rule, {"conjunction", "disjunction"}), "proposals.mask_rule",
          "must be conjunction or disjunction");
  require(one_of(c.proposals.mean_scope, {"all", "retained"}), "proposals.mean_scope", "must be all or retained");
  require(!c.proposals.layers.empty(), "proposals.layers", "needs at least one layer");
  require(c.proposals.pool_grid >= 1, "proposals.pool_grid", "must be at least 1");
  require(c.score.neighbors >= 1, "score.neighbors", "must be at least 1");
  require(c.score.entries >= 1, "score.entries", "must be at least 1");
  require(c.discover.nu >= 1, "discover.nu", "must be at least 1");
  require(c.discover.tau >= 1, "discover.tau", "must be at least 1");
  require(c.discover.max_sweeps >= 1, "discover.max_sweeps", "must be at least 1");
  require(one_of(c.discover.postprocess, {"single", "multi"}), "discover.postprocess", "must be single or multi");
  require(c.discover.nms_iou > 0.0 && c.discover.nms_iou <= 1.0, "discover.nms_iou", "must lie in (0, 1]");
  require(c.discover.max_regions >= 1, "discover.max_regions", "must be at least 1");
  require(c.large.parts >= 1, "large.parts", "must be at least 1");
  require(c.large.stage2_entries >= 1, "large.stage2_entries", "must be at least 1");
  require(c.large.stage1_tau >= 1, "large.stage1_tau", "must be at least 1");
  require(one_of(c.evaluate.source, {"standard", "large"}), "evaluate.source", "must be standard or large");
  require(c.evaluate.iou_threshold >= 0.0 && c.evaluate.iou_threshold < 1.0, "evaluate.iou_threshold",
          "must lie in [0, 1)");
  require(c.evaluate.zeta >= 0.0 && c.evaluate.zeta < 1.0, "evaluate.zeta", "must lie in [0, 1)");
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      {"seed", "seed", "master seed; every stage derives its own"},
      {"runs", "runs", "discovery runs, averaged at evaluation"},
      {"workers", "workers", "thread cap, 0 = all cores"},
      {"setting", "setting", "discovery | colocalization"},
      {"synth.images", "images", "synthetic images"},
      {"synth.classes", "classes", "synthetic classes"},
      {"synth.noise", "noise", "synthetic noise level"},
      {"synth.part_contrast", "part-contrast", "synthetic weight of per-quadrant object patterns"},
      {"synth.grid", "grid", "synthetic fine grid size (even)"},
      {"synth.depth", "depth", "synthetic channel count"},
      {"synth.image_size", "image-size", "synthetic image side in pixels"},
      {"synth.min_objects", "min-objects", "planted objects per image, lower bound"},
      {"synth.max_objects", "max-objects", "planted objects per image, upper bound"},
      {"synth.distractor", "distractor", "add one unlabeled distractor blob"},
      {"proposals.alpha", "alpha", "persistence floor as a fraction of max global saliency"},
      {"proposals.beta", "beta", "global saliency mask as a fraction of its mean"},
      {"proposals.max_maxima", "max-maxima", "local maxima per layer (u)"},
      {"proposals.threshold_count", "threshold-count", "thresholds per local saliency map (v)"},
      {"proposals.mask_rule", "mask-rule", "conjunction | disjunction"},
      {"proposals.mean_scope", "mean-scope", "all | retained"},
      {"proposals.layers", "layers", "comma-separated layer tags to propose from"},
      {"proposals.pool_layer", "pool-layer", "layer tag pooled into region descriptors"},
      {"proposals.pool_grid", "pool-grid", "RoI pooling bins per side"},
      {"score.neighbors", "neighbors", "candidate neighbours per image (N_max)"},
      {"score.entries", "entries", "positive entries kept per score matrix (K)"},
      {"discover.nu", "nu", "max selected regions per image"},
      {"discover.tau", "tau", "max out-edges per image"},
      {"discover.use_groups", "use-groups", "one region per group (rOSD) or not (OSD)"},
      {"discover.max_sweeps", "max-sweeps", "sweep cap"},
      {"discover.postprocess", "postprocess", "single | multi"},
      {"discover.nms_iou", "nms-iou", "IoU above which multi post-processing suppresses"},
      {"discover.max_regions", "max-regions", "regions kept by multi post-processing"},
      {"large.parts", "parts", "random parts for stage one (k)"},
      {"large.memory_limit", "memory-limit", "score entry budget M, 0 = n * N * stage2-entries"},
      {"large.stage2_entries", "stage2-entries", "K2 used when the memory limit is 0"},
      {"large.stage1_nu", "stage1-nu", "proxy selections per image, 0 = K2"},
      {"large.stage1_tau", "stage1-tau", "out-edges per image in stage one"},
      {"large.stage1_use_groups", "stage1-use-groups", "group constraint in stage one"},
      {"large.global_prefilter", "global-prefilter", "prefilter stage-one neighbours over the whole collection"},
      {"evaluate.source", "source", "standard | large"},
      {"evaluate.iou_threshold", "iou-threshold", "CorLoc IoU threshold"},
      {"evaluate.zeta", "zeta", "detection-rate IoU threshold"},
  };
  return fields;
}

void set_config_field(PipelineConfig& config, std::string_view key, std::string_view value) {
  json doc = to_doc(config);
  const json::json_pointer ptr(pointer_for(key));
  if (!doc.contains(ptr) || doc[ptr].is_object()) bad_field(std::string(key), "unknown field");
  const json& slot = doc[ptr];
  const std::string text(value);
  json parsed;
  if (slot.is_number_unsigned()) {
    std::uint64_t u = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), u);
    if (ec != std::errc() || p != text.data() + text.size()) {
      bad_field(std::string(key), "'" + text + "' is not a nonnegative integer");
    }
    parsed = u;
  } else if (slot.is_number_float()) {
    char* end = nullptr;
    const double d = std::strtod(text.c_str(), &end);
    if (text.empty() || end != text.c_str() + text.size()) bad_field(std::string(key), "'" + text + "' is not a number");
    parsed = d;
  } else if (slot.is_boolean()) {
    if (text == "true" || text == "1" || text == "yes" || text == "on") {
      parsed = true;
    } else if (text == "false" || text == "0" || text == "no" || text == "off") {
      parsed = false;
    } else {
      bad_field(std::string(key), "'" + text + "' is not a boolean");
    }
  } else if (slot.is_array()) {
    parsed = json::array();
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t comma = text.find(',', start);
      const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (!item.empty()) parsed.push_back(item);
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  } else {
    parsed = text;
  }
  doc[ptr] = parsed;
  config = from_doc(doc);
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage, std::uint64_t run) {
  std::uint64_t z = seed ^ fnv1a64(stage);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z + run;
}

}  // namespace rosd
