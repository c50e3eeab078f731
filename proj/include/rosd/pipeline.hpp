#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "rosd/tensor_store.hpp"

namespace rosd {

/// Every tunable of the pipeline. Serialises to a JSON document whose
/// canonical text defines the content hash.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::size_t runs = 1;          // discovery repetitions, one derived seed each
  std::size_t workers = 0;       // 0 = hardware concurrency; never affects results
  std::string setting = "discovery";  // or "colocalization": neighbours restricted to the same class

  struct Synth {
    std::size_t images = 40;
    std::size_t classes = 4;
    double noise = 0.0;
    double part_contrast = 1.0;
    std::size_t grid = 16;
    std::size_t depth = 32;
    std::size_t image_size = 256;
    std::size_t min_objects = 1;
    std::size_t max_objects = 3;
    bool distractor = true;
  } synth;

  struct Proposals {
    double alpha = 0.3;
    double beta = 0.5;
    std::size_t max_maxima = 20;
    std::size_t threshold_count = 50;
    std::string mask_rule = "conjunction";  // or "disjunction"
    std::string mean_scope = "all";         // or "retained"
    std::vector<std::string> layers = {"relu4_3", "relu5_3"};
    std::string pool_layer = "relu5_3";
    std::size_t pool_grid = 3;
  } proposals;

  struct Score {
    std::size_t neighbors = 50;  // N_max
    std::size_t entries = 1000;  // K
  } score;

  struct Discover {
    std::size_t nu = 5;
    std::size_t tau = 10;
    bool use_groups = true;
    std::size_t max_sweeps = 50;
    std::string postprocess = "single";  // or "multi"
    double nms_iou = 0.7;
    std::size_t max_regions = 5;
  } discover;

  struct Large {
    std::size_t parts = 5;
    std::uint64_t memory_limit = 0;   // 0 = n * neighbors * stage2_entries
    std::size_t stage2_entries = 50;  // K2 when memory_limit is 0
    std::size_t stage1_nu = 0;        // 0 = K2
    std::size_t stage1_tau = 10;
    bool stage1_use_groups = true;
    bool global_prefilter = false;
  } large;

  struct Evaluate {
    std::string source = "standard";  // or "large"
    double iou_threshold = 0.5;
    double zeta = 0.5;                // detection-rate threshold
  } evaluate;
};

std::string config_to_json(const PipelineConfig& config, bool include_workers = true);
// Missing fields keep their defaults; unknown fields and wrong types throw
// InvalidArgument naming the offending key.
PipelineConfig config_from_json(std::string_view text);
// YAML or JSON, chosen by file extension (.yaml/.yml vs anything else).
PipelineConfig load_config_file(const fs::path& path, const PipelineConfig& base = {});
void validate_config(const PipelineConfig& config);

/// A leaf of the config document exposed as a command-line flag.
struct ConfigField {
  std::string key;   // dotted path, e.g. "discover.nu"
  std::string flag;  // long flag name without dashes, e.g. "nu"
  std::string help;
};

const std::vector<ConfigField>& config_fields();
// Parses `value` according to the type of the field; lists are
// comma-separated.
void set_config_field(PipelineConfig& config, std::string_view key, std::string_view value);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t value);

// Per-stage seed: splitmix64(seed ^ fnv1a64(stage)) + run.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage, std::uint64_t run = 0);

enum class StageStatus { Ran, UpToDate };

/// Stage runner over a state directory. Every stage records a stamp with a
/// hash of its config slice and of its upstream stamp; a stage whose stamp
/// matches and whose outputs exist is skipped.
class Pipeline {
 public:
  Pipeline(fs::path state_dir, PipelineConfig config, std::ostream& log);

  StageStatus synth();
  StageStatus propose();
  StageStatus score();
  StageStatus discover();
  StageStatus discover_large();
  StageStatus evaluate(std::ostream& out, bool csv = false);

  const fs::path& state_dir() const { return dir_; }
  std::string stage_hash(std::string_view stage) const;

 private:
  fs::path dir_;
  PipelineConfig config_;
  std::ostream& log_;
  std::size_t workers_;
};

}  // namespace rosd
