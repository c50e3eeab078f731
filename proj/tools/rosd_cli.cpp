// rosd: object discovery pipeline over a state directory.
//
//   rosd synth --state-dir run --images 40 --classes 4 --seed 1
//   rosd propose --state-dir run
//   rosd score --state-dir run
//   rosd discover --state-dir run --nu 5 --tau 10
//   rosd evaluate --state-dir run
//
// Exit codes: 0 success, 2 invalid input or configuration, 1 runtime failure.

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "rosd/errors.hpp"
#include "rosd/pipeline.hpp"

namespace {

bool is_validation_error(rosd::ErrorCode code) {
  using rosd::ErrorCode;
  switch (code) {
    case ErrorCode::IoFailure:
    case ErrorCode::EmptySelection:
    case ErrorCode::ZeroNormAtMaximum:
    case ErrorCode::EmptyAfterFloor:
      return false;
    default:
      return true;
  }
}

struct Invocation {
  std::string state_dir;
  std::string config_path;
  bool csv = false;
  std::map<std::string, std::string> overrides;  // config key -> flag text
};

void add_common_options(CLI::App* cmd, Invocation& inv) {
  cmd->add_option("--state-dir", inv.state_dir, "state directory (default: $ROSD_STATE_DIR)");
  cmd->add_option("--config", inv.config_path, "YAML or JSON config; flags take precedence");
  for (const auto& field : rosd::config_fields()) {
    cmd->add_option_function<std::string>(
        "--" + field.flag, [&inv, key = field.key](const std::string& v) { inv.overrides[key] = v; }, field.help);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised object discovery over a state directory of feature tensors"};
  app.require_subcommand(1);
  Invocation inv;

  const char* stages[] = {"synth", "propose", "score", "discover", "discover-large", "evaluate"};
  const char* descriptions[] = {
      "generate a synthetic planted-object collection",
      "generate region proposals and region descriptors",
      "prefilter neighbours and compute sparse score matrices",
      "run single-stage discovery",
      "run two-stage discovery under a memory budget",
      "score solutions against ground truth",
  };
  std::map<std::string, CLI::App*> commands;
  for (std::size_t s = 0; s < std::size(stages); ++s) {
    CLI::App* cmd = app.add_subcommand(stages[s], descriptions[s]);
    add_common_options(cmd, inv);
    commands[stages[s]] = cmd;
  }
  commands["evaluate"]->add_flag("--csv", inv.csv, "print CSV instead of a table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  std::string stage;
  for (const auto& [name, cmd] : commands) {
    if (cmd->parsed()) stage = name;
  }

  try {
    if (inv.state_dir.empty()) {
      if (const char* env = std::getenv("ROSD_STATE_DIR")) inv.state_dir = env;
    }
    if (inv.state_dir.empty()) {
      throw rosd::Error(rosd::ErrorCode::InvalidArgument, "no state directory: pass --state-dir or set ROSD_STATE_DIR");
    }
    rosd::PipelineConfig config;
    if (!inv.config_path.empty()) config = rosd::load_config_file(inv.config_path);
    for (const auto& [key, value] : inv.overrides) rosd::set_config_field(config, key, value);

    const rosd::fs::path dir(inv.state_dir);
    if (stage == "synth") {
      rosd::fs::create_directories(dir);
    } else if (!rosd::fs::is_directory(dir)) {
      throw rosd::Error(rosd::ErrorCode::InvalidArgument, "state directory " + dir.string() + " does not exist");
    }

    rosd::Pipeline pipeline(dir, config, std::cerr);
    if (stage == "synth") pipeline.synth();
    if (stage == "propose") pipeline.propose();
    if (stage == "score") pipeline.score();
    if (stage == "discover") pipeline.discover();
    if (stage == "discover-large") pipeline.discover_large();
    if (stage == "evaluate") pipeline.evaluate(std::cout, inv.csv);
  } catch (const rosd::Error& e) {
    std::cerr << "rosd " << stage << ": " << e.what() << "\n";
    return is_validation_error(e.code()) ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "rosd " << stage << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
