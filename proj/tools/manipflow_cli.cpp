// Command-line front end: one subcommand per pipeline stage plus the
// synthetic scene generator and scorer.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "manipflow/io.hpp"
#include "manipflow/pipeline.hpp"
#include "manipflow/synth.hpp"

namespace fs = std::filesystem;
using namespace manipflow;

namespace {

struct StageArgs {
  std::string config;
  std::string run_dir;
  std::vector<std::string> overrides;
  bool quiet = false;
};

void add_stage_options(CLI::App* cmd, StageArgs& args) {
  cmd->add_option("config,--config", args.config, "Pipeline config JSON (a run manifest also works)");
  cmd->add_option("--run", args.run_dir, "Run directory; overrides the config's output");
  cmd->add_option("--set", args.overrides, "Override a config value, e.g. contacts.contact_dist=0.03");
  cmd->add_flag("-q,--quiet", args.quiet, "Only print errors");
}

PipelineConfig resolve_config(const StageArgs& args) {
  std::string text;
  if (!args.config.empty()) {
    text = io::read_text(args.config);
  } else if (!args.run_dir.empty() && fs::exists(fs::path(args.run_dir) / artifacts::kManifest)) {
    text = io::read_text(fs::path(args.run_dir) / artifacts::kManifest);
  } else {
    throw config_error("no config given and no manifest found; pass a config file or --run of an earlier run");
  }
  std::vector<std::string> overrides = args.overrides;
  if (!args.run_dir.empty()) overrides.push_back("output=\"" + args.run_dir + "\"");
  return config_from_json(apply_overrides(text, overrides));
}

int run_stages(const std::vector<Stage>& stages, const StageArgs& args) {
  const Stage first = stages.front();
  PipelineConfig config;
  try {
    config = resolve_config(args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.kind() == ErrorKind::Input ? 3 : 2;
  }
  const Logger log = args.quiet ? Logger{} : Logger([](const std::string& m) { std::cerr << m << "\n"; });
  Stage current = first;
  try {
    for (Stage s : stages) {
      current = s;
      run_stage(s, config, log);
    }
  } catch (const PipelineError& e) {
    std::cerr << "error [" << stage_name(e.stage()) << ", " << to_string(e.kind()) << "]: " << e.what() << "\n";
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error [" << stage_name(current) << "]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense scene tracking and manipulated-object extraction from depth sequences"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  StageArgs stage_args;
  std::vector<std::pair<CLI::App*, std::vector<Stage>>> stage_cmds;
  auto add_stage = [&](const char* name, const char* help, std::vector<Stage> stages) {
    auto* cmd = app.add_subcommand(name, help);
    add_stage_options(cmd, stage_args);
    stage_cmds.emplace_back(cmd, std::move(stages));
  };
  add_stage("track", "Track the first frame through the sequence", {Stage::Track});
  add_stage("segment-actor", "Label actor points of the tracked model", {Stage::SegmentActor});
  add_stage("contacts", "Detect actor/background contact events", {Stage::Contacts});
  add_stage("segment-objects", "Segment the manipulated object of every contact event", {Stage::SegmentObjects});
  add_stage("run", "All stages in order",
            {Stage::Track, Stage::SegmentActor, Stage::Contacts, Stage::SegmentObjects});

  synth::ScenarioConfig scenario;
  std::string synth_out, scenario_file;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic scenario (frames, truth, config)");
  synth_cmd->add_option("scenario", scenario.scenario, "pitcher | drawer | door | two_box | static");
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--scenario-config", scenario_file, "Scenario JSON; flags given after it override");
  synth_cmd->add_option("--frames", scenario.num_frames, "Number of frames");
  synth_cmd->add_option("--noise", scenario.noise_sigma, "Noise sigma in meters");
  synth_cmd->add_option("--seed", scenario.seed, "Noise seed");
  synth_cmd->add_option("--spacing", scenario.spacing, "Surface sampling step in meters");
  synth_cmd->add_option("--contact-dist", scenario.contact_dist, "Contact distance for the truth interval");

  std::string score_run, score_truth, score_out;
  auto* score_cmd = app.add_subcommand("score", "Compare a run against synthetic ground truth");
  score_cmd->add_option("run", score_run, "Run directory")->required();
  score_cmd->add_option("truth", score_truth, "truth.json written by synth")->required();
  score_cmd->add_option("--out", score_out, "Also write the metrics JSON here");

  CLI11_PARSE(app, argc, argv);

  for (const auto& [cmd, stages] : stage_cmds)
    if (cmd->parsed()) return run_stages(stages, stage_args);

  try {
    if (synth_cmd->parsed()) {
      if (!scenario_file.empty()) {
        // the file supplies defaults; explicit flags still win
        auto from_file = synth::scenario_from_json(io::read_text(scenario_file));
        if (synth_cmd->count("scenario")) from_file.scenario = scenario.scenario;
        if (synth_cmd->count("--frames")) from_file.num_frames = scenario.num_frames;
        if (synth_cmd->count("--noise")) from_file.noise_sigma = scenario.noise_sigma;
        if (synth_cmd->count("--seed")) from_file.seed = scenario.seed;
        if (synth_cmd->count("--spacing")) from_file.spacing = scenario.spacing;
        if (synth_cmd->count("--contact-dist")) from_file.contact_dist = scenario.contact_dist;
        scenario = from_file;
      }
      write_synthetic_dataset(scenario, synth_out);
      std::cerr << "wrote " << scenario.scenario << " scenario to " << synth_out << "\n";
      return 0;
    }
    if (score_cmd->parsed()) {
      const auto truth = synth::truth_from_json(io::read_text(score_truth));
      const auto metrics = synth::score(load_run(score_run), truth);
      const auto text = synth::metrics_to_json(metrics);
      std::cout << text;
      if (!score_out.empty()) io::write_text(score_out, text);
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    switch (e.kind()) {
      case ErrorKind::Config: return 2;
      case ErrorKind::Input: return 3;
      case ErrorKind::Dependency: return 4;
      default: return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
