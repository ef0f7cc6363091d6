#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "manipflow/contact.hpp"
#include "manipflow/error.hpp"
#include "manipflow/object.hpp"
#include "manipflow/registration.hpp"
#include "manipflow/synth.hpp"

namespace manipflow {

inline constexpr const char* kVersion = "0.1.0";

enum class InputFormat { Auto, Ply, Rgbd };

struct ActorConfig {
  double radius = 0.05;
  std::string select = "largest";  // largest | closest-to | seed
  std::optional<Vec3> seed;        // required by closest-to and seed
};

struct PipelineConfig {
  std::filesystem::path input;
  InputFormat input_format = InputFormat::Auto;
  std::filesystem::path output = "run";

  double depth_scale = 1000.0;  // raw depth units per meter
  double max_depth = 4.0;
  int normal_k = 10;
  double voxel_leaf = 0.005;    // 0 keeps frame 0 verbatim as the model

  RegistrationParams registration;
  ActorConfig actor;
  ContactParams contacts;
  ObjectParams objects;

  void validate() const;
};

/// Parses a config; a run manifest is accepted too (its "config" member is used).
/// Unknown keys are rejected.
PipelineConfig config_from_json(const std::string& text);
std::string config_to_json(const PipelineConfig& config);

/// Applies "section.key=value" overrides to a config JSON document.
std::string apply_overrides(const std::string& config_json, const std::vector<std::string>& assignments);

enum class Stage { Track, SegmentActor, Contacts, SegmentObjects };

const char* stage_name(Stage stage);
Stage stage_from_name(const std::string& name);

/// Stage failure; `kind` keeps the underlying error class.
class PipelineError : public Error {
 public:
  PipelineError(Stage stage, ErrorKind kind, const std::string& what)
      : Error(kind, what), stage_(stage) {}
  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

/// 2 config, 3 input, 4 missing upstream artifact, otherwise 10 + stage.
int exit_code(const PipelineError& error);

using Logger = std::function<void(const std::string&)>;

/// Fixed artifact names inside the run directory.
namespace artifacts {
inline constexpr const char* kModel = "model.ply";
inline constexpr const char* kTrajectories = "trajectories.csv";
inline constexpr const char* kLabels = "labels.json";
inline constexpr const char* kContacts = "contacts.json";
inline constexpr const char* kManifest = "manifest.json";
std::string object_json(std::size_t k);
}  // namespace artifacts

/// Loads the input sequence (PLY directory or RGBD directory), estimating
/// normals where missing.
std::vector<PointCloud> load_frames(const PipelineConfig& config);

/// Recomputes one stage from the artifacts already in config.output.
void run_stage(Stage stage, const PipelineConfig& config, const Logger& log = {});

/// All stages in order; identical to calling run_stage for each.
void run_pipeline(const PipelineConfig& config, const Logger& log = {});

/// Reads trajectories, labels, contacts and object results of a finished run.
synth::RunOutputs load_run(const std::filesystem::path& run_dir);

/// Writes frames/frame_XXXX.ply, truth.json, scenario.json and a matching
/// pipeline config (config.json, output in dir/run) for a canned scenario.
void write_synthetic_dataset(const synth::ScenarioConfig& scenario, const std::filesystem::path& dir);

}  // namespace manipflow
